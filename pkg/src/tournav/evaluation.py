"""Episode batching, SR / SPL / latency metrics, and report emission.

A suite runs one goal-finding call per instruction (judged against the
world's instruction tag) and a batch of random-start episodes per
instruction, then aggregates the success-rate / SPL report.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import FormatError, ValidationError
from .geometry import Pose2, euclidean
from .goalfinder import (
    PARSE_OK,
    GoalFinderConfig,
    Instruction,
    VlmClient,
    find_goal,
)
from .localization import DescriptorIndex, LocalizationContext
from .policy import EpisodeRecord, PolicyConfig, run_episode
from .sim import NO_NOISE, NoiseModel, World, render
from .topograph import TopoGraph
from .tour import Tour

REPORT_FORMAT_VERSION = 1


def make_context(world: World, tour: Tour) -> LocalizationContext:
    return LocalizationContext(
        index=DescriptorIndex.from_tour(tour),
        tour=tour,
        camera=world.camera,
        landmarks=world.landmark_map(),
    )


def spl(episodes: Sequence[EpisodeRecord]) -> float:
    """Success weighted by Path Length.

    (1/N) * sum_i S_i * l_i / max(p_i, l_i); an episode that starts at the
    goal (l_i = 0) contributes its bare success indicator.
    """
    if not episodes:
        raise ValidationError("spl requires at least one episode")
    total = 0.0
    for ep in episodes:
        s = 1.0 if ep.success else 0.0
        if ep.shortest_length == 0.0:
            total += s
        else:
            total += s * ep.shortest_length / max(ep.executed_length, ep.shortest_length)
    return total / len(episodes)


@dataclass(frozen=True)
class SuiteInstruction:
    text: str
    image_pose: Optional[Pose2] = None
    category: str = "all"


@dataclass(frozen=True)
class SuiteConfig:
    starts_per_instruction: int = 4
    seed: int = 0
    noise: NoiseModel = NO_NOISE
    goal_radius: float = 2.0
    min_start_dist: float = 20.0
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    goalfinder: GoalFinderConfig = field(default_factory=GoalFinderConfig)
    oracle_localization: bool = False
    workers: int = 1


@dataclass
class InstructionOutcome:
    text: str
    category: str
    goal_index: Optional[int]
    parse_status: str
    goal_finding_correct: bool


@dataclass
class CategoryMetrics:
    goal_finding_sr: float
    goal_reaching_sr: float
    end_to_end_sr: float
    spl: float
    mean_step_latency: float
    instructions: int
    episodes: int


@dataclass
class Report:
    categories: Dict[str, CategoryMetrics]
    instruction_outcomes: List[InstructionOutcome]
    episodes: List[EpisodeRecord]


def _effective_start_dist(world: World, min_start_dist: float) -> float:
    # scale the paper-sized default down when the world cannot hold it
    diag = math.hypot(world.bounds.width, world.bounds.height)
    return min(min_start_dist, 0.45 * diag)


def sample_start(
    rng: np.random.Generator, world: World, goal_pose: Pose2, min_dist: float
) -> Pose2:
    eff = min_dist
    for attempt in range(2000):
        x = float(rng.uniform(world.bounds.xmin, world.bounds.xmax))
        y = float(rng.uniform(world.bounds.ymin, world.bounds.ymax))
        theta = float(rng.uniform(-math.pi, math.pi))
        if math.hypot(x - goal_pose.x, y - goal_pose.y) >= eff:
            return Pose2(x, y, theta)
        if attempt and attempt % 500 == 0:
            eff *= 0.5
    raise ValidationError("could not sample a start pose away from the goal")


def run_suite(
    world: World,
    tour: Tour,
    graph: TopoGraph,
    client: VlmClient,
    instructions: Optional[Sequence[SuiteInstruction]] = None,
    cfg: SuiteConfig = SuiteConfig(),
) -> Report:
    """Goal finding plus episode batches for every instruction.

    Deterministic under cfg.seed with scripted or oracle clients: all
    random draws happen up front in instruction order, so the worker count
    does not change results.
    """
    ctx = make_context(world, tour)
    if instructions is None:
        instructions = [
            SuiteInstruction(text=t.text, image_pose=t.image_pose)
            for t in world.instruction_tags
        ]
    if not instructions:
        raise ValidationError("run_suite requires at least one instruction")
    rng = np.random.default_rng(cfg.seed)
    min_dist = _effective_start_dist(world, cfg.min_start_dist)

    outcomes: List[InstructionOutcome] = []
    jobs: List[Tuple[SuiteInstruction, InstructionOutcome, Optional[int], Pose2, int]] = []
    for ins in instructions:
        image = None
        if ins.image_pose is not None:
            image = render(world, ins.image_pose, NO_NOISE, seed=0)
        decision = find_goal(
            client, tour, Instruction(ins.text, image), cfg.goalfinder
        )
        tag = world.tag_for(ins.text)
        correct = False
        if decision.parse_status == PARSE_OK and tag is not None:
            chosen_pose = tour.frame(decision.goal_index).pose
            if chosen_pose is not None:
                correct = euclidean(chosen_pose, tag.goal_pose) <= cfg.goal_radius
        outcome = InstructionOutcome(
            text=ins.text,
            category=ins.category,
            goal_index=decision.goal_index,
            parse_status=decision.parse_status,
            goal_finding_correct=correct,
        )
        outcomes.append(outcome)
        anchor = tag.goal_pose if tag is not None else None
        for _ in range(cfg.starts_per_instruction):
            goal_pose = None
            if decision.goal_index is not None:
                goal_pose = tour.frame(decision.goal_index).pose
            ref = goal_pose or anchor or Pose2(0.0, 0.0, 0.0)
            start = sample_start(rng, world, ref, min_dist)
            seed = int(rng.integers(0, 2**31 - 1))
            jobs.append((ins, outcome, decision.goal_index, start, seed))

    def run_job(job) -> EpisodeRecord:
        ins, outcome, goal_index, start, seed = job
        if goal_index is None:
            ep = EpisodeRecord(
                instruction=ins.text,
                goal_index=-1,
                start=start,
                success=False,
                executed_length=0.0,
                shortest_length=0.0,
                steps=0,
                per_step_latency=[],
                failure_reason="no_goal",
                status="failed",
                poses=[start],
            )
        else:
            ep = run_episode(
                world,
                graph,
                ctx,
                start,
                goal_index,
                cfg=cfg.policy,
                noise=cfg.noise,
                seed=seed,
                instruction=ins.text,
                oracle_localization=cfg.oracle_localization,
            )
        ep.goal_finding_correct = outcome.goal_finding_correct
        return ep

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            episodes = list(pool.map(run_job, jobs))
    else:
        episodes = [run_job(j) for j in jobs]

    categories: Dict[str, CategoryMetrics] = {}
    names = sorted({o.category for o in outcomes})
    keys = names + ["overall"] if names != ["all"] else ["overall"]
    for name in keys:
        if name == "overall":
            outs = outcomes
            eps = episodes
        else:
            outs = [o for o in outcomes if o.category == name]
            eps = [e for e, j in zip(episodes, jobs) if j[1].category == name]
        categories[name] = _metrics(outs, eps)
    return Report(categories=categories, instruction_outcomes=outcomes, episodes=episodes)


def _metrics(
    outcomes: Sequence[InstructionOutcome], episodes: Sequence[EpisodeRecord]
) -> CategoryMetrics:
    gf = sum(1 for o in outcomes if o.goal_finding_correct) / len(outcomes)
    gr = sum(1 for e in episodes if e.success) / len(episodes)
    e2e_terms = []
    spl_total = 0.0
    for e in episodes:
        s = e.success and bool(e.goal_finding_correct)
        e2e_terms.append(1.0 if s else 0.0)
        if s:
            if e.shortest_length == 0.0:
                spl_total += 1.0
            else:
                spl_total += e.shortest_length / max(e.executed_length, e.shortest_length)
    lat = [t for e in episodes for t in e.per_step_latency]
    return CategoryMetrics(
        goal_finding_sr=gf,
        goal_reaching_sr=gr,
        end_to_end_sr=sum(e2e_terms) / len(episodes),
        spl=spl_total / len(episodes),
        mean_step_latency=float(np.mean(lat)) if lat else 0.0,
        instructions=len(outcomes),
        episodes=len(episodes),
    )


# ---------------------------------------------------------------------------
# Report emission


def _pose_to_dict(p: Pose2) -> dict:
    return {"x": p.x, "y": p.y, "theta": p.theta}


def _pose_from_dict(d: dict) -> Pose2:
    return Pose2(float(d["x"]), float(d["y"]), float(d["theta"]))


def _episode_to_dict(e: EpisodeRecord) -> dict:
    return {
        "instruction": e.instruction,
        "goal_index": e.goal_index,
        "start": _pose_to_dict(e.start),
        "success": e.success,
        "executed_length": e.executed_length,
        "shortest_length": e.shortest_length,
        "steps": e.steps,
        "per_step_latency": list(e.per_step_latency),
        "failure_reason": e.failure_reason,
        "status": e.status,
        "poses": [_pose_to_dict(p) for p in e.poses],
        "goal_finding_correct": e.goal_finding_correct,
    }


def _episode_from_dict(d: dict) -> EpisodeRecord:
    return EpisodeRecord(
        instruction=d["instruction"],
        goal_index=int(d["goal_index"]),
        start=_pose_from_dict(d["start"]),
        success=bool(d["success"]),
        executed_length=float(d["executed_length"]),
        shortest_length=float(d["shortest_length"]),
        steps=int(d["steps"]),
        per_step_latency=[float(t) for t in d["per_step_latency"]],
        failure_reason=d["failure_reason"],
        status=d["status"],
        poses=[_pose_from_dict(p) for p in d["poses"]],
        goal_finding_correct=d["goal_finding_correct"],
    )


def report_to_dict(report: Report) -> dict:
    return {
        "version": REPORT_FORMAT_VERSION,
        "categories": {
            name: vars(m).copy() for name, m in report.categories.items()
        },
        "instruction_outcomes": [vars(o).copy() for o in report.instruction_outcomes],
        "episodes": [_episode_to_dict(e) for e in report.episodes],
    }


def report_from_dict(doc: dict) -> Report:
    if doc.get("version") != REPORT_FORMAT_VERSION:
        raise FormatError(f"unsupported report version {doc.get('version')!r}")
    return Report(
        categories={
            name: CategoryMetrics(**m) for name, m in doc["categories"].items()
        },
        instruction_outcomes=[
            InstructionOutcome(**o) for o in doc["instruction_outcomes"]
        ],
        episodes=[_episode_from_dict(e) for e in doc["episodes"]],
    )


def emit_report(report: Report, path: str, format: str = "json") -> None:
    if not report.episodes:
        raise ValidationError("cannot emit a report with no episodes")
    if format == "json":
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(report_to_dict(report), fh, sort_keys=True)
            fh.write("\n")
    elif format == "csv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [
                    "instruction", "goal_index", "start_x", "start_y", "start_theta",
                    "success", "goal_finding_correct", "executed_length",
                    "shortest_length", "steps", "mean_step_latency",
                    "status", "failure_reason",
                ]
            )
            for e in report.episodes:
                lat = float(np.mean(e.per_step_latency)) if e.per_step_latency else 0.0
                writer.writerow(
                    [
                        e.instruction, e.goal_index, e.start.x, e.start.y, e.start.theta,
                        int(e.success), e.goal_finding_correct, e.executed_length,
                        e.shortest_length, e.steps, lat, e.status,
                        e.failure_reason or "",
                    ]
                )
    else:
        raise ValidationError(f"unknown report format {format!r}")


def load_report(path: str) -> Report:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"cannot read report {path}: {e}") from e
    return report_from_dict(doc)


def emit_trajectory_svg(
    episode: EpisodeRecord,
    world: World,
    path: str,
    tour: Optional[Tour] = None,
) -> None:
    """Top-down plot: walls, landmarks, tour path, episode path, start/goal."""
    b = world.bounds
    scale = 20.0
    pad = 20.0
    width = b.width * scale + 2 * pad
    height = b.height * scale + 2 * pad

    def sx(x: float) -> float:
        return pad + (x - b.xmin) * scale

    def sy(y: float) -> float:
        return pad + (b.ymax - y) * scale  # y up in world, down in SVG

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}">',
        f'<rect x="{sx(b.xmin):.1f}" y="{sy(b.ymax):.1f}" width="{b.width * scale:.1f}" '
        f'height="{b.height * scale:.1f}" fill="white" stroke="black"/>',
    ]
    for lm in world.landmarks:
        lines.append(
            f'<circle cx="{sx(lm.position[0]):.1f}" cy="{sy(lm.position[1]):.1f}" '
            'r="1.5" fill="#bbbbbb"/>'
        )
    for (a, c) in world.walls:
        lines.append(
            f'<line x1="{sx(a[0]):.1f}" y1="{sy(a[1]):.1f}" x2="{sx(c[0]):.1f}" '
            f'y2="{sy(c[1]):.1f}" stroke="black" stroke-width="3"/>'
        )
    if tour is not None and len(tour) > 0:
        pts = " ".join(
            f"{sx(f.pose.x):.1f},{sy(f.pose.y):.1f}"
            for f in tour.frames
            if f.pose is not None
        )
        lines.append(
            f'<polyline points="{pts}" fill="none" stroke="#88aaff" stroke-width="1"/>'
        )
    if episode.poses:
        pts = " ".join(f"{sx(p.x):.1f},{sy(p.y):.1f}" for p in episode.poses)
        lines.append(
            f'<polyline points="{pts}" fill="none" stroke="#dd3333" stroke-width="2"/>'
        )
        start = episode.poses[0]
        lines.append(
            f'<circle cx="{sx(start.x):.1f}" cy="{sy(start.y):.1f}" r="5" fill="#33aa33"/>'
        )
        end = episode.poses[-1]
        lines.append(
            f'<circle cx="{sx(end.x):.1f}" cy="{sy(end.y):.1f}" r="5" fill="#dd3333"/>'
        )
    lines.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")
