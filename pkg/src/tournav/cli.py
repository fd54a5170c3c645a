"""Command-line surface tying the simulator, mapping, localization,
goal finding, and evaluation together."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from typing import List, Optional

import numpy as np

from . import evaluation, goalfinder, localization, policy, sim, topograph, tour as tourmod
from .config import Config
from .errors import FormatError, TournavError, TransportError, ValidationError
from .geometry import Pose2


def _pose_arg(values: List[float]) -> Pose2:
    return Pose2(values[0], values[1], values[2])


def make_client(spec: str, world: Optional[sim.World], cfg: Config):
    if spec == "oracle":
        if world is None:
            raise ValidationError("oracle client requires a world")
        return goalfinder.OracleClient(world)
    if spec.startswith("scripted:"):
        return goalfinder.ScriptedClient.from_file(spec[len("scripted:"):])
    if spec.startswith("remote:"):
        return goalfinder.RemoteVlmClient(
            spec[len("remote:"):],
            model=cfg.vlm_model,
            timeout=cfg.vlm_timeout,
            retries=cfg.retries,
            max_tokens=cfg.vlm_max_tokens,
        )
    raise ValidationError(
        f"unknown --vlm {spec!r}; expected oracle, scripted:<file> or remote:<url>"
    )


def load_instructions(path: Optional[str]) -> Optional[List[evaluation.SuiteInstruction]]:
    if path is None:
        return None
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"cannot read instructions {path}: {e}") from e
    out = []
    for entry in doc:
        pose = entry.get("image_pose")
        out.append(
            evaluation.SuiteInstruction(
                text=entry["text"],
                image_pose=None
                if pose is None
                else Pose2(float(pose["x"]), float(pose["y"]), float(pose["theta"])),
                category=entry.get("category", "all"),
            )
        )
    return out


def _print_json(doc) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


def _instruction_from_args(args, world: sim.World) -> goalfinder.Instruction:
    image = None
    if args.image_pose is not None:
        image = sim.render(world, _pose_arg(args.image_pose), sim.NO_NOISE, seed=0)
    return goalfinder.Instruction(text=args.instruction, image=image)


def cmd_gen_world(args, cfg: Config) -> None:
    spec = sim.WorldSpec(
        seed=args.seed,
        size=(args.size[0], args.size[1]),
        landmark_count=args.landmarks,
        wall_layout=args.walls,
        tag_count=args.tags,
    )
    world = sim.generate_world(spec)
    sim.save_world(world, args.output)
    print(f"wrote world with {len(world.landmarks)} landmarks, "
          f"{len(world.instruction_tags)} tags to {args.output}")


def cmd_gen_tour(args, cfg: Config) -> None:
    world = sim.load_world(args.world)
    route = sim.serpentine_route(
        world.bounds, frame_count=args.frames, row_spacing=args.row_spacing
    )
    t = sim.generate_tour(world, route, fps=args.fps)
    for spec in args.narrate or []:
        idx, _, text = spec.partition(":")
        t = tourmod.attach_narrative(t, int(idx), text)
    tourmod.save_tour(t, args.output)
    print(f"wrote {len(t)}-frame tour @ {t.fps} Hz to {args.output}")


def cmd_build_graph(args, cfg: Config) -> None:
    t = tourmod.load_tour(args.tour)
    g = topograph.build_graph(
        t,
        max_edge_dist=args.max_edge_dist if args.max_edge_dist is not None else cfg.max_edge_dist,
        front_half_angle=args.front_half_angle if args.front_half_angle is not None else cfg.front_half_angle,
        scale=args.scale if args.scale is not None else cfg.scale,
    )
    topograph.save_graph(g, args.output)
    print(f"wrote graph with {len(g.vertices)} vertices, {len(g.edges)} edges to {args.output}")


def cmd_localize(args, cfg: Config) -> None:
    world = sim.load_world(args.world)
    t = tourmod.load_tour(args.tour)
    ctx = evaluation.make_context(world, t)
    pose = _pose_arg(args.pose)
    last = _pose_arg(args.last) if args.last is not None else pose
    q = sim.render(world, pose, cfg.noise(), seed=args.seed)
    result = localization.localize(ctx, q, last, cfg.localization())
    _print_json(
        {
            "pose": {"x": result.pose.x, "y": result.pose.y, "theta": result.pose.theta},
            "nearest_vertex": result.nearest_vertex,
            "inliers": result.inliers,
            "candidate": result.candidate,
            "fallback": result.fallback,
        }
    )


def cmd_find_goal(args, cfg: Config) -> None:
    world = sim.load_world(args.world)
    t = tourmod.load_tour(args.tour)
    client = make_client(args.vlm, world, cfg)
    instr = _instruction_from_args(args, world)
    if args.dump_prompt:
        work = t
        gcfg = cfg.goalfinder()
        if gcfg.fps is not None and gcfg.fps < t.fps:
            work = tourmod.subsample(t, gcfg.fps)
        print(goalfinder.prompt_to_text(goalfinder.build_goal_prompt(work, instr)))
    decision = goalfinder.find_goal(client, t, instr, cfg.goalfinder())
    _print_json(
        {
            "goal_index": decision.goal_index,
            "parse_status": decision.parse_status,
            "raw_response": decision.raw_response,
        }
    )


def cmd_navigate(args, cfg: Config) -> None:
    world = sim.load_world(args.world)
    t = tourmod.load_tour(args.tour)
    g = topograph.load_graph(args.graph)
    ctx = evaluation.make_context(world, t)
    client = make_client(args.vlm, world, cfg)
    instr = _instruction_from_args(args, world)
    decision = goalfinder.find_goal(client, t, instr, cfg.goalfinder())
    if decision.goal_index is None:
        raise ValidationError(
            f"goal finding failed ({decision.parse_status}): {decision.raw_response!r}"
        )
    ep = policy.run_episode(
        world,
        g,
        ctx,
        _pose_arg(args.start),
        decision.goal_index,
        cfg=cfg.policy(),
        noise=cfg.noise(),
        seed=args.seed,
        instruction=args.instruction,
        oracle_localization=args.oracle_localization,
    )
    if args.svg:
        evaluation.emit_trajectory_svg(ep, world, args.svg, tour=t)
    _print_json(
        {
            "goal_index": ep.goal_index,
            "status": ep.status,
            "success": ep.success,
            "steps": ep.steps,
            "executed_length": ep.executed_length,
            "shortest_length": ep.shortest_length,
            "failure_reason": ep.failure_reason,
        }
    )


def cmd_eval(args, cfg: Config) -> None:
    world = sim.load_world(args.world)
    t = tourmod.load_tour(args.tour)
    g = topograph.load_graph(args.graph)
    client = make_client(args.vlm, world, cfg)
    instructions = load_instructions(args.instructions)
    suite_cfg = evaluation.SuiteConfig(
        starts_per_instruction=args.starts if args.starts is not None else cfg.starts_per_instruction,
        seed=args.seed,
        noise=cfg.noise(),
        goal_radius=cfg.goal_radius,
        min_start_dist=cfg.min_start_dist,
        policy=cfg.policy(),
        goalfinder=cfg.goalfinder(),
        oracle_localization=args.oracle_localization,
        workers=cfg.workers,
    )
    report = evaluation.run_suite(world, t, g, client, instructions, suite_cfg)
    evaluation.emit_report(report, args.output, "json")
    if args.csv:
        evaluation.emit_report(report, args.csv, "csv")
    _print_json(
        {name: dataclasses.asdict(m) for name, m in report.categories.items()}
    )


def cmd_ate(args, cfg: Config) -> None:
    world = sim.load_world(args.world)
    t = tourmod.load_tour(args.tour)
    ctx = evaluation.make_context(world, t)
    rng = np.random.default_rng(args.seed)
    frames = [f for f in t.frames if f.pose is not None]
    noise = cfg.noise()
    loc_cfg = cfg.localization()
    pairs = []
    last = frames[0].pose
    for _ in range(args.queries):
        f = frames[int(rng.integers(0, len(frames)))]
        gt = Pose2(
            f.pose.x + float(rng.uniform(-0.3, 0.3)),
            f.pose.y + float(rng.uniform(-0.3, 0.3)),
            f.pose.theta + float(rng.uniform(-0.2, 0.2)),
        )
        x, y = world.bounds.clamp(gt.x, gt.y)
        gt = Pose2(x, y, gt.theta)
        q = sim.render(world, gt, noise, seed=int(rng.integers(0, 2**31 - 1)))
        result = localization.localize(ctx, q, last, loc_cfg)
        pairs.append((result.pose, gt))
        last = gt
    stats = localization.evaluate_ate(pairs)
    _print_json({"median": stats["median"], "mean": stats["mean"], "queries": len(pairs)})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tournav",
        description="Tour-based topological navigation in a synthetic landmark world",
    )
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--config", default=None, help="JSON file overriding defaults")
    parser.add_argument(
        "--vlm",
        default="oracle",
        help="goal-finder client: oracle | scripted:<file> | remote:<url>",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-world", help="generate a deterministic landmark world")
    p.add_argument("--size", type=float, nargs=2, default=[40.0, 20.0], metavar=("W", "H"))
    p.add_argument("--landmarks", type=int, default=300)
    p.add_argument("--walls", default="none", choices=["none", "cross"])
    p.add_argument("--tags", type=int, default=10)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gen_world)

    p = sub.add_parser("gen-tour", help="record a demonstration tour along the default route")
    p.add_argument("--world", required=True)
    p.add_argument("--frames", type=int, default=948)
    p.add_argument("--fps", type=float, default=1.0)
    p.add_argument("--row-spacing", type=float, default=3.0)
    p.add_argument("--narrate", action="append", metavar="INDEX:TEXT")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gen_tour)

    p = sub.add_parser("build-graph", help="build the topological graph from a posed tour")
    p.add_argument("--tour", required=True)
    p.add_argument("--max-edge-dist", type=float, default=None)
    p.add_argument("--front-half-angle", type=float, default=None)
    p.add_argument("--scale", type=float, default=None)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("localize", help="localize one rendered query observation")
    p.add_argument("--world", required=True)
    p.add_argument("--tour", required=True)
    p.add_argument("--pose", type=float, nargs=3, required=True, metavar=("X", "Y", "THETA"))
    p.add_argument("--last", type=float, nargs=3, default=None, metavar=("X", "Y", "THETA"))
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("find-goal", help="run the high-level goal finder")
    p.add_argument("--world", required=True)
    p.add_argument("--tour", required=True)
    p.add_argument("--instruction", required=True)
    p.add_argument("--image-pose", type=float, nargs=3, default=None, metavar=("X", "Y", "THETA"))
    p.add_argument("--dump-prompt", action="store_true")
    p.set_defaults(func=cmd_find_goal)

    p = sub.add_parser("navigate", help="run a single end-to-end episode")
    p.add_argument("--world", required=True)
    p.add_argument("--tour", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--instruction", required=True)
    p.add_argument("--image-pose", type=float, nargs=3, default=None, metavar=("X", "Y", "THETA"))
    p.add_argument("--start", type=float, nargs=3, required=True, metavar=("X", "Y", "THETA"))
    p.add_argument("--svg", default=None)
    p.add_argument("--oracle-localization", action="store_true")
    p.set_defaults(func=cmd_navigate)

    p = sub.add_parser("eval", help="run the full SR/SPL suite")
    p.add_argument("--world", required=True)
    p.add_argument("--tour", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--instructions", default=None)
    p.add_argument("--starts", type=int, default=None)
    p.add_argument("--csv", default=None)
    p.add_argument("--oracle-localization", action="store_true")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ate", help="localization accuracy sweep against ground truth")
    p.add_argument("--world", required=True)
    p.add_argument("--tour", required=True)
    p.add_argument("--queries", type=int, default=200)
    p.set_defaults(func=cmd_ate)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = Config.load(args.config)
        args.func(args, cfg)
    except TransportError as e:
        print(f"transport error: {e}", file=sys.stderr)
        return 2
    except TournavError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
