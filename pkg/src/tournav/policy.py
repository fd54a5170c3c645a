"""Low-level goal-reaching policy.

Each timestep: localize the current observation, stop if the nearest
vertex is the goal vertex (vertex identity, never a distance threshold),
otherwise replan the shortest path and emit the waypoint action to the
first path successor. Replanning happens every step; no path caching.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from .errors import NoPathError, ValidationError
from .geometry import Pose2, WaypointAction, euclidean, relative_in_frame
from .localization import (
    LocalizationConfig,
    LocalizationContext,
    LocalizationResult,
    QueryObservation,
    localize,
    nearest_vertex,
)
from .sim import NO_NOISE, NoiseModel, World, execute, render
from .topograph import TopoGraph, path_cost, shortest_path

Localizer = Callable[[QueryObservation, Pose2], LocalizationResult]

STATUS_RUNNING = "running"
STATUS_REACHED = "reached"
STATUS_FAILED = "failed"

FAIL_MAX_STEPS = "max_steps"
FAIL_NO_PATH = "no_path"


@dataclass(frozen=True)
class PolicyConfig:
    localization: LocalizationConfig = field(default_factory=LocalizationConfig)
    success_radius: float = 1.0
    max_steps: Optional[int] = None  # None: 4 * shortest-path hops + 20
    max_steps_slack: int = 20
    max_steps_factor: int = 4


@dataclass
class PolicyState:
    goal_index: int
    last_pose: Pose2
    max_steps: int
    step: int = 0
    status: str = STATUS_RUNNING
    failure_reason: Optional[str] = None


@dataclass
class EpisodeRecord:
    """One navigation run, with everything SR/SPL scoring needs."""

    instruction: str
    goal_index: int
    start: Pose2
    success: bool
    executed_length: float
    shortest_length: float
    steps: int
    per_step_latency: List[float]
    failure_reason: Optional[str] = None
    status: str = STATUS_FAILED
    poses: List[Pose2] = field(default_factory=list)
    goal_finding_correct: Optional[bool] = None


def step(
    state: PolicyState,
    graph: TopoGraph,
    ctx: LocalizationContext,
    q: QueryObservation,
    cfg: PolicyConfig = PolicyConfig(),
    localizer: Optional[Localizer] = None,
) -> Tuple[PolicyState, Optional[WaypointAction]]:
    """One policy iteration; returns the updated state and the action, or
    None when the episode terminated (reached or failed)."""
    if state.status != STATUS_RUNNING:
        raise ValidationError(f"step on a terminated policy (status={state.status})")
    if localizer is not None:
        loc = localizer(q, state.last_pose)
    else:
        loc = localize(ctx, q, state.last_pose, cfg.localization)
    state.last_pose = loc.pose
    if loc.nearest_vertex == state.goal_index:
        state.status = STATUS_REACHED
        return state, None
    if state.step >= state.max_steps:
        state.status = STATUS_FAILED
        state.failure_reason = FAIL_MAX_STEPS
        return state, None
    try:
        path = shortest_path(graph, loc.nearest_vertex, state.goal_index)
    except NoPathError:
        state.status = STATUS_FAILED
        state.failure_reason = FAIL_NO_PATH
        return state, None
    successor = graph.pose_of(path[1])
    rel = relative_in_frame(loc.pose, successor)
    action = WaypointAction(rel.dx * graph.scale, rel.dy * graph.scale, rel.dtheta)
    state.step += 1
    return state, action


def default_max_steps(cfg: PolicyConfig, hops: int) -> int:
    if cfg.max_steps is not None:
        return cfg.max_steps
    return cfg.max_steps_factor * hops + cfg.max_steps_slack


def run_episode(
    world: World,
    graph: TopoGraph,
    ctx: LocalizationContext,
    start: Pose2,
    goal_index: int,
    cfg: PolicyConfig = PolicyConfig(),
    noise: NoiseModel = NO_NOISE,
    seed: int = 0,
    instruction: str = "",
    oracle_localization: bool = False,
) -> EpisodeRecord:
    """Run the observe / localize / plan / act loop until reached or failed.

    With oracle_localization the simulator ground-truth pose is injected in
    place of hierarchical localization, isolating the planner and the graph
    from localization quality.
    """
    graph.vertex(goal_index)  # validate
    rng = np.random.default_rng(seed)
    start_vertex = nearest_vertex(ctx, start)
    try:
        init_path = shortest_path(graph, start_vertex, goal_index)
        shortest_length = path_cost(graph, init_path)
        hops = len(init_path) - 1
    except NoPathError:
        init_path = None
        shortest_length = 0.0
        hops = 0
    state = PolicyState(
        goal_index=goal_index,
        last_pose=start,
        max_steps=default_max_steps(cfg, hops),
    )

    pose = start
    poses = [pose]
    latencies: List[float] = []

    localizer: Optional[Localizer] = None
    if oracle_localization:
        current = [pose]

        def localizer(q: QueryObservation, last: Pose2) -> LocalizationResult:
            true = current[0]
            return LocalizationResult(
                pose=true,
                nearest_vertex=nearest_vertex(ctx, true),
                inliers=len(q.observations),
                candidate=None,
                fallback=False,
            )

    while state.status == STATUS_RUNNING:
        obs_seed = int(rng.integers(0, 2**31 - 1))
        q = render(world, pose, noise, seed=obs_seed)
        t0 = time.perf_counter()
        state, action = step(state, graph, ctx, q, cfg, localizer=localizer)
        latencies.append(time.perf_counter() - t0)
        if action is None:
            break
        pose = execute(world, pose, action, noise, rng=rng)
        poses.append(pose)
        if oracle_localization:
            current[0] = pose

    executed_length = sum(
        math.hypot(b.x - a.x, b.y - a.y) for a, b in zip(poses, poses[1:])
    )
    goal_pose = graph.pose_of(goal_index)
    success = (
        state.status == STATUS_REACHED
        and euclidean(pose, goal_pose) <= cfg.success_radius
    )
    return EpisodeRecord(
        instruction=instruction,
        goal_index=goal_index,
        start=start,
        success=success,
        executed_length=executed_length,
        shortest_length=shortest_length,
        steps=state.step,
        per_step_latency=latencies,
        failure_reason=state.failure_reason,
        status=state.status,
        poses=poses,
    )
