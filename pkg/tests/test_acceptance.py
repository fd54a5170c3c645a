"""Acceptance gate: one test per release criterion, at the stated tolerances.

The heavyweight fixtures (a 600-vertex tour for the success-rate suite and a
948-vertex tour for the latency budget) are module scoped so the whole file
stays within a couple of minutes.
"""

import math
import time

import numpy as np
import pytest

from conftest import make_plain_tour
from tournav.evaluation import SuiteConfig, make_context, run_suite
from tournav.geometry import Pose2, normalize_angle
from tournav.goalfinder import Instruction, OracleClient, build_action_prompt, build_goal_prompt, parse_goal, prompt_to_text
from tournav.localization import (
    evaluate_ate,
    localize,
    reprojection_jacobian,
    reprojection_residual,
    solve_pose,
)
from tournav.policy import PolicyConfig, run_episode
from tournav.sim import (
    DEFAULT_CAMERA,
    NO_NOISE,
    NoiseModel,
    WorldSpec,
    generate_tour,
    generate_world,
    render,
    serpentine_route,
)
from tournav.topograph import Edge, TopoGraph, Vertex, build_graph, path_cost, shortest_path

from test_goalfinder import (
    FAKE_IMAGE,
    TRANSCRIPT_CHAIN,
    TRANSCRIPT_CLARIFY,
    TRANSCRIPT_DIRECT,
    TRANSCRIPT_REFUSAL,
    golden,
)
from test_localization import random_scene


@pytest.fixture(scope="module")
def world():
    spec = WorldSpec(seed=7, size=(40.0, 20.0), landmark_count=600, tag_count=20)
    return generate_world(spec)


@pytest.fixture(scope="module")
def route(world):
    return serpentine_route(world.bounds, frame_count=600)


@pytest.fixture(scope="module")
def tour(world, route):
    return generate_tour(world, route)


@pytest.fixture(scope="module")
def graph(tour):
    return build_graph(tour)


@pytest.fixture(scope="module")
def ctx(world, tour):
    return make_context(world, tour)


@pytest.fixture(scope="module")
def suite_result(world, tour, graph):
    """Oracle goal-finder, zero noise, 20 instructions x 50 random starts."""
    assert len(graph.vertices) >= 500
    assert len(world.instruction_tags) == 20
    cfg = SuiteConfig(starts_per_instruction=50, seed=0)
    t0 = time.perf_counter()
    report = run_suite(world, tour, graph, OracleClient(world), None, cfg)
    elapsed = time.perf_counter() - t0
    return report, elapsed


def test_goal_reaching_success_rate_is_100_percent(suite_result):
    report, elapsed = suite_result
    overall = report.categories["overall"]
    assert overall.episodes == 1000
    assert overall.goal_finding_sr == 1.0
    failures = [e for e in report.episodes if not e.success]
    assert not failures, f"{len(failures)} of 1000 episodes failed"
    assert overall.goal_reaching_sr == 1.0
    assert overall.end_to_end_sr == 1.0
    assert elapsed < 120.0, f"suite took {elapsed:.1f}s, budget is 120s"


def test_spl_meets_hard_floor(suite_result):
    report, _ = suite_result
    assert report.categories["overall"].spl >= 0.8


def _ate_pairs(world, ctx, route, noise, n_queries, seed):
    rng = np.random.default_rng(seed)
    pairs = []
    last = route[0]
    for i in range(n_queries):
        base = route[int(rng.integers(0, len(route)))]
        gt = Pose2(
            *world.bounds.clamp(
                base.x + float(rng.uniform(-0.3, 0.3)),
                base.y + float(rng.uniform(-0.3, 0.3)),
            ),
            normalize_angle(base.theta + float(rng.uniform(-0.2, 0.2))),
        )
        q = render(world, gt, noise, seed=int(rng.integers(0, 2**31 - 1)))
        res = localize(ctx, q, last)
        pairs.append((res.pose, gt))
        last = gt
    return pairs


def test_localization_ate_with_noise_below_10cm(world, ctx, route):
    noise = NoiseModel(pixel_sigma=1.0, outlier_rate=0.1)
    pairs = _ate_pairs(world, ctx, route, noise, n_queries=200, seed=1)
    stats = evaluate_ate(pairs)
    assert stats["median"] < 0.1, f"noisy median ATE {stats['median']:.4f} m"


def test_localization_ate_noiseless_below_1mm(world, ctx, route):
    pairs = _ate_pairs(world, ctx, route, NO_NOISE, n_queries=200, seed=2)
    stats = evaluate_ate(pairs)
    assert stats["median"] < 1e-3, f"noiseless median ATE {stats['median']:.2e} m"


def _grid_search_pose(cam, points, pixels, center, half_xy=0.2, half_deg=4.0):
    """Independent brute-force pose oracle at 0.01 m / 0.5 deg resolution."""
    xs = center.x + np.arange(-half_xy, half_xy + 1e-9, 0.01)
    ys = center.y + np.arange(-half_xy, half_xy + 1e-9, 0.01)
    ts = center.theta + np.deg2rad(np.arange(-half_deg, half_deg + 1e-9, 0.5))
    X, Y, T = np.meshgrid(xs, ys, ts, indexing="ij")
    px, py, pt = X.ravel(), Y.ravel(), T.ravel()
    c, s = np.cos(pt)[:, None], np.sin(pt)[:, None]
    dx = points[None, :, 0] - px[:, None]
    dy = points[None, :, 1] - py[:, None]
    fwd = c * dx + s * dy
    left = -s * dx + c * dy
    up = points[None, :, 2] - cam.mount_height
    ok = fwd > 1e-9
    sf = np.where(ok, fwd, 1.0)
    ru = np.where(ok, cam.cx - cam.fx * left / sf - pixels[None, :, 0], 1e6)
    rv = np.where(ok, cam.cy - cam.fy * up / sf - pixels[None, :, 1], 1e6)
    cost = np.sum(ru * ru + rv * rv, axis=1)
    best = int(np.argmin(cost))
    return Pose2(float(px[best]), float(py[best]), normalize_angle(float(pt[best])))


def test_pose_solver_matches_oracle_on_random_scenes():
    rng = np.random.default_rng(3)
    cam = DEFAULT_CAMERA
    mask_matches = 0
    for trial in range(50):
        n = int(rng.integers(8, 13))
        gt_pose, corrs = random_scene(rng, n)
        # keep at least min_inliers clean correspondences so the solve is
        # well posed
        n_out = int(rng.integers(1, min(4, n - 5)))
        outlier_idx = set(int(i) for i in rng.choice(n, size=n_out, replace=False))
        corrupted = []
        for i, ((u, v), lm) in enumerate(corrs):
            if i in outlier_idx:
                corrupted.append(((u + float(rng.uniform(15, 60)),
                                   v + float(rng.uniform(15, 60))), lm))
            else:
                corrupted.append(((u, v), lm))
        est, mask = solve_pose(cam, corrupted)
        expected_mask = np.array([i not in outlier_idx for i in range(n)])
        if np.array_equal(mask, expected_mask):
            mask_matches += 1
        inliers = [corrupted[i] for i in range(n) if expected_mask[i]]
        pts = np.array([c[1].position for c in inliers])
        pix = np.array([c[0] for c in inliers])
        oracle = _grid_search_pose(cam, pts, pix, gt_pose)
        assert math.hypot(est.x - oracle.x, est.y - oracle.y) <= 0.02, f"trial {trial}"
        assert abs(normalize_angle(est.theta - oracle.theta)) <= math.radians(1.0)
    assert mask_matches >= 48, f"inlier mask exact in only {mask_matches}/50 trials"


def test_dijkstra_matches_exhaustive_enumeration_1000_graphs():
    rng = np.random.default_rng(4)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(2, 9))
        vertices = [Vertex(i, Pose2(float(i), 0.0, 0.0)) for i in range(1, n + 1)]
        edges = [
            Edge(s, t, float(rng.uniform(0.1, 5.0)))
            for s in range(1, n + 1)
            for t in range(1, n + 1)
            if s != t and rng.random() < 0.35
        ]
        g = TopoGraph(vertices=vertices, edges=edges)
        start, goal = 1, n

        best = [math.inf]

        def enumerate_paths(u, cost, visited):
            if cost >= best[0]:
                return
            if u == goal:
                best[0] = cost
                return
            for v, w in g.neighbors(u):
                if v not in visited:
                    enumerate_paths(v, cost + w, visited | {v})

        enumerate_paths(start, 0.0, {start})
        try:
            path = shortest_path(g, start, goal)
            found = path_cost(g, path)
        except Exception:
            found = math.inf
        if not math.isclose(found, best[0], rel_tol=1e-9, abs_tol=1e-9):
            if not (math.isinf(found) and math.isinf(best[0])):
                mismatches += 1
    assert mismatches == 0


def test_edge_rule_conformance_over_10000_pose_pairs():
    rng = np.random.default_rng(5)
    pairs_checked = 0
    violations = 0
    while pairs_checked < 10_000:
        n = 15
        poses = [
            Pose2(
                float(rng.uniform(-4, 4)),
                float(rng.uniform(-4, 4)),
                normalize_angle(float(rng.uniform(-math.pi, math.pi))),
            )
            for _ in range(n)
        ]
        base = make_plain_tour(n)
        from dataclasses import replace

        frames = tuple(replace(f, pose=poses[f.index - 1]) for f in base.frames)
        g = build_graph(replace(base, frames=frames))
        present = {(e.source, e.target) for e in g.edges}
        for s in range(1, n + 1):
            for t in range(1, n + 1):
                if s == t:
                    continue
                a, b = poses[s - 1], poses[t - 1]
                dist = math.hypot(b.x - a.x, b.y - a.y)
                if dist == 0.0:
                    ang = 0.0
                else:
                    ang = abs(normalize_angle(math.atan2(b.y - a.y, b.x - a.x) - a.theta))
                expected = dist <= 2.0 and ang < math.pi / 2
                if ((s, t) in present) != expected:
                    violations += 1
                pairs_checked += 1
    assert violations == 0


def test_prompt_templates_byte_match_golden_files():
    from tournav.tour import attach_narrative

    tour3 = attach_narrative(make_plain_tour(3), 2, "Lewis' desk")
    multi = Instruction("Where should I return this?", image=FAKE_IMAGE)
    text_only = Instruction("Take me to the exit")
    assert prompt_to_text(build_goal_prompt(tour3, multi)) + "\n" == golden(
        "goal_prompt_multimodal.txt"
    )
    assert prompt_to_text(build_goal_prompt(tour3, text_only)) + "\n" == golden(
        "goal_prompt_text_only.txt"
    )
    assert prompt_to_text(build_action_prompt(tour3, multi)) + "\n" == golden(
        "action_prompt_multimodal.txt"
    )
    assert prompt_to_text(build_action_prompt(tour3, text_only)) + "\n" == golden(
        "action_prompt_text_only.txt"
    )


def test_parse_goal_classifies_transcript_corpus():
    direct = parse_goal(TRANSCRIPT_DIRECT, 948)
    assert (direct.goal_index, direct.parse_status) == (222, "ok")
    assert parse_goal(TRANSCRIPT_REFUSAL, 948).parse_status == "refusal"
    chain = parse_goal(TRANSCRIPT_CHAIN, 948)
    assert (chain.goal_index, chain.parse_status) == (935, "ok")
    assert parse_goal(TRANSCRIPT_CLARIFY, 948).parse_status == "refusal"


def test_mean_step_latency_under_50ms_on_948_vertex_graph(world):
    route948 = serpentine_route(world.bounds, frame_count=948)
    tour948 = generate_tour(world, route948)
    graph948 = build_graph(tour948)
    assert len(graph948.vertices) == 948
    ctx948 = make_context(world, tour948)
    rng = np.random.default_rng(6)
    latencies = []
    while len(latencies) < 1000:
        start = route948[int(rng.integers(0, len(route948)))]
        goal = int(rng.integers(1, 949))
        ep = run_episode(world, graph948, ctx948, start, goal, seed=len(latencies))
        latencies.extend(ep.per_step_latency)
    mean = float(np.mean(latencies))
    assert mean < 0.050, f"mean step latency {1000 * mean:.1f} ms"


def test_reprojection_jacobian_matches_central_differences():
    rng = np.random.default_rng(7)
    cam = DEFAULT_CAMERA
    eps = 1e-6
    for _ in range(100):
        gt_pose, corrs = random_scene(rng, int(rng.integers(4, 10)))
        pose = Pose2(
            gt_pose.x + float(rng.uniform(-0.2, 0.2)),
            gt_pose.y + float(rng.uniform(-0.2, 0.2)),
            normalize_angle(gt_pose.theta + float(rng.uniform(-0.1, 0.1))),
        )
        pixels = np.array([c[0] for c in corrs])
        points = np.array([c[1].position for c in corrs])
        J = reprojection_jacobian(cam, pose, points)
        num = np.empty_like(J)
        for axis in range(3):
            d = [0.0, 0.0, 0.0]
            d[axis] = eps
            hi = Pose2(pose.x + d[0], pose.y + d[1], pose.theta + d[2])
            lo = Pose2(pose.x - d[0], pose.y - d[1], pose.theta - d[2])
            num[:, axis] = (
                reprojection_residual(cam, hi, points, pixels)
                - reprojection_residual(cam, lo, points, pixels)
            ) / (2 * eps)
        rel = np.abs(J - num) / np.maximum(1.0, np.abs(num))
        assert float(rel.max()) < 1e-4


def test_drop_rate_one_always_falls_back_and_fails_cleanly(world, graph, ctx, route):
    drop = NoiseModel(drop_rate=1.0)
    rng = np.random.default_rng(8)
    for i in range(25):
        pose = route[int(rng.integers(0, len(route)))]
        last = Pose2(20.0, 10.0, 0.0)
        q = render(world, pose, drop, seed=i)
        res = localize(ctx, q, last)
        assert res.fallback
        assert res.pose == last
        assert res.inliers == 0
    ep = run_episode(
        world, graph, ctx,
        start=route[30], goal_index=400,
        cfg=PolicyConfig(max_steps=30), noise=drop, seed=9,
    )
    assert not ep.success
    assert ep.status == "failed"
    assert ep.failure_reason == "max_steps"
