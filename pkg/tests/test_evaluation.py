"""SPL math, suite orchestration, and report persistence."""

import math
import os

import numpy as np
import pytest

from tournav.errors import FormatError, ValidationError
from tournav.evaluation import (
    Report,
    SuiteConfig,
    SuiteInstruction,
    _effective_start_dist,
    emit_report,
    emit_trajectory_svg,
    load_report,
    report_from_dict,
    report_to_dict,
    run_suite,
    sample_start,
    spl,
)
from tournav.geometry import Pose2
from tournav.goalfinder import OracleClient, ScriptedClient
from tournav.policy import EpisodeRecord


def episode(success: bool, executed: float, shortest: float) -> EpisodeRecord:
    return EpisodeRecord(
        instruction="x",
        goal_index=1,
        start=Pose2(0, 0, 0),
        success=success,
        executed_length=executed,
        shortest_length=shortest,
        steps=3,
        per_step_latency=[0.001],
    )


def test_spl_hand_computed():
    eps = [
        episode(True, 10.0, 10.0),   # optimal: contributes 1
        episode(True, 20.0, 10.0),   # detour: contributes 0.5
        episode(False, 5.0, 10.0),   # failure: contributes 0
        episode(True, 5.0, 10.0),    # shorter than optimal: clamped to 1
    ]
    assert spl(eps) == pytest.approx((1.0 + 0.5 + 0.0 + 1.0) / 4.0)


def test_spl_zero_length_episode_counts_success():
    assert spl([episode(True, 0.0, 0.0)]) == 1.0
    assert spl([episode(False, 0.0, 0.0)]) == 0.0
    with pytest.raises(ValidationError):
        spl([])


def test_effective_start_dist_clamps_to_world(small_world):
    diag = math.hypot(small_world.bounds.width, small_world.bounds.height)
    assert _effective_start_dist(small_world, 20.0) == pytest.approx(
        min(20.0, 0.45 * diag)
    )
    assert _effective_start_dist(small_world, 1.0) == 1.0


def test_sample_start_respects_min_distance(small_world):
    rng = np.random.default_rng(0)
    goal = Pose2(12.0, 6.0, 0.0)
    for _ in range(50):
        start = sample_start(rng, small_world, goal, 5.0)
        assert math.hypot(start.x - goal.x, start.y - goal.y) >= 5.0
        assert small_world.bounds.contains(start.x, start.y)


def test_run_suite_oracle_end_to_end(small_world, small_tour, small_graph):
    cfg = SuiteConfig(starts_per_instruction=2, seed=1)
    report = run_suite(
        small_world, small_tour, small_graph, OracleClient(small_world), None, cfg
    )
    m = report.categories["overall"]
    assert m.instructions == len(small_world.instruction_tags)
    assert m.episodes == 2 * m.instructions
    assert m.goal_finding_sr == 1.0
    assert m.goal_reaching_sr == 1.0
    assert m.end_to_end_sr == 1.0
    assert m.spl > 0.8
    assert m.mean_step_latency > 0.0


def test_run_suite_worker_count_does_not_change_results(small_world, small_tour, small_graph):
    base = SuiteConfig(starts_per_instruction=2, seed=7)
    threaded = SuiteConfig(starts_per_instruction=2, seed=7, workers=4)
    r1 = run_suite(small_world, small_tour, small_graph, OracleClient(small_world), None, base)
    r2 = run_suite(small_world, small_tour, small_graph, OracleClient(small_world), None, threaded)
    key1 = [(e.instruction, e.goal_index, e.start, e.success, e.steps) for e in r1.episodes]
    key2 = [(e.instruction, e.goal_index, e.start, e.success, e.steps) for e in r2.episodes]
    assert key1 == key2


def test_run_suite_unparseable_goal_fails_episodes(small_world, small_tour, small_graph):
    client = ScriptedClient([{"match": "user says", "response": "no clue"}])
    cfg = SuiteConfig(starts_per_instruction=2, seed=0)
    instructions = [SuiteInstruction(text="made-up place")]
    report = run_suite(small_world, small_tour, small_graph, client, instructions, cfg)
    m = report.categories["overall"]
    assert m.goal_finding_sr == 0.0
    assert m.goal_reaching_sr == 0.0
    assert all(e.failure_reason == "no_goal" for e in report.episodes)


def test_run_suite_categories(small_world, small_tour, small_graph):
    tags = small_world.instruction_tags
    instructions = [
        SuiteInstruction(text=tags[0].text, category="easy"),
        SuiteInstruction(text=tags[1].text, category="hard"),
    ]
    cfg = SuiteConfig(starts_per_instruction=1, seed=0)
    report = run_suite(
        small_world, small_tour, small_graph, OracleClient(small_world), instructions, cfg
    )
    assert set(report.categories) == {"easy", "hard", "overall"}
    assert report.categories["easy"].instructions == 1


def test_run_suite_requires_instructions(small_world, small_tour, small_graph):
    with pytest.raises(ValidationError):
        run_suite(
            small_world, small_tour, small_graph, OracleClient(small_world), [],
            SuiteConfig(),
        )


def test_report_round_trip(tmp_path, small_world, small_tour, small_graph):
    cfg = SuiteConfig(starts_per_instruction=1, seed=2)
    report = run_suite(
        small_world, small_tour, small_graph, OracleClient(small_world), None, cfg
    )
    doc = report_to_dict(report)
    again = report_from_dict(doc)
    assert report_to_dict(again) == doc

    path = os.path.join(tmp_path, "report.json")
    emit_report(report, path, "json")
    loaded = load_report(path)
    assert report_to_dict(loaded) == doc

    csv_path = os.path.join(tmp_path, "report.csv")
    emit_report(report, csv_path, "csv")
    lines = open(csv_path).read().strip().splitlines()
    assert lines[0].startswith("instruction,goal_index")
    assert len(lines) == 1 + len(report.episodes)

    with pytest.raises(ValidationError):
        emit_report(report, path, "yaml")
    with pytest.raises(ValidationError):
        emit_report(Report(categories={}, instruction_outcomes=[], episodes=[]), path)


def test_report_version_check():
    with pytest.raises(FormatError, match="version"):
        report_from_dict({"version": 99})


def test_trajectory_svg(tmp_path, small_world, small_tour, small_graph, small_route):
    from tournav.evaluation import make_context
    from tournav.policy import run_episode

    ctx = make_context(small_world, small_tour)
    ep = run_episode(
        small_world, small_graph, ctx, start=small_route[5], goal_index=100
    )
    path = os.path.join(tmp_path, "traj.svg")
    emit_trajectory_svg(ep, small_world, path, tour=small_tour)
    svg = open(path).read()
    assert svg.startswith("<svg")
    assert svg.count("<polyline") == 2  # tour path and episode path
    assert "<circle" in svg
