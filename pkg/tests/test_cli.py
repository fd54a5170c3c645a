"""End-to-end command-line tests over temporary artifacts."""

import json
import os

import pytest

from tournav.cli import main


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    world = os.path.join(root, "world.json")
    tour = os.path.join(root, "tour")
    graph = os.path.join(root, "graph.json")
    assert main([
        "--seed", "5", "gen-world", "--size", "20", "12",
        "--landmarks", "300", "--tags", "4", "-o", world,
    ]) == 0
    assert main([
        "gen-tour", "--world", world, "--frames", "160",
        "--narrate", "40:the kitchen", "-o", tour,
    ]) == 0
    assert main(["build-graph", "--tour", tour, "-o", graph]) == 0
    return {"world": world, "tour": tour, "graph": graph, "root": str(root)}


def test_generated_artifacts_exist(artifacts):
    assert os.path.exists(artifacts["world"])
    assert os.path.exists(os.path.join(artifacts["tour"], "frames.jsonl"))
    assert os.path.exists(artifacts["graph"])


def test_localize_command(artifacts, capsys):
    code = main([
        "localize", "--world", artifacts["world"], "--tour", artifacts["tour"],
        "--pose", "5.0", "5.0", "0.0",
    ])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert not out["fallback"]
    assert abs(out["pose"]["x"] - 5.0) < 1e-6


def test_find_goal_oracle(artifacts, capsys):
    code = main([
        "find-goal", "--world", artifacts["world"], "--tour", artifacts["tour"],
        "--instruction", "Take me to location 1", "--dump-prompt",
    ])
    assert code == 0
    out = capsys.readouterr().out
    assert "These frames are from the tour of the building last year." in out
    assert "Frame 40. the kitchen" in out
    tail = json.loads(out[out.index('{'):])
    assert tail["parse_status"] == "ok"


def test_navigate_with_svg(artifacts, capsys):
    svg = os.path.join(artifacts["root"], "traj.svg")
    code = main([
        "navigate", "--world", artifacts["world"], "--tour", artifacts["tour"],
        "--graph", artifacts["graph"],
        "--instruction", "Take me to location 2",
        "--start", "3.0", "3.0", "0.0", "--svg", svg,
    ])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["success"] is True
    assert os.path.exists(svg)


def test_eval_command(artifacts, capsys):
    report = os.path.join(artifacts["root"], "report.json")
    csv = os.path.join(artifacts["root"], "report.csv")
    code = main([
        "eval", "--world", artifacts["world"], "--tour", artifacts["tour"],
        "--graph", artifacts["graph"], "--starts", "1",
        "--csv", csv, "-o", report,
    ])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["overall"]["goal_finding_sr"] == 1.0
    assert os.path.exists(report) and os.path.exists(csv)


def test_ate_command(artifacts, capsys):
    code = main([
        "ate", "--world", artifacts["world"], "--tour", artifacts["tour"],
        "--queries", "30",
    ])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["queries"] == 30
    assert out["median"] < 1e-3


def test_scripted_client_flow(artifacts, capsys):
    script = os.path.join(artifacts["root"], "script.jsonl")
    with open(script, "w") as fh:
        fh.write(json.dumps({"match": "user says", "response": "Frame 12"}) + "\n")
    code = main([
        "--vlm", f"scripted:{script}",
        "find-goal", "--world", artifacts["world"], "--tour", artifacts["tour"],
        "--instruction", "anywhere",
    ])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["goal_index"] == 12


def test_error_exit_codes(artifacts, capsys, tmp_path):
    # validation error: unknown client spec
    assert main([
        "--vlm", "telepathy",
        "find-goal", "--world", artifacts["world"], "--tour", artifacts["tour"],
        "--instruction", "x",
    ]) == 1
    # validation error: missing file
    assert main(["build-graph", "--tour", str(tmp_path / "nope"), "-o",
                 str(tmp_path / "g.json")]) == 1
    err = capsys.readouterr().err
    assert "error" in err


def test_transport_error_exit_code(artifacts, tmp_path, capsys):
    cfg = os.path.join(str(tmp_path), "cfg.json")
    json.dump({"retries": 0, "vlm_timeout": 0.2}, open(cfg, "w"))
    code = main([
        "--config", cfg, "--vlm", "remote:http://127.0.0.1:9/v1",
        "find-goal", "--world", artifacts["world"], "--tour", artifacts["tour"],
        "--instruction", "x",
    ])
    assert code == 2
    assert "transport error" in capsys.readouterr().err
