import json
from pathlib import Path

import pytest

from manikin.cli import main

FIXTURES = Path(__file__).parent / "fixtures" / "malformed"

EXPECTED = {
    "bad_json": "ParseError",
    "dangling_link": "UnknownLink",
    "empty": "ParseError",
    "negative_dt": "ValidationError",
    "unknown_object": "ValidationError",
}


def test_validate_bundled_scenario(capsys):
    assert main(["validate", "--scenario", "reach_grasp.json"]) == 0
    assert capsys.readouterr().out.startswith("ok reach_grasp:")


@pytest.mark.parametrize("name", sorted(EXPECTED))
def test_validate_rejects_malformed(name, capsys):
    assert main(["validate", "--scenario", str(FIXTURES / f"{name}.json")]) == 1
    assert f"error: {EXPECTED[name]}:" in capsys.readouterr().err


def test_missing_scenario_file_is_invalid(tmp_path, capsys):
    assert main(["validate", "--scenario", str(tmp_path / "nope.json")]) == 1
    assert "error:" in capsys.readouterr().err


def test_run_writes_outputs(tmp_path, capsys):
    assert main(["run", "--scenario", "reach_grasp.json", "--out", str(tmp_path / "o"), "--duration", "0.02"]) == 0
    printed = capsys.readouterr().out.split()
    assert {Path(p).name for p in printed} >= {"trajectory.csv", "summary.json"}
    assert all(Path(p).exists() for p in printed)


def test_run_into_a_file_fails_at_runtime(tmp_path, capsys):
    blocker = tmp_path / "taken"
    blocker.write_text("x")
    assert main(["run", "--scenario", "reach_grasp.json", "--out", str(blocker), "--duration", "0.01"]) == 2
    assert "error:" in capsys.readouterr().err


def test_bad_override_is_invalid(tmp_path):
    assert main(["run", "--scenario", "reach_grasp.json", "--out", str(tmp_path), "--dt", "-1"]) == 1


def test_decompose_prints_queue(capsys):
    assert main(["decompose", "--scenario", "remove_part.json", "--goal", "remove"]) == 0
    queue = json.loads(capsys.readouterr().out)
    assert queue and queue[0]["kind"] == "WalkTo"


def test_decompose_unknown_goal(capsys):
    assert main(["decompose", "--scenario", "remove_part.json", "--goal", "nope"]) == 1
    assert "--goal" in capsys.readouterr().err


def test_envelope_to_file(tmp_path):
    out = tmp_path / "env.json"
    assert main(["envelope", "--scenario", "reach_grasp.json", "--hand", "right",
                 "--grid=-0.2,-0.6,0.8:0.6,0.2,1.2:0.2", "--out", str(out)]) == 0
    d = json.loads(out.read_text())
    assert d["cell"] == 0.2 and d["cells"]
    assert all(len(c) == 3 for c in d["cells"])


def test_envelope_unknown_hand(capsys):
    assert main(["envelope", "--scenario", "reach_grasp.json", "--hand", "tail", "--grid", "0,0:1,1:0.5"]) == 1
    assert "UnknownHand" in capsys.readouterr().err
