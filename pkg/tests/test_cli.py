import json
import subprocess
import sys

import pytest

from semgrid.cli import main

TINY = ["--cameras", "6", "--frames", "3", "--azimuth-resolution", "1.0"]


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert main(["synth", "--out", str(out), *TINY]) == 0
    return out


def test_no_subcommand_prints_help(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand_is_usage_error(capsys):
    assert main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_missing_required_option(capsys):
    assert main(["eval", "--pred", "x.json"]) == 1


def test_data_error_exit_code(tmp_path, capsys):
    assert main(["map", str(tmp_path / "none.json"), "--out", str(tmp_path / "o")]) == 2
    assert "none.json" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["eval", "--pred", str(bad), "--gt", str(bad)]) == 2


def test_report_rounds_ratio(capsys):
    assert main(["report", "12.2", "49.0", "--model", "grid", "--train", "nuS", "--test-cross", "AV2"]) == 0
    out = capsys.readouterr().out
    assert "24.9" in out.splitlines()[2]


def test_report_from_json(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    base = {"thresholds": [0.5], "squared_chamfer": True, "ap": {}}
    a.write_text(json.dumps({**base, "mAP": 0.162}))
    b.write_text(json.dumps({**base, "mAP": 0.488}))
    assert main(["report", str(a), str(b)]) == 0
    assert "33.2" in capsys.readouterr().out
    assert main(["report", "10", "0"]) == 2


def test_pipeline_smoke(synth_dir, tmp_path, capsys):
    maps, vec, rep = tmp_path / "maps", tmp_path / "vec", tmp_path / "report.json"
    assert main(["map", str(synth_dir / "manifest.json"), "--out", str(maps)]) == 0
    out = capsys.readouterr().out
    assert sum(line.startswith("frame ") and "integrate_ms=" in line for line in out.splitlines()) == 3
    timing = json.loads((maps / "timing.json").read_text())
    assert timing["frames"] == 3 and timing["mean_ms"] > 0
    assert sorted(p.name for p in (maps / "ego").iterdir())[:2] == ["000000.json", "000000.pgm"]
    assert (maps / "world.pgm").is_file()

    assert main(["vectorize", str(maps / "ego"), "--out", str(vec)]) == 0
    assert len(list(vec.glob("*.json"))) == 3
    assert main(["eval", "--pred", str(vec), "--gt", str(synth_dir / "gt"), "--out", str(rep)]) == 0
    report = json.loads(rep.read_text())
    assert 0.0 <= report["mAP"] <= 1.0 and report["flagged"] == ["centerline"]
    assert "mAP" in capsys.readouterr().out


def test_eval_ground_truth_against_itself(synth_dir, tmp_path, capsys):
    rep = tmp_path / "self.json"
    gt = str(synth_dir / "gt")
    assert main(["eval", "--pred", gt, "--gt", gt, "--out", str(rep)]) == 0
    assert json.loads(rep.read_text())["mAP"] == 1.0
    single = str(synth_dir / "gt_world.json")
    assert main(["eval", "--pred", single, "--gt", single]) == 0
    assert "100.0" in capsys.readouterr().out


def test_eval_missing_predictions(synth_dir, tmp_path):
    pred = tmp_path / "pred"
    pred.mkdir()
    (pred / "000000.json").write_text((synth_dir / "gt" / "000000.json").read_text())
    assert main(["eval", "--pred", str(pred), "--gt", str(synth_dir / "gt")]) == 2
    assert main(["eval", "--pred", str(pred), "--gt", str(synth_dir / "gt"), "--allow-missing"]) == 0


def test_console_script_module_entry():
    r = subprocess.run([sys.executable, "-m", "semgrid.cli", "report", "16.2", "48.8"],
                       capture_output=True, text=True, check=False)
    assert r.returncode == 0 and "33.2" in r.stdout
