import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from fvlab.cli import cli, sub_seed


def run(capsys, *argv):
    code = cli([str(a) for a in argv])
    out, err = capsys.readouterr()
    dirs = [line.split()[1] for line in out.splitlines() if line.startswith("run ")]
    return code, (Path(dirs[-1]) if dirs else None), out, err


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def lab(tmp_path_factory):
    """A tiny dataset and a briefly trained model made through the CLI itself."""
    root = tmp_path_factory.mktemp("runs")
    code = cli(["dataset", "gen", "--classes", "4", "--per-class", "16", "--size", "16", "--out", str(root)])
    assert code == 0
    data = next(root.glob("dataset-gen-*"))
    code = cli(["train", "base", "--data", str(data / "train.npz"), "--test", str(data / "test.npz"),
                "--epochs", "2", "--out", str(root)])
    assert code == 0
    model = next(root.glob("train-base-*")) / "model.json"
    return root, data, model


def test_run_directory_layout(lab):
    root, data, model = lab
    for d in (data, model.parent):
        assert (d / "resolved_config.json").exists()
        man = json.loads((d / "manifest.json").read_text())
        assert man["exit_code"] == 0
        for name in man["outputs"]:
            assert (d / name).exists()
    assert {r["split"] for r in rows(data / "summary.csv")} == {"train", "test"}
    assert (data / "samples" / "class_00.ppm").read_bytes().startswith(b"P6")
    cfg = json.loads((model.parent / "resolved_config.json").read_text())
    assert cfg["subseeds"]["init"] == sub_seed(0, "init")
    assert set(cfg["inputs"]) == {"data", "test"}


def test_theory_verify_convex(capsys, tmp_path):
    code, d, _, _ = run(capsys, "theory", "verify", "--class", "convex", "--seeds", 100, "--out", tmp_path)
    assert code == 0
    r = rows(d / "bounds.csv")
    assert len(r) == 100 and all(x["pass"] == "1" for x in r) and {x["class"] for x in r} == {"convex"}


def test_theory_demo(capsys, tmp_path):
    code, d, out, _ = run(capsys, "theory", "demo", "--seeds", 3, "--out", tmp_path)
    assert code == 0 and "closer to min or max?" in out
    assert len(rows(d / "table.csv")) == 12


def test_unknown_flag_exits_2_without_artifacts(capsys, tmp_path):
    code, _, _, err = run(capsys, "theory", "verify", "--bogus", "--out", tmp_path)
    assert code == 2 and "error E_USAGE" in err
    assert not any(tmp_path.iterdir())
    assert cli(["no-such-command"]) == 2


def test_missing_input_is_a_single_line_error(capsys, tmp_path):
    code, _, _, err = run(capsys, "census", "--model", tmp_path / "nope.json", "--data", tmp_path / "x.npz",
                          "--out", tmp_path)
    assert code == 2
    lines = err.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("error E_MISSING_INPUT:")
    assert not any(tmp_path.iterdir())


def test_bad_unit_and_bad_model(capsys, lab, tmp_path):
    root, data, model = lab
    code, _, _, err = run(capsys, "viz", "--model", model, "--unit", "fc:99", "--out", tmp_path)
    assert code == 2 and "E_BAD_UNIT" in err
    bad = tmp_path / "bad.json"
    bad.write_text("{}")
    code, _, _, err = run(capsys, "viz", "--model", bad, "--unit", "fc:0", "--out", tmp_path)
    assert code == 2 and "E_BAD_INPUT" in err


def test_idempotent_and_force(capsys, tmp_path):
    argv = ("theory", "verify", "--class", "monotone", "--seeds", 5, "--out", tmp_path)
    code, d, _, _ = run(capsys, *argv)
    stamp = (d / "manifest.json").stat().st_mtime_ns
    code2, d2, out, _ = run(capsys, *argv)
    assert (code, code2) == (0, 0) and d == d2 and "exists" in out
    assert (d / "manifest.json").stat().st_mtime_ns == stamp
    code3, d3, out, _ = run(capsys, *argv, "--force")
    assert code3 == 0 and d3 == d and "exists" not in out


def test_env_root_and_config_file(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("FVLAB_OUT", str(tmp_path / "envroot"))
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"classes": ["lipschitz(1)"], "seeds": 4}))
    code, d, _, _ = run(capsys, "theory", "verify", "--config", cfg)
    assert code == 0 and d.parent == tmp_path / "envroot"
    r = rows(d / "bounds.csv")
    assert len(r) == 4 and r[0]["class"] == "lipschitz(1)"
    # flags beat the file
    code, d, _, _ = run(capsys, "theory", "verify", "--config", cfg, "--seeds", 2)
    assert len(rows(d / "bounds.csv")) == 2


def _replay_matches(capsys, d, tmp_path):
    code, d2, _, _ = run(capsys, "replay", d / "resolved_config.json", "--out", tmp_path / "replay")
    assert code == 0 and d2 != d and d2.name == d.name
    for p in d.rglob("*.csv"):
        assert (d2 / p.relative_to(d)).read_bytes() == p.read_bytes()


def test_permutation_circuit_then_audit(capsys, lab, tmp_path):
    root, data, model = lab
    code, d, _, _ = run(capsys, "fool", "circuit", "--model", model, "--offset", 3, "--data", data / "train.npz",
                        "--out", tmp_path)
    assert code == 0
    code, a, _, _ = run(capsys, "audit", "preserve", "--original", model, "--modified", d / "model.json",
                        "--data", data / "test.npz", "--out", tmp_path)
    assert code == 0
    r = {x["metric"]: float(x["value"]) for x in rows(a / "preservation.csv")}
    assert r["top1_agreement"] >= 0.99 and r["max_abs_diff"] <= 1e-5
    _replay_matches(capsys, a, tmp_path)


def test_oracle_zero_circuit_fails_audit(capsys, lab, tmp_path):
    root, data, model = lab
    code, d, _, _ = run(capsys, "fool", "circuit", "--model", model, "--offset", 1, "--detector", "oracle0",
                        "--data", data / "train.npz", "--out", tmp_path)
    assert code == 0
    code, _, _, _ = run(capsys, "audit", "preserve", "--original", model, "--modified", d / "model.json",
                        "--data", data / "test.npz", "--out", tmp_path)
    assert code == 1


def test_silent_hijack_cli(capsys, lab, tmp_path):
    root, data, model = lab
    code, d, _, _ = run(capsys, "fool", "silent", "--model", model, "--data", data / "train.npz", "--out", tmp_path)
    assert code == 0
    code, a, _, _ = run(capsys, "audit", "preserve", "--original", model, "--modified", d / "model.json",
                        "--data", data / "train.npz", "--out", tmp_path)
    assert code == 0
    r = {x["metric"]: float(x["value"]) for x in rows(a / "preservation.csv")}
    assert r["max_abs_diff"] == 0.0 and r["top1_agreement"] == 1.0
    assert rows(d / "hijack.csv")


def test_analysis_commands_and_replay(capsys, lab, tmp_path):
    root, data, model = lab
    code, d, _, _ = run(capsys, "viz", "--model", model, "--unit", "fc:1", "--unit", "relu2:0", "--steps", 16,
                        "--out", tmp_path)
    assert code == 0 and (d / "unit_00" / "metadata.json").exists()
    _replay_matches(capsys, d, tmp_path)
    code, d, _, _ = run(capsys, "census", "--model", model, "--data", data / "train.npz", "--out", tmp_path)
    assert code == 0 and rows(d / "census.csv")
    _replay_matches(capsys, d, tmp_path)
    code, d, _, _ = run(capsys, "pathsim", "--model", model, "--data", data / "train.npz", "--steps", 16,
                        "--per-class", 5, "--viz-per-class", 2, "--out", tmp_path)
    assert code == 0
    r = rows(d / "similarity.csv")
    assert list(r[0]) == ["layer", "raw_same", "raw_cross", "raw_viz", "normalized", "smoothed", "band_lo",
                          "band_hi", "excluded"]
    _replay_matches(capsys, d, tmp_path)
    scores = tmp_path / "scores.csv"
    scores.write_text("unit_id,score\n" + "".join(f"fc:{c}:mean,{c}\n" for c in range(4)))
    code, d, _, _ = run(capsys, "linearity", "--model", model, *sum((["--unit", f"fc:{c}"] for c in range(4)), []),
                        "--steps", 8, "--starts", 2, "--scores", scores, "--out", tmp_path)
    assert code == 0 and rows(d / "correlation.csv")
    _replay_matches(capsys, d, tmp_path)


def test_replay_detects_changed_input(capsys, lab, tmp_path):
    root, data, model = lab
    own = tmp_path / "train.npz"
    own.write_bytes((data / "train.npz").read_bytes())
    code, d, _, _ = run(capsys, "census", "--model", model, "--data", own, "--out", tmp_path)
    assert code == 0
    np.savez(own, images=np.zeros((1, 3, 16, 16)), labels=np.zeros(1, int))
    code, _, _, err = run(capsys, "replay", d / "resolved_config.json", "--out", tmp_path / "r")
    assert code == 2 and "E_INPUT_CHANGED" in err


def test_console_entry_point(tmp_path):
    p = subprocess.run([sys.executable, "-m", "fvlab", "theory", "verify", "--class", "constant", "--seeds", "3",
                        "--out", str(tmp_path)], capture_output=True, text=True)
    assert p.returncode == 0, p.stderr
    p = subprocess.run([sys.executable, "-m", "fvlab", "theory", "verify", "--nope"], capture_output=True, text=True,
                       cwd=tmp_path)
    assert p.returncode == 2 and not (tmp_path / "runs").exists()
