import json
import math
import shutil

import pytest

from raven.cli import main
from raven.data import load_bundle

SYNTH = {"k": 2, "m": 2, "n": 200, "weak_quality": [0.0, 0.3], "n_weak_train": 300, "d_emb": 16}


@pytest.fixture
def problem(tmp_path):
    cfg = tmp_path / "synth.json"
    cfg.write_text(json.dumps(SYNTH))
    assert main(["gen-synth", str(cfg), str(tmp_path / "prob")]) == 0
    return tmp_path / "prob"


def run(*args):
    return main([str(a) for a in args])


def test_gen_synth_writes_loadable_bundles(problem, capsys):
    for tag in ("source", "tuning", "validation", "target"):
        b = load_bundle(problem / tag)
        assert b.n == 200 and b.m == 2 and b.k == 2
    assert json.loads((problem / "problem.json").read_text())["config"]["k"] == 2


def test_gen_synth_is_deterministic(tmp_path, problem):
    cfg = tmp_path / "synth.json"
    assert run("gen-synth", cfg, tmp_path / "again") == 0
    for f in problem.rglob("*"):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "again" / f.relative_to(problem)).read_bytes()


def test_gen_synth_validation_errors(tmp_path, problem, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**SYNTH, "k": 1}))
    assert run("gen-synth", bad, tmp_path / "x") == 1
    assert "k must be >= 2" in capsys.readouterr().err
    assert run("gen-synth", tmp_path / "synth.json", problem) == 1
    (tmp_path / "junk.json").write_text("{nope")
    assert run("gen-synth", tmp_path / "junk.json", tmp_path / "y") == 1


def test_train_gt_writes_artifacts(problem, tmp_path):
    rd = tmp_path / "gt"
    assert run("train", problem, "--run-dir", rd, "--method", "gt", "--epochs", 3) == 0
    for name in ("result.json", "theta_trajectory.csv", "probe.bin", "metrics.json"):
        assert (rd / name).is_file()
    metrics = json.loads((rd / "metrics.json").read_text())
    assert 0 <= metrics["gt_accuracy"]["target"] <= 1
    assert metrics["generalization_gap"] is not None


def test_train_rejects_wrong_model_count(problem, tmp_path, capsys):
    assert run("train", problem, "--run-dir", tmp_path / "r", "--method", "raven", "--m", 3) == 1
    assert "--m" in capsys.readouterr().err
    assert not (tmp_path / "r").exists()


def test_train_validation_and_usage_errors(problem, tmp_path):
    assert run("train", problem, "--run-dir", tmp_path / "a", "--epochs", 0) == 1
    assert run("train", problem, "--run-dir", tmp_path / "a", "--method", "bogus") == 1
    assert run("train", problem, "--run-dir", tmp_path / "a", "--split", "nope") == 1
    assert run("train", tmp_path / "missing", "--run-dir", tmp_path / "a") == 1
    assert run("train") == 1


def test_train_rerun_is_identical(problem, tmp_path):
    args = ["--method", "raven", "--epochs", 4, "--seed", 3]
    assert run("train", problem, "--run-dir", tmp_path / "a", *args) == 0
    assert run("train", problem, "--run-dir", tmp_path / "b", *args) == 0
    assert (tmp_path / "a" / "result.json").read_bytes() == (tmp_path / "b" / "result.json").read_bytes()
    assert run("train", problem, "--run-dir", tmp_path / "a", *args) == 1
    assert run("train", problem, "--run-dir", tmp_path / "a", *args, "--force") == 0


def test_config_file_and_flag_precedence(problem, tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"method": "ensemble", "epochs": 2, "seed": 5}))
    assert run("train", problem, "--run-dir", tmp_path / "a", "--config", cfg, "--epochs", 3) == 0
    summary = json.loads((tmp_path / "a" / "result.json").read_text())
    assert summary["config"]["method"] == "ensemble"
    assert summary["config"]["epochs"] == 3 and summary["config"]["seed"] == 5
    # RAVEN_SEED only fills in a missing seed
    monkeypatch.setenv("RAVEN_SEED", "9")
    assert run("train", problem, "--run-dir", tmp_path / "b", "--config", cfg) == 0
    assert json.loads((tmp_path / "b" / "result.json").read_text())["config"]["seed"] == 5
    assert run("train", problem, "--run-dir", tmp_path / "c", "--epochs", 1) == 0
    assert json.loads((tmp_path / "c" / "result.json").read_text())["config"]["seed"] == 9
    monkeypatch.setenv("RAVEN_SEED", "x")
    assert run("train", problem, "--run-dir", tmp_path / "d", "--epochs", 1) == 1


def test_train_on_a_plain_bundle(problem, tmp_path):
    assert run("train", problem / "tuning", "--run-dir", tmp_path / "a", "--method", "naive", "--epochs", 1) == 0
    metrics = json.loads((tmp_path / "a" / "metrics.json").read_text())
    assert list(metrics["accuracy"]) == ["tuning"]


def test_report_rows(problem, tmp_path, capsys):
    common = ["--epochs", 3]
    assert run("train", problem, "--run-dir", tmp_path / "gt", "--method", "gt", *common) == 0
    assert run("train", problem, "--run-dir", tmp_path / "gt1", "--method", "gt", "--seed", 1, *common) == 0
    assert run("train", problem, "--run-dir", tmp_path / "nv", "--method", "naive", *common) == 0
    assert run("train", problem, "--run-dir", tmp_path / "rv", "--method", "raven", *common) == 0
    capsys.readouterr()

    out = tmp_path / "rep.json"
    assert run("report", tmp_path / "gt", tmp_path / "nv", "--target", problem, "--out", out) == 0
    text = capsys.readouterr().out
    assert "single" in text and "naive" in text
    rep = json.loads(out.read_text())
    gt_row, nv_row = rep["runs"]
    assert gt_row["pgr"] == 1.0
    w, g, p = rep["weak_accuracy"][0], rep["gt_accuracy"][0], nv_row["target_accuracy"]
    assert nv_row["variant"] == "single" and math.isclose(nv_row["pgr"], (p - w) / (g - w), abs_tol=1e-12)

    assert run("report", tmp_path / "rv", tmp_path / "gt", tmp_path / "gt1", "--target", problem / "target",
               "--format", "json") == 0
    rep = json.loads(capsys.readouterr().out)
    rv_row = rep["runs"][0]
    assert rv_row["variant"] == "ensemble" and rv_row["hit_or_miss"] is not None
    weak, gts = rep["weak_accuracy"], rep["gt_accuracy"]
    expected = (rv_row["target_accuracy"] - sum(weak) / 2) / ((gts[0] - weak[0] + gts[1] - weak[1]) / 2)
    assert math.isclose(rv_row["pgr"], expected, abs_tol=1e-12)


def test_report_errors(problem, tmp_path):
    assert run("train", problem, "--run-dir", tmp_path / "nv", "--method", "naive", "--epochs", 1) == 0
    (tmp_path / "nv" / "probe.bin").unlink()
    assert run("report", tmp_path / "nv", "--target", problem) == 2
    assert run("train", problem, "--run-dir", tmp_path / "ok", "--method", "naive", "--epochs", 1) == 0
    # strip the labels from a copy of the target bundle
    shutil.copytree(problem / "target", tmp_path / "nolab")
    (tmp_path / "nolab" / "labels.bin").unlink()
    man = json.loads((tmp_path / "nolab" / "manifest.json").read_text())
    man["has_labels"] = False
    (tmp_path / "nolab" / "manifest.json").write_text(json.dumps(man))
    assert run("report", tmp_path / "ok", "--target", tmp_path / "nolab") == 1


def test_weights_prints_trajectory(problem, tmp_path, capsys):
    assert run("train", problem, "--run-dir", tmp_path / "rv", "--epochs", 1) == 0
    capsys.readouterr()
    assert run("weights", tmp_path / "rv") == 0
    assert capsys.readouterr().out == (tmp_path / "rv" / "theta_trajectory.csv").read_text()
    assert run("weights", tmp_path) == 1


def _pairs(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


def test_dpo_r_command(tmp_path, capsys):
    eq = [{"id": str(i), "logp_policy": [-1.0, -2.0], "logp_ref": [-2.0, -1.0],
           "weak_rewards": [[0.5, 1.0], [0.5, 1.0]]} for i in range(3)]
    assert run("dpo-r", _pairs(tmp_path / "eq.jsonl", eq)) == 0
    rep = json.loads(capsys.readouterr().out)
    assert all(p["beta_c"] == 0.5 and p["tie"] for p in rep["pairs"])
    assert abs(rep["mean_loss"] - 0.313262) < 1e-6
    assert run("dpo-r", tmp_path / "eq.jsonl", "--theta", "0.9,0.1", "--fit", "--steps", 3,
               "--out", tmp_path / "o.json") == 0
    assert len(json.loads((tmp_path / "o.json").read_text())["fit_history"]) == 3
    assert run("dpo-r", tmp_path / "eq.jsonl", "--theta", "a,b") == 1


def test_dpo_r_errors(tmp_path, capsys):
    (tmp_path / "empty.jsonl").write_text("")
    assert run("dpo-r", tmp_path / "empty.jsonl") == 1
    good = json.dumps({"id": "a", "logp_policy": [-1, -2], "logp_ref": [-1, -1], "weak_rewards": [[1], [2]]})
    (tmp_path / "bad.jsonl").write_text(good + "\n" + good + "\n{broken\n")
    capsys.readouterr()
    assert run("dpo-r", tmp_path / "bad.jsonl") == 1
    assert "line 3" in capsys.readouterr().err


def test_help_and_version(capsys):
    assert run("--help") == 0
    assert "gen-synth" in capsys.readouterr().out
    assert run("nonsense") == 1


def test_run_experiment_jobs_do_not_change_results(tmp_path):
    spec = {"synth": SYNTH, "seeds": [0, 1],
            "methods": [{"method": "gt", "config": {"epochs": 2}},
                        {"method": "raven", "config": {"epochs": 2}},
                        {"name": "naive_hard", "method": "naive", "config": {"epochs": 2, "label_style": "hard"}}]}
    for name, jobs in (("serial", 1), ("parallel", 2)):
        (tmp_path / f"{name}.json").write_text(json.dumps({**spec, "out": name}))
        assert run("run-experiment", tmp_path / f"{name}.json", "--jobs", jobs) == 0
    for seed in (0, 1):
        for m in ("gt", "raven", "naive_hard"):
            a = (tmp_path / "serial" / f"seed_{seed}" / m / "result.json").read_bytes()
            assert a == (tmp_path / "parallel" / f"seed_{seed}" / m / "result.json").read_bytes()
    summary = json.loads((tmp_path / "serial" / "summary.json").read_text())
    assert summary["methods"]["raven"]["runs"] == 2
    assert summary == json.loads((tmp_path / "parallel" / "summary.json").read_text())


def test_run_experiment_spec_errors(tmp_path):
    (tmp_path / "s.json").write_text(json.dumps({"synth": SYNTH, "seeds": [], "methods": ["gt"]}))
    assert run("run-experiment", tmp_path / "s.json") == 1
    (tmp_path / "s.json").write_text(json.dumps({"synth": SYNTH, "seeds": [0], "methods": []}))
    assert run("run-experiment", tmp_path / "s.json") == 1
