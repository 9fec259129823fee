import json

import numpy as np
import pytest

from stagepoly.cli import build_parser, learner_config, main
from stagepoly.io import ExampleStream, format_example
from stagepoly.learner import LearnerConfig, train
from stagepoly.parallel import planted_interaction_task


def _write_regression(path, n=150, seed=0):
    rng = np.random.default_rng(seed)
    lines = []
    for _ in range(n):
        x = rng.uniform(-1, 1, size=4)
        y = x[0] * x[1] - 0.5 * x[2] + 0.1 * rng.normal()
        lines.append(f"{y:.5f} | " + " ".join(f"{i}:{v:.5f}" for i, v in enumerate(x)))
    path.write_text("\n".join(lines) + "\n")
    return path


def _config_line(err):
    lines = [json.loads(s) for s in err.splitlines() if s.startswith("{")]
    return [d["config"] for d in lines if "config" in d]


def test_train_then_predict_matches_final_model(tmp_path, capsys):
    data = _write_regression(tmp_path / "r.vw")
    model = tmp_path / "m.bin"
    preds = tmp_path / "p.txt"
    args = ["--task", "regression", "--stage-poly", "--learning-rate", "0.2"]
    assert main(["train", str(data), "--model", str(model), *args]) == 0
    out, err = capsys.readouterr()
    report = json.loads(out)
    cfg = _config_line(err)[0]
    assert cfg["bits"] == 18 and cfg["epochs"] == 6 and cfg["stage_poly"] is True
    assert main(["predict", str(data), "--model", str(model), "--out", str(preds)]) == 0
    got = np.array([float(s) for s in preds.read_text().split()])
    assert len(got) == 150 and report["examples_seen"] == 150
    # Same config in-process; the file stores float32 weights.
    rep = train(ExampleStream(data, "regression"),
                LearnerConfig(task="regression", learning_rate=0.2))
    want = rep.model.predict(ExampleStream(data, "regression"))
    labels = np.array([e.label for e in ExampleStream(data, "regression")])
    assert np.mean((got - labels) ** 2) == pytest.approx(np.mean((want - labels) ** 2), abs=1e-6)


def test_cubic_defaults_to_24_bits():
    p = build_parser()
    args = p.parse_args(["train", "d", "--model", "m", "--expand", "cubic"])
    assert learner_config(args).bits == 24
    args = p.parse_args(["train", "d", "--model", "m", "--expand", "cubic", "--bits", "20"])
    assert learner_config(args).bits == 20
    args = p.parse_args(["train", "d", "--model", "m", "--stage-poly", "--sched-exponent", "1"])
    cfg = learner_config(args)
    assert cfg.stage_poly and cfg.alpha == 1.0 and cfg.bits == 18


def test_epochs_one_matches_linear(tmp_path, capsys):
    data = _write_regression(tmp_path / "r.vw", n=60)
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    assert main(["train", str(data), "--model", str(a), "--task", "regression", "--stage-poly",
                 "--epochs", "1"]) == 0
    assert main(["train", str(data), "--model", str(b), "--task", "regression"]) == 0
    capsys.readouterr()
    assert a.read_bytes()[12:] == b.read_bytes()[12:]


def test_usage_errors(tmp_path, capsys):
    assert main([]) == 1
    assert main(["train"]) == 1
    assert main(["train", "x.vw", "--model", "m", "--expand", "quad", "--stage-poly"]) == 1
    assert main(["train", "x.vw", "--model", "m", "--step-mode", "theorem"]) == 1
    capsys.readouterr()


def test_data_errors(tmp_path, capsys):
    bad = tmp_path / "bad.vw"
    bad.write_text("1 | a\noops | b\n")
    assert main(["train", str(bad), "--model", str(tmp_path / "m")]) == 2
    assert main(["train", str(tmp_path / "missing.vw"), "--model", str(tmp_path / "m")]) == 2
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"nope")
    good = tmp_path / "g.vw"
    good.write_text("1 | a\n")
    assert main(["predict", str(good), "--model", str(junk)]) == 2
    assert main(["bench", "no-such-dataset"]) == 2
    capsys.readouterr()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit_code(tmp_path, capsys):
    data = tmp_path / "big.vw"
    data.write_text("1 | 1:1e200\n" * 4)
    code = main(["train", str(data), "--model", str(tmp_path / "m"), "--task", "regression",
                 "--step-mode", "fixed", "--learning-rate", "1"])
    assert code == 3
    capsys.readouterr()


def test_regret_pass_and_fail(tmp_path, capsys):
    ok = tmp_path / "ok.jsonl"
    ok.write_text(json.dumps({"name": "small", "d": 3, "n_points": 8, "l2": 1.0, "T": 50,
                              "seeds": 100, "schedule": [[1, 2], [10, 3]]}) + "\n")
    trace = tmp_path / "t.jsonl"
    assert main(["regret", "--config", str(ok), "--out", str(trace)]) == 0
    out, err = capsys.readouterr()
    assert json.loads(out.splitlines()[0])["passed"] is True
    assert _config_line(err)[0]["seeds"] == 20
    assert sum(1 for _ in trace.open()) == 51
    # A single seed cannot estimate the deviation spread, so the mean-zero check fails.
    weak = tmp_path / "weak.jsonl"
    weak.write_text(json.dumps({"name": "w", "d": 3, "n_points": 8, "l2": 1.0, "T": 20,
                                "seeds": 1}) + "\n")
    assert main(["regret", "--config", str(weak)]) == 4
    capsys.readouterr()


def test_parallel_command(tmp_path, capsys):
    data = tmp_path / "p.vw"
    data.write_text("\n".join(format_example(e) for e in planted_interaction_task(800, seed=2)) + "\n")
    model = tmp_path / "pm.bin"
    assert main(["parallel", str(data), "--shards", "2", "--stage-poly", "--learning-rate", "0.02",
                 "--model", str(model)]) == 0
    out, err = capsys.readouterr()
    res = json.loads(out)
    assert 0.5 < res["auc"] <= 1.0 and model.exists()
    assert _config_line(err)[0]["passes"] == 5
