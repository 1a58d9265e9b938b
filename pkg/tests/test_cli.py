import csv
import json

import numpy as np
import pytest

from arht_ood.cli import main

SMALL = ["--synthetic", "table8", "--p", "8", "--n-train", "60", "--n-test-in", "15", "--n-test-ood", "15"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert main(["train", *SMALL, "--epochs", "20", "--hidden", "6", "--seed", "3", "--out-dir", str(out)]) == 0
    return out


def test_train_smoke(tmp_path):
    assert main(["train", *SMALL, "--epochs", "1", "--hidden", "4", "--out-dir", str(tmp_path)]) == 0
    trace = rows(tmp_path / "loss_trace.csv")
    assert len(trace) == 1 and list(trace[0]) == ["epoch", "loss", "task", "kl"]
    assert (tmp_path / "checkpoint.npz").exists()


def test_train_custom_checkpoint_path(tmp_path):
    ckpt = tmp_path / "nested" / "net.npz"
    args = ["train", *SMALL, "--epochs", "1", "--hidden", "4", "--checkpoint", str(ckpt), "--out-dir", str(tmp_path)]
    assert main(args) == 0
    assert ckpt.exists()


def test_train_requires_data(tmp_path, capsys):
    assert main(["train", "--out-dir", str(tmp_path)]) == 2
    assert "--data" in capsys.readouterr().err


def test_train_rejects_bad_flag_values(tmp_path):
    assert main(["train", *SMALL, "--epochs", "0", "--out-dir", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["train", "--epochs", "many"])
    assert exc.value.code == 2


def test_train_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["train", *SMALL, "--epochs", "3", "--hidden", "4", "--seed", "9",
                     "--out-dir", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "loss_trace.csv").read_bytes() == (tmp_path / "b" / "loss_trace.csv").read_bytes()


def test_train_from_csv(tmp_path):
    r = np.random.default_rng(0)
    X = r.standard_normal((30, 3))
    with open(tmp_path / "train.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_0", "x_1", "x_2", "target", "ood_flag"])
        for x in X:
            w.writerow([*x, float(np.linalg.norm(x)), 0])
    assert main(["train", "--data", str(tmp_path / "train.csv"), "--epochs", "2", "--hidden", "3",
                 "--out-dir", str(tmp_path)]) == 0


def test_detect_outputs(trained, tmp_path):
    args = ["detect", "--checkpoint", str(trained / "checkpoint.npz"), "--s", "2", "--n2", "30",
            "--out-dir", str(tmp_path / "d05")]
    assert main(args) == 0
    summary = json.loads((tmp_path / "d05" / "summary.json").read_text())
    assert {"auroc", "aupr", "k_hat", "threshold"} <= set(summary)
    report = rows(tmp_path / "d05" / "report.csv")
    assert len(report) == 30
    assert list(report[0]) == ["point_id", "label", "lambda", "rht", "arht", "p_value", "rejected"]
    metrics = {r["metric"]: r["value"] for r in rows(tmp_path / "d05" / "metrics.csv")}
    assert "auroc" in metrics

    assert main([*args[:-1], str(tmp_path / "d01"), "--alpha", "0.01"]) == 0
    loose = sum(r["rejected"] == "1" for r in report)
    strict = sum(r["rejected"] == "1" for r in rows(tmp_path / "d01" / "report.csv"))
    assert strict <= loose


def test_detect_byte_identical(trained, tmp_path):
    for name in ("a", "b"):
        assert main(["detect", "--checkpoint", str(trained / "checkpoint.npz"), "--s", "2", "--n2", "20",
                     "--seed", "4", "--out-dir", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "report.csv").read_bytes() == (tmp_path / "b" / "report.csv").read_bytes()


def test_detect_missing_checkpoint(tmp_path, capsys):
    assert main(["detect", "--checkpoint", str(tmp_path / "nope.npz"), "--out-dir", str(tmp_path)]) == 1
    assert "not found" in capsys.readouterr().err


def test_detect_usage_errors(trained, tmp_path):
    ck = str(trained / "checkpoint.npz")
    assert main(["detect", "--out-dir", str(tmp_path)]) == 2
    assert main(["detect", "--checkpoint", ck, "--n2", "1", "--out-dir", str(tmp_path)]) == 2
    assert main(["detect", "--checkpoint", ck, "--alpha", "1.5", "--out-dir", str(tmp_path)]) == 2


def test_simulate_null_single_replicate(tmp_path):
    args = ["simulate-null", "--p", "10", "--n1", "15", "--n2", "15", "--replicates", "1", "--out-dir", str(tmp_path)]
    assert main(args) == 0
    reps = rows(tmp_path / "null_replicates.csv")
    assert len(reps) == 1 and list(reps[0]) == ["replicate", "lambda", "rht", "arht"]
    summary = json.loads((tmp_path / "null_summary.json").read_text())
    assert summary["replicates"] == 1


def test_densities(tmp_path):
    assert main(["densities", "--pairs", "10:20,1:3", "--grid-min", "-6", "--grid-max", "40",
                 "--grid-points", "4601", "--out-dir", str(tmp_path)]) == 0
    table = rows(tmp_path / "densities.csv")
    x = np.array([float(r["x"]) for r in table])
    normal = np.array([float(r["normal"]) for r in table])
    f = np.array([float(r["F_10_10"]) for r in table])
    i0 = int(np.argmin(np.abs(x)))
    assert normal[i0] == pytest.approx(0.39894, abs=1e-5)
    assert np.all(f[x <= 0] == 0) and np.all(f[x > 0] > 0)
    assert np.trapezoid(f, x) == pytest.approx(1.0, abs=2e-3)
    assert "F_1_2" in table[0]


def test_densities_invalid_pair(tmp_path):
    assert main(["densities", "--pairs", "10:10", "--out-dir", str(tmp_path)]) == 2
    assert main(["densities", "--pairs", "ten", "--out-dir", str(tmp_path)]) == 2


def test_densities_histogram_from_report(trained, tmp_path):
    assert main(["detect", "--checkpoint", str(trained / "checkpoint.npz"), "--s", "2", "--n2", "20",
                 "--out-dir", str(tmp_path)]) == 0
    assert main(["densities", "--pairs", "5:10", "--grid-points", "11", "--bins", "7",
                 "--report", str(tmp_path / "report.csv"), "--out-dir", str(tmp_path)]) == 0
    hist = rows(tmp_path / "score_histogram.csv")
    assert len(hist) == 7
    width = np.array([float(r["bin_right"]) - float(r["bin_left"]) for r in hist])
    for col in ("in_distribution", "ood"):
        dens = np.array([float(r[col]) for r in hist])
        assert np.sum(dens * width) == pytest.approx(1.0)


def test_config_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# overrides\nreplicates = 3\np = 6\nn1=8\nn2=8\n")
    assert main(["simulate-null", "--config", str(cfg), "--out-dir", str(tmp_path / "a")]) == 0
    assert len(rows(tmp_path / "a" / "null_replicates.csv")) == 3
    assert main(["simulate-null", "--config", str(cfg), "--replicates", "2", "--out-dir", str(tmp_path / "b")]) == 0
    assert len(rows(tmp_path / "b" / "null_replicates.csv")) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("bogus = 1\n")
    assert main(["simulate-null", "--config", str(bad), "--out-dir", str(tmp_path)]) == 2
