"""Command-line entry point: ``arht-ood {train,detect,simulate-null,densities}``.

Values come from, in increasing precedence: built-in defaults, a
``key=value`` file given by ``--config``, and command-line flags.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bnn, detector, experiments, figures
from .data import LabeledVectors, SyntheticSpec, gen_table8, read_csv, read_idx
from .exceptions import ArhtError

logger = logging.getLogger("arht_ood")


class UsageError(Exception):
    pass


DEFAULTS = {
    "common": {"seed": 0, "out_dir": ".", "verbose": False},
    "train": {
        "synthetic": None, "data": None, "labels": None, "task": None,
        "epochs": 100, "learning_rate": None, "batch_size": 32, "hidden": 64,
        "activation": "relu", "kl_weight": None, "checkpoint": None,
        "p": 128, "n_train": 500, "n_test_in": 500, "n_test_ood": 500,
    },
    "detect": {
        "synthetic": None, "data": None, "labels": None, "test_data": None,
        "test_labels": None, "checkpoint": None, "s": detector.DEFAULT_S,
        "n2": detector.DEFAULT_N2, "lambda0": detector.DEFAULT_LAMBDA0,
        "alpha": detector.DEFAULT_ALPHA, "p": 128, "n_train": 500,
        "n_test_in": 500, "n_test_ood": 500,
    },
    "simulate-null": {
        "p": 100, "n1": 150, "n2": 150, "replicates": 2000,
        "lambda0": detector.DEFAULT_LAMBDA0,
    },
    "densities": {
        "pairs": "10:20,1000:2000", "grid_min": -5.0, "grid_max": 20.0,
        "grid_points": 5001, "report": None, "bins": 50,
    },
}


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, help="base seed (default 0)")
    p.add_argument("--config", help="key=value file with default overrides")
    p.add_argument("--out-dir", dest="out_dir", help="output directory (default .)")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_data(p: argparse.ArgumentParser):
    p.add_argument("--synthetic", choices=["table8"], help="use a built-in synthetic benchmark")
    p.add_argument("--data", help="training data: CSV (x..., target, ood_flag) or IDX images")
    p.add_argument("--labels", help="IDX label file paired with --data")
    p.add_argument("--p", type=int, help="input dimension of the synthetic benchmark")
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--n-test-in", dest="n_test_in", type=int)
    p.add_argument("--n-test-ood", dest="n_test_ood", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arht-ood",
        description="OOD detection with posterior embeddings and adaptive regularised Hotelling tests.",
        argument_default=argparse.SUPPRESS,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train the variational encoder", argument_default=argparse.SUPPRESS)
    _add_common(tr)
    _add_data(tr)
    tr.add_argument("--task", choices=list(bnn.TASKS))
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--learning-rate", dest="learning_rate", type=float)
    tr.add_argument("--batch-size", dest="batch_size", type=int)
    tr.add_argument("--hidden", type=int, help="hidden width (= embedding dimension)")
    tr.add_argument("--activation", choices=list(bnn.ACTIVATIONS))
    tr.add_argument("--kl-weight", dest="kl_weight", type=float)
    tr.add_argument("--checkpoint", help="output checkpoint path (default OUT/checkpoint.npz)")

    de = sub.add_parser("detect", help="score a test set and apply the BH rule", argument_default=argparse.SUPPRESS)
    _add_common(de)
    _add_data(de)
    de.add_argument("--test-data", dest="test_data")
    de.add_argument("--test-labels", dest="test_labels")
    de.add_argument("--checkpoint")
    de.add_argument("--s", type=int, help="weight draws per training point (default 5)")
    de.add_argument("--n2", type=int, help="weight draws per test point (default 300)")
    de.add_argument("--lambda0", type=float, help="base of the lambda grid (default 0.01)")
    de.add_argument("--alpha", type=float, help="FDR level (default 0.05)")

    sn = sub.add_parser("simulate-null", help="ARHT replicates under the null", argument_default=argparse.SUPPRESS)
    _add_common(sn)
    sn.add_argument("--p", type=int)
    sn.add_argument("--n1", type=int)
    sn.add_argument("--n2", type=int)
    sn.add_argument("--replicates", type=int)
    sn.add_argument("--lambda0", type=float)

    dn = sub.add_parser("densities", help="emit null-density and score-histogram curves", argument_default=argparse.SUPPRESS)
    _add_common(dn)
    dn.add_argument("--pairs", help="comma list of p:n pairs, e.g. 10:20,1000:2000")
    dn.add_argument("--grid-min", dest="grid_min", type=float)
    dn.add_argument("--grid-max", dest="grid_max", type=float)
    dn.add_argument("--grid-points", dest="grid_points", type=int)
    dn.add_argument("--report", help="detection report CSV to histogram by label")
    dn.add_argument("--bins", type=int)
    return parser


def read_config(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (t.strip() for t in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(value, default):
    if not isinstance(value, str):
        return value
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if value.lower() in ("none", ""):
        return None
    return value


_NUMERIC_KEYS = {"learning_rate": float, "kl_weight": float}


def resolve(args: argparse.Namespace) -> argparse.Namespace:
    cfg = {**DEFAULTS["common"], **DEFAULTS[args.command]}
    given = vars(args).copy()
    if "config" in given:
        try:
            file_cfg = read_config(given["config"])
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        for key, value in file_cfg.items():
            if key not in cfg:
                raise UsageError(f"unknown config key {key!r} for {args.command}")
            try:
                cfg[key] = _NUMERIC_KEYS[key](value) if key in _NUMERIC_KEYS else _coerce(value, cfg[key])
            except ValueError as exc:
                raise UsageError(f"bad value for {key}: {value!r}") from exc
    given.pop("config", None)
    cfg.update(given)
    return argparse.Namespace(**cfg)


# --------------------------------------------------------------------------
# helpers


def _out_dir(cfg) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _spec(cfg, seed) -> SyntheticSpec:
    return SyntheticSpec(dim=cfg.p, n_train=cfg.n_train, n_test_in=cfg.n_test_in,
                         n_test_ood=cfg.n_test_ood, seed=seed)


def _load(path, labels=None) -> LabeledVectors:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_csv(path)
    return read_idx(path, labels)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(v):
    return repr(float(v))


def _check_positive(**values):
    for name, v in values.items():
        if v is None or v <= 0:
            raise UsageError(f"--{name.replace('_', '-')} must be positive, got {v}")


# --------------------------------------------------------------------------
# commands


def cmd_train(cfg) -> int:
    if cfg.synthetic is None and cfg.data is None:
        raise UsageError("train needs --data PATH or --synthetic table8")
    _check_positive(epochs=cfg.epochs, batch_size=cfg.batch_size, hidden=cfg.hidden)
    out = _out_dir(cfg)
    if cfg.synthetic == "table8":
        train_set, _ = gen_table8(_spec(cfg, cfg.seed))
        task = cfg.task or "regression-norm"
        lr = cfg.learning_rate or experiments.TABLE8_TRAIN["learning_rate"]
        meta = {"synthetic": "table8", "data_seed": cfg.seed, "p": cfg.p, "n_train": cfg.n_train,
                "n_test_in": cfg.n_test_in, "n_test_ood": cfg.n_test_ood}
    else:
        train_set = _load(cfg.data, cfg.labels)
        task = cfg.task or "regression"
        lr = cfg.learning_rate or bnn.TrainConfig.learning_rate
        meta = {"data": str(cfg.data), "labels": cfg.labels}
    _check_positive(learning_rate=lr)
    targets = train_set.targets
    n_out = int(np.max(targets)) + 1 if task == "classification" else 1
    net0 = bnn.VariationalNet.initialize(
        [train_set.inputs.shape[1], cfg.hidden, n_out], np.random.default_rng(cfg.seed),
        activation=cfg.activation, seed=cfg.seed,
    )
    config = bnn.TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, learning_rate=lr,
                             kl_weight=cfg.kl_weight, seed=cfg.seed, task=task)
    net, trace = bnn.train(net0, train_set.inputs, targets, config)
    net.meta = {**meta, "task": task, "learning_rate": lr, "epochs": cfg.epochs}
    ckpt = Path(cfg.checkpoint) if cfg.checkpoint else out / "checkpoint.npz"
    bnn.save_checkpoint(net, ckpt)
    _write_rows(out / "loss_trace.csv", ["epoch", "loss", "task", "kl"],
                [[r["epoch"], _fmt(r["loss"]), _fmt(r["task"]), _fmt(r["kl"])] for r in trace])
    logger.info("wrote %s and %s", ckpt, out / "loss_trace.csv")
    print(f"final loss {trace[-1]['loss']:.6g} after {len(trace)} epochs")
    return 0


def cmd_detect(cfg) -> int:
    if cfg.checkpoint is None:
        raise UsageError("detect needs --checkpoint")
    _check_positive(s=cfg.s, n2=cfg.n2, lambda0=cfg.lambda0)
    if cfg.n2 < 2:
        raise UsageError("--n2 must be >= 2")
    if not 0 < cfg.alpha < 1:
        raise UsageError("--alpha must lie in (0, 1)")
    ckpt = Path(cfg.checkpoint)
    if not ckpt.exists():
        print(f"error: checkpoint {ckpt} not found", file=sys.stderr)
        return 1
    net = bnn.load_checkpoint(ckpt)
    synthetic = cfg.synthetic or net.meta.get("synthetic")
    if synthetic == "table8" and cfg.data is None:
        m = net.meta
        spec = SyntheticSpec(
            dim=m.get("p", cfg.p), n_train=m.get("n_train", cfg.n_train),
            n_test_in=m.get("n_test_in", cfg.n_test_in), n_test_ood=m.get("n_test_ood", cfg.n_test_ood),
            seed=m.get("data_seed", cfg.seed),
        )
        train_set, test_set = gen_table8(spec)
    elif cfg.data is not None and cfg.test_data is not None:
        train_set = _load(cfg.data, cfg.labels)
        test_set = _load(cfg.test_data, cfg.test_labels)
    else:
        raise UsageError("detect needs --synthetic table8 or both --data and --test-data")

    out = _out_dir(cfg)
    profile = detector.build_profile(net, train_set.inputs, cfg.s, detector.profile_rng(cfg.seed),
                                     source_checkpoint=str(ckpt))
    flags = test_set.ood_flags
    report = detector.detect(profile, net, test_set.inputs, n2=cfg.n2, lambda0=cfg.lambda0,
                             alpha=cfg.alpha, seed=cfg.seed, labels=flags)
    report.meta["checkpoint"] = str(ckpt)
    report.write_csv(out / "report.csv")
    report.write_json(out / "summary.json")
    _write_rows(out / "metrics.csv", ["metric", "value"],
                [[k, _fmt(v)] for k, v in sorted(report.metrics.items())]
                + [["rejections", len(report.rejected_ids)], ["k_hat", report.k_hat]])
    print(f"m={report.m} rejected={len(report.rejected_ids)} threshold={report.threshold_used:.6g}")
    if report.metrics:
        print(f"AUROC={report.metrics['auroc']:.4f} AUPR={report.metrics['aupr']:.4f}")
    return 0


def cmd_simulate_null(cfg) -> int:
    for name in ("p", "n1", "n2"):
        if getattr(cfg, name) < 2:
            raise UsageError(f"--{name} must be >= 2")
    _check_positive(replicates=cfg.replicates, lambda0=cfg.lambda0)
    out = _out_dir(cfg)
    results = experiments.simulate_null(cfg.p, cfg.n1, cfg.n2, cfg.replicates, cfg.lambda0, cfg.seed)
    _write_rows(out / "null_replicates.csv", ["replicate", "lambda", "rht", "arht"],
                [[i, _fmt(r.lam), _fmt(r.rht), _fmt(r.statistic)] for i, r in enumerate(results)])
    summary = experiments.null_summary([r.statistic for r in results])
    summary.update({"p": cfg.p, "n1": cfg.n1, "n2": cfg.n2, "lambda0": cfg.lambda0, "seed": cfg.seed})
    (out / "null_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"mean={summary['mean']:.4f} sd={summary['sd']:.4f} tail@1.645={summary['tail_1.645']:.4f}")
    return 0


def _parse_pairs(text):
    pairs = []
    for item in text.split(","):
        try:
            p, n = (int(t) for t in item.split(":"))
        except ValueError as exc:
            raise UsageError(f"bad pair {item!r}; expected p:n") from exc
        if p < 1 or n <= p:
            raise UsageError(f"invalid pair p={p}, n={n}: need 1 <= p < n")
        pairs.append((p, n))
    return pairs


def cmd_densities(cfg) -> int:
    pairs = _parse_pairs(cfg.pairs)
    if cfg.grid_points < 2 or not cfg.grid_max > cfg.grid_min:
        raise UsageError("grid needs grid_points >= 2 and grid_max > grid_min")
    out = _out_dir(cfg)
    grid = np.linspace(cfg.grid_min, cfg.grid_max, cfg.grid_points)
    cols = figures.density_table(grid, pairs)
    names = list(cols)
    _write_rows(out / "densities.csv", names,
                [[_fmt(cols[k][i]) for k in names] for i in range(grid.size)])
    if cfg.report is not None:
        rows = detector.read_report_csv(cfg.report)
        if any(r["label"] is None for r in rows):
            raise UsageError("--report must carry labels to split by ood_flag")
        hist = figures.score_histograms([r["arht"] for r in rows], [r["label"] for r in rows], cfg.bins)
        hnames = list(hist)
        _write_rows(out / "score_histogram.csv", hnames,
                    [[_fmt(hist[k][i]) for k in hnames] for i in range(len(hist["bin_left"]))])
    print(f"wrote {out / 'densities.csv'}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "detect": cmd_detect,
    "simulate-null": cmd_simulate_null,
    "densities": cmd_densities,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on malformed flags
    try:
        cfg = resolve(args)
        logging.basicConfig(level=logging.DEBUG if cfg.verbose else logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except (ArhtError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
