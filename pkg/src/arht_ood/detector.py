"""Per-point OOD scoring and harmonic-corrected BH thresholding.

The training profile (mean and scatter of ``s`` posterior embeddings per
training input) is computed once.  Each test input gets its own ``n2``
posterior embeddings, its own pooled covariance and its own regulariser,
so a point's score never depends on the other test points.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bnn
from .evaluation import aupr, auroc
from .exceptions import (
    ArhtError,
    EmptyDatasetError,
    InsufficientTestSamplesError,
    InvalidAlphaError,
    InvalidPValueError,
)
from .hdtest import ArhtResult, DistributionSummary, adaptive_arht

logger = logging.getLogger(__name__)

DEFAULT_S = 5
DEFAULT_N2 = 300
DEFAULT_LAMBDA0 = 0.01
DEFAULT_ALPHA = 0.05

REPORT_COLUMNS = ("point_id", "label", "lambda", "rht", "arht", "p_value", "rejected")


@dataclass(frozen=True)
class InDistributionProfile:
    summary: DistributionSummary
    embed_dim: int
    s: int
    source_checkpoint: str | None = None


def upper_tail_pvalue(z: float) -> float:
    """``1 - Phi(z)`` through ``erfc`` so the far tail keeps full precision."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def point_rng(seed: int, point_id: int) -> np.random.Generator:
    """Independent stream for one test point, stable under reordering."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(point_id),)))


def profile_rng(seed: int) -> np.random.Generator:
    """Stream for the training-profile embeddings, disjoint from point streams."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2**32,)))


def build_profile(net, X, s: int = DEFAULT_S, rng=None, source_checkpoint=None) -> InDistributionProfile:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise EmptyDatasetError("cannot build a profile from an empty training set")
    rng = np.random.default_rng(rng)
    emb = bnn.embed_training_set(net, X, s, rng)
    return InDistributionProfile(
        summary=DistributionSummary.from_samples(emb),
        embed_dim=emb.shape[1],
        s=int(s),
        source_checkpoint=source_checkpoint,
    )


def score_embeddings(profile: InDistributionProfile, embeddings, lambda0: float = DEFAULT_LAMBDA0):
    """ARHT and upper-tail p-value of a test group of embeddings."""
    embeddings = np.asarray(embeddings, dtype=float)
    if embeddings.shape[0] < 2:
        raise InsufficientTestSamplesError(
            f"need at least 2 test embeddings, got {embeddings.shape[0]}"
        )
    group2 = DistributionSummary.from_samples(embeddings)
    res = adaptive_arht(profile.summary, group2, lambda0)
    return res, upper_tail_pvalue(res.statistic)


def score_point(
    profile: InDistributionProfile,
    net,
    x,
    n2: int = DEFAULT_N2,
    lambda0: float = DEFAULT_LAMBDA0,
    rng=None,
) -> tuple[ArhtResult, float]:
    if n2 < 2:
        raise InsufficientTestSamplesError(f"n2 must be >= 2, got {n2}")
    rng = np.random.default_rng(rng)
    emb = bnn.embed(net, x, n2, rng)
    return score_embeddings(profile, emb, lambda0)


def harmonic_number(m: int) -> float:
    return float(np.sum(1.0 / np.arange(1, m + 1))) if m > 0 else 0.0


def bh_threshold(p_values, alpha: float):
    """Step-up rule with per-rank bound ``alpha * k / (m * H_m)``.

    Returns ``(rejected, k_hat, threshold)`` where ``rejected`` is a boolean
    mask aligned with ``p_values``.  With no qualifying rank ``k_hat = 0``
    and ``threshold = 0``.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidAlphaError(f"alpha must lie in (0, 1), got {alpha}")
    p = np.asarray(p_values, dtype=float).reshape(-1)
    if np.any(~np.isfinite(p)) or np.any((p < 0.0) | (p > 1.0)):
        raise InvalidPValueError("p-values must be finite and in [0, 1]")
    m = p.shape[0]
    if m == 0:
        return np.zeros(0, dtype=bool), 0, 0.0
    bounds = alpha * np.arange(1, m + 1) / (m * harmonic_number(m))
    ok = np.nonzero(np.sort(p) <= bounds)[0]
    if ok.size == 0:
        return np.zeros(m, dtype=bool), 0, 0.0
    k_hat = int(ok[-1]) + 1
    threshold = float(bounds[k_hat - 1])
    return p <= threshold, k_hat, threshold


@dataclass
class DetectionRecord:
    point_id: int
    arht: ArhtResult
    p_value: float
    rejected: bool = False
    label: int | None = None


@dataclass
class DetectionReport:
    records: list[DetectionRecord]
    alpha: float
    k_hat: int
    threshold_used: float
    failures: list[dict] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.records)

    @property
    def rejected_ids(self) -> list[int]:
        return [r.point_id for r in self.records if r.rejected]

    def column(self, name: str) -> np.ndarray:
        getters = {
            "lambda": lambda r: r.arht.lam,
            "rht": lambda r: r.arht.rht,
            "arht": lambda r: r.arht.statistic,
            "p_value": lambda r: r.p_value,
        }
        return np.array([getters[name](r) for r in self.records], dtype=float)

    def labels(self):
        if not self.records or any(r.label is None for r in self.records):
            return None
        return np.array([r.label for r in self.records], dtype=int)

    def summary(self) -> dict:
        out = {
            "alpha": self.alpha,
            "m": self.m,
            "k_hat": self.k_hat,
            "threshold": self.threshold_used,
            "rejections": len(self.rejected_ids),
            "failures": list(self.failures),
        }
        out.update(self.metrics)
        out.update(self.meta)
        return out

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_COLUMNS)
            for r in self.records:
                w.writerow([
                    r.point_id,
                    "" if r.label is None else int(r.label),
                    repr(r.arht.lam),
                    repr(r.arht.rht),
                    repr(r.arht.statistic),
                    repr(r.p_value),
                    int(r.rejected),
                ])
        return path

    def write_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        return path


def read_report_csv(path) -> list[dict]:
    """Parse a report CSV back into typed row dicts."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        rows = []
        for row in reader:
            rows.append({
                "point_id": int(row["point_id"]),
                "label": int(row["label"]) if row["label"] != "" else None,
                "lambda": float(row["lambda"]),
                "rht": float(row["rht"]),
                "arht": float(row["arht"]),
                "p_value": float(row["p_value"]),
                "rejected": bool(int(row["rejected"])),
            })
    return rows


def apply_threshold(records: list[DetectionRecord], alpha: float):
    rejected, k_hat, threshold = bh_threshold([r.p_value for r in records], alpha)
    for r, flag in zip(records, rejected):
        r.rejected = bool(flag)
    return k_hat, threshold


def detect(
    profile: InDistributionProfile,
    net,
    X,
    n2: int = DEFAULT_N2,
    lambda0: float = DEFAULT_LAMBDA0,
    alpha: float = DEFAULT_ALPHA,
    seed: int = 0,
    labels=None,
    point_ids=None,
) -> DetectionReport:
    """Score every row of ``X`` and threshold the p-values jointly.

    Point ``i`` draws its posterior weights from ``point_rng(seed, id_i)``.
    A point whose statistic cannot be formed is logged in
    ``report.failures`` and left out of ``m``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(0 if X.size == 0 else 1, -1)
    if point_ids is None:
        point_ids = range(len(X))
    if not 0.0 < alpha < 1.0:
        raise InvalidAlphaError(f"alpha must lie in (0, 1), got {alpha}")

    records, failures = [], []
    for i, (pid, x) in enumerate(zip(point_ids, X)):
        try:
            res, pval = score_point(profile, net, x, n2, lambda0, point_rng(seed, pid))
        except ArhtError as exc:
            logger.warning("point %s quarantined: %s", pid, exc)
            failures.append({"point_id": int(pid), "error": f"{type(exc).__name__}: {exc}"})
            continue
        label = None if labels is None else int(labels[i])
        records.append(DetectionRecord(point_id=int(pid), arht=res, p_value=pval, label=label))

    k_hat, threshold = apply_threshold(records, alpha)
    report = DetectionReport(
        records=records,
        alpha=alpha,
        k_hat=k_hat,
        threshold_used=threshold,
        failures=failures,
        meta={"n2": n2, "lambda0": lambda0, "seed": seed, "s": profile.s},
    )
    y = report.labels()
    if y is not None and 0 < y.sum() < len(y):
        scores = report.column("arht")
        report.metrics = {"auroc": auroc(scores, y), "aupr": aupr(scores, y)}
    return report
