"""Ranking metrics and classifier-based baseline uncertainty scores.

OOD is the positive class throughout: larger scores should mean "more
likely OOD".
"""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .exceptions import DegenerateLabelsError, NoPositivesError


def _scored_labels(scores, labels):
    scores = np.asarray(scores, dtype=float).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have equal length")
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("labels must be binary (0 = in-distribution, 1 = OOD)")
    return scores, labels.astype(int)


def auroc(scores, labels) -> float:
    """P(random positive outranks random negative); ties count one half."""
    scores, labels = _scored_labels(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError("AUROC needs at least one positive and one negative")
    ranks = rankdata(scores)  # average ranks handle ties
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def aupr(scores, labels) -> float:
    """Average precision: ``sum_t (R_t - R_{t-1}) P_t`` over distinct thresholds."""
    scores, labels = _scored_labels(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise NoPositivesError("AUPR needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    # last index of each run of tied scores
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(y)[ends]
    predicted = ends + 1
    precision = tp / predicted
    recall = tp / n_pos
    prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev) * precision))


def _check_probs(probs):
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 2:
        raise ValueError("probabilities must be an m x K matrix")
    if np.any(probs < 0) or not np.allclose(probs.sum(axis=1), 1.0, atol=1e-9, rtol=0):
        raise ValueError("probability rows must be nonnegative and sum to 1")
    return probs


def accuracy_f1(probs, true_classes) -> tuple[float, float]:
    """Argmax accuracy and macro F1 (lowest class index wins argmax ties)."""
    probs = _check_probs(probs)
    k = probs.shape[1]
    if k < 2:
        raise ValueError("need at least two classes")
    truth = np.asarray(true_classes, dtype=int).reshape(-1)
    pred = probs.argmax(axis=1)
    acc = float(np.mean(pred == truth))
    f1s = []
    for c in range(k):
        tp = np.sum((pred == c) & (truth == c))
        n_pred = np.sum(pred == c)
        n_true = np.sum(truth == c)
        precision = tp / n_pred if n_pred else 0.0
        recall = tp / n_true if n_true else 0.0
        denom = precision + recall
        f1s.append(2 * precision * recall / denom if denom > 0 else 0.0)
    return acc, float(np.mean(f1s))


def entropy_score(probs) -> np.ndarray:
    """Shannon entropy per row in nats, with ``0 ln 0 = 0``."""
    probs = _check_probs(probs)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, probs * np.log(probs), 0.0)
    return -terms.sum(axis=1)


def max_prob_score(probs) -> np.ndarray:
    """Maximum class probability (a confidence; negate it to rank OOD)."""
    return _check_probs(probs).max(axis=1)


def max_prob_ood_score(probs) -> np.ndarray:
    return -max_prob_score(probs)


def score_report(scores, labels) -> dict:
    return {"auroc": auroc(scores, labels), "aupr": aupr(scores, labels)}
