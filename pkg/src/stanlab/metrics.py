"""Recognition metrics for multi-label predictions.

All three are instance-averaged. Ties in scores break toward the lower
class index, deterministically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError, DimensionError


@dataclass
class MetricReport:
    top1: float
    map: float
    f_score: float
    n: int

    def to_dict(self) -> dict:
        return {"top1": self.top1, "map": self.map,
                "f_score": self.f_score, "n": self.n}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_table(self) -> str:
        """Aligned text table, columns in top-1 / mAP / F-score order."""
        header = f"{'top-1':>8} {'mAP':>8} {'F-score':>8} {'n':>6}"
        row = f"{self.top1:8.4f} {self.map:8.4f} {self.f_score:8.4f} {self.n:6d}"
        return header + "\n" + row


def _as_matrix(preds, labels) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray([np.asarray(getattr(r, "data", r), dtype=np.float64) for r in preds])
    y = np.asarray([np.asarray(r, dtype=np.float64) for r in labels])
    if p.size == 0:
        raise ContractError("metrics need at least one instance")
    if p.ndim != 2 or y.shape != p.shape:
        raise DimensionError(f"prediction/label shapes differ: {p.shape} vs {y.shape}")
    return p, y


def _ordered_mean(values: np.ndarray) -> float:
    """Mean with a canonical reduction order, so instance order never
    changes the result at the bit level."""
    return float(np.sort(np.asarray(values, dtype=np.float64)).mean())


def top1_accuracy(preds: Sequence, labels: Sequence) -> float:
    """Fraction of instances whose highest-scored class is a true label."""
    p, y = _as_matrix(preds, labels)
    hits = y[np.arange(len(p)), p.argmax(axis=1)]
    return _ordered_mean(hits)


def mean_average_precision(preds: Sequence, labels: Sequence) -> float:
    """Instance-averaged AP of the score ranking.

    Per instance, each relevant label at rank r contributes
    (relevant labels at rank <= r) / r; instances must have at least one
    relevant label.
    """
    p, y = _as_matrix(preds, labels)
    if np.any(y.sum(axis=1) < 1):
        raise ContractError("every instance needs at least one relevant label")
    aps = []
    for scores, truth in zip(p, y):
        order = np.argsort(-scores, kind="stable")  # ties -> lower class index
        rel = truth[order]
        ranks = np.nonzero(rel)[0] + 1
        hits = np.arange(1, len(ranks) + 1)
        aps.append(float((hits / ranks).mean()))
    return _ordered_mean(aps)


def f_score(preds: Sequence, labels: Sequence, threshold: float = 0.5) -> float:
    """Instance-averaged F-measure of predictions binarized at ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ContractError(f"threshold must be in (0, 1), got {threshold}")
    p, y = _as_matrix(preds, labels)
    pred = (p >= threshold).astype(np.float64)
    inter = (pred * y).sum(axis=1)
    denom = pred.sum(axis=1) + y.sum(axis=1)
    per_instance = np.where(denom > 0, 2.0 * inter / np.maximum(denom, 1.0), 0.0)
    return _ordered_mean(per_instance)


def compute_all(preds: Sequence, labels: Sequence, threshold: float = 0.5) -> MetricReport:
    p, y = _as_matrix(preds, labels)
    return MetricReport(top1=top1_accuracy(p, y),
                        map=mean_average_precision(p, y),
                        f_score=f_score(p, y, threshold), n=len(p))
