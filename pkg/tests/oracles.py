"""Independent brute-force reference implementations used by the tests.

Everything here is deliberately naive (explicit loops, direct counting) and
shares no code with the package.
"""

from __future__ import annotations

import numpy as np


def matmul_loops(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Affine map via three nested loops."""
    x2 = x.reshape(-1, x.shape[-1])
    n, din = x2.shape
    dout = w.shape[1]
    out = np.zeros((n, dout), dtype=np.float64)
    for i in range(n):
        for j in range(dout):
            acc = float(b[j])
            for k in range(din):
                acc += float(x2[i, k]) * float(w[k, j])
            out[i, j] = acc
    return out.reshape(x.shape[:-1] + (dout,))


def conv2d_loops(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-padded cross-correlation via six nested loops."""
    h, wd, cin = x.shape
    k = w.shape[0]
    cout = w.shape[3]
    pad = (k - 1) // 2
    out = np.zeros((h, wd, cout), dtype=np.float64)
    for i in range(h):
        for j in range(wd):
            for co in range(cout):
                acc = float(b[co])
                for di in range(k):
                    for dj in range(k):
                        ii, jj = i + di - pad, j + dj - pad
                        if 0 <= ii < h and 0 <= jj < wd:
                            for ci in range(cin):
                                acc += float(x[ii, jj, ci]) * float(w[di, dj, ci, co])
                out[i, j, co] = acc
    return out


def mean_loops(x: np.ndarray, axes: tuple[int, ...]) -> np.ndarray:
    """Mean over axes via flat summation."""
    keep = [a for a in range(x.ndim) if a not in axes]
    out_shape = tuple(x.shape[a] for a in keep)
    out = np.zeros(out_shape, dtype=np.float64)
    count = 1
    for a in axes:
        count *= x.shape[a]
    for idx in np.ndindex(x.shape):
        out_idx = tuple(idx[a] for a in keep)
        out[out_idx] += float(x[idx])
    return out / count


def bce_loops(p: np.ndarray, y: np.ndarray, eps: float = 1e-7) -> float:
    total = 0.0
    for pj, yj in zip(p, y):
        c = min(max(float(pj), eps), 1.0 - eps)
        total += float(yj) * np.log(c) + (1.0 - float(yj)) * np.log(1.0 - c)
    return -total / len(p)


def tvd_loops(p: np.ndarray, q: np.ndarray) -> float:
    total = 0.0
    for a, b in zip(p, q):
        total += abs(float(a) - float(b))
    return 0.5 * total


def top1_loops(preds: np.ndarray, labels: np.ndarray) -> float:
    hits = 0
    for scores, truth in zip(preds, labels):
        best, best_j = -np.inf, 0
        for j, s in enumerate(scores):
            if s > best:  # strict: ties keep the lowest index
                best, best_j = s, j
        hits += int(truth[best_j] == 1)
    return hits / len(preds)


def average_precision_counting(scores: np.ndarray, truth: np.ndarray) -> float:
    """AP via direct rank counting (ties broken toward lower class index)."""
    k = len(scores)
    aps = []
    for i in range(k):
        if truth[i] != 1:
            continue
        rank = 1
        hits_at_or_above = 0
        for j in range(k):
            higher = scores[j] > scores[i] or (scores[j] == scores[i] and j < i)
            if j != i and higher:
                rank += 1
            if truth[j] == 1 and (higher or j == i):
                hits_at_or_above += 1
        aps.append(hits_at_or_above / rank)
    return float(np.mean(aps))


def map_counting(preds: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean([average_precision_counting(p, y)
                          for p, y in zip(preds, labels)]))


def f_score_sets(preds: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> float:
    vals = []
    for scores, truth in zip(preds, labels):
        pred_set = {j for j, s in enumerate(scores) if s >= threshold}
        true_set = {j for j, t in enumerate(truth) if t == 1}
        denom = len(pred_set) + len(true_set)
        vals.append(0.0 if denom == 0 else 2.0 * len(pred_set & true_set) / denom)
    return float(np.mean(vals))
