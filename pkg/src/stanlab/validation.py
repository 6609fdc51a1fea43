"""Input validation helpers shared by the estimator and the loaders."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .data import ClipRecord
from .errors import DataLoadError, DimensionError
from .tensor import Tensor


def ensure_clip(obj) -> ClipRecord:
    """Coerce a ClipRecord or a mapping with audio/visual(/labels) keys."""
    if isinstance(obj, ClipRecord):
        return obj
    if isinstance(obj, dict):
        try:
            audio = obj["audio"]
            visual = obj["visual"]
        except KeyError as exc:
            raise DataLoadError(f"clip mapping is missing key {exc}") from exc
        labels = np.asarray(obj.get("labels", ()), dtype=np.float32)
        return ClipRecord(
            id=str(obj.get("id", "clip")),
            audio=audio if isinstance(audio, Tensor) else Tensor(audio),
            visual=visual if isinstance(visual, Tensor) else Tensor(visual),
            labels=labels,
            grounding=None if obj.get("grounding") is None
            else np.asarray(obj["grounding"], dtype=np.float32))
    raise DataLoadError(f"cannot interpret {type(obj).__name__} as a clip")


def check_clips(clips: Sequence[ClipRecord]) -> tuple[int, int, int, int, int]:
    """Validate a batch shares one feature geometry; returns (T, H, W, D_a, D_v)."""
    if not clips:
        raise DataLoadError("need at least one clip")
    first = clips[0]
    if first.audio.rank != 2 or first.visual.rank != 4:
        raise DimensionError(
            f"clip {first.id}: expected audio [T, D_a] and visual [T, H, W, D_v], "
            f"got {first.audio.shape} and {first.visual.shape}")
    t, d_a = first.audio.shape
    _, h, w, d_v = first.visual.shape
    for c in clips:
        if c.audio.shape != (t, d_a) or c.visual.shape != (t, h, w, d_v):
            raise DimensionError(
                f"clip {c.id}: feature shapes {c.audio.shape}/{c.visual.shape} differ "
                f"from the batch geometry ({t},{d_a})/({t},{h},{w},{d_v})")
        if c.audio.shape[0] != c.visual.shape[0]:
            raise DimensionError(f"clip {c.id}: audio and visual disagree on T")
    return t, h, w, d_a, d_v


def as_multihot_matrix(y, n: int, k: int | None = None) -> np.ndarray:
    """Validate/coerce labels into an (n, K) 0/1 float matrix."""
    arr = np.asarray(y, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[0] != n:
        raise DimensionError(f"labels must be (n, K) with n={n}, got {arr.shape}")
    if k is not None and arr.shape[1] != k:
        raise DimensionError(f"labels have K={arr.shape[1]}, expected {k}")
    if not np.all(np.isin(arr, (0.0, 1.0))):
        raise DataLoadError("labels must be 0/1")
    if np.any(arr.sum(axis=1) < 1):
        raise DataLoadError("every instance needs at least one positive label")
    return arr


def labels_matrix(clips: Sequence[ClipRecord], y=None, k: int | None = None) -> np.ndarray:
    """Labels from ``y`` when given, else from the clip records."""
    if y is not None:
        return as_multihot_matrix(y, len(clips), k)
    rows = []
    for c in clips:
        if c.labels is None or np.asarray(c.labels).size == 0:
            raise DataLoadError(f"clip {c.id} carries no labels and no y was given")
        rows.append(np.asarray(c.labels, dtype=np.float32))
    return as_multihot_matrix(np.stack(rows), len(clips), k)
