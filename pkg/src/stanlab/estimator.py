"""Scikit-learn style front door for the attention classifier.

``X`` is a sequence of :class:`~stanlab.data.ClipRecord` (or mappings with
``audio``/``visual``/``labels``); ``y`` may override the records' multi-hot
labels as an (n, K) matrix. The estimator clones, (de)parametrizes, and
scores like any sklearn classifier, so it drops into pipelines and model
selection, while ``explain`` exposes the attention maps the model's
decisions rest on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import ClipRecord
from .errors import ConfigurationError
from .model import StanConfig, StanParams, forward, predict_proba
from .metrics import compute_all, top1_accuracy, MetricReport
from .tensor import no_grad
from .training import TrainConfig, train
from .validation import check_clips, ensure_clip, labels_matrix


@dataclass
class AttentionMaps:
    """Per-clip attention as plain arrays (space map may be None in audio
    mode)."""

    clip_id: str
    space: np.ndarray | None
    time: np.ndarray
    space_time: np.ndarray


class StanEventClassifier(BaseEstimator):
    """Multi-label audio-visual event classifier with built-in attention.

    Parameters mirror the model/training configuration; fitted state lives
    in ``params_`` (weights), ``config_`` (resolved geometry), and
    ``history_`` (per-epoch losses).
    """

    def __init__(self, mode: str = "audio-visual", embed_dim: int = 32,
                 gate_kernel_size: int = 3, hidden_layer: bool = False,
                 learning_rate: float = 1e-3, epochs: int = 30,
                 batch_size: int = 32, validation_fraction: float = 0.0,
                 seed: int = 0):
        self.mode = mode
        self.embed_dim = embed_dim
        self.gate_kernel_size = gate_kernel_size
        self.hidden_layer = hidden_layer
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.validation_fraction = validation_fraction
        self.seed = seed

    # -- sklearn interface ---------------------------------------------------

    def fit(self, X, y=None) -> "StanEventClassifier":
        clips = [ensure_clip(x) for x in X]
        t, h, w, d_a, d_v = check_clips(clips)
        labels = labels_matrix(clips, y)
        k = labels.shape[1]
        clips = [ClipRecord(id=c.id, audio=c.audio, visual=c.visual,
                            labels=labels[i], grounding=c.grounding,
                            spatial_mask=c.spatial_mask)
                 for i, c in enumerate(clips)]

        cfg = StanConfig(k=k, t=t, h=h, w=w, d_a=d_a, d_v=d_v,
                         d=self.embed_dim, mode=self.mode,
                         gate_kernel_size=self.gate_kernel_size,
                         hidden_layer=self.hidden_layer)
        cfg.validate()

        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigurationError("validation_fraction must be in [0, 1)")
        splits: dict[str, list[ClipRecord]] = {"train": clips}
        if self.validation_fraction > 0:
            rng = np.random.default_rng(self.seed)
            order = rng.permutation(len(clips))
            n_val = max(1, int(round(self.validation_fraction * len(clips))))
            if n_val >= len(clips):
                raise ConfigurationError("validation_fraction leaves no training clips")
            splits = {"train": [clips[i] for i in order[n_val:]],
                      "val": [clips[i] for i in order[:n_val]]}

        tcfg = TrainConfig(learning_rate=self.learning_rate, epochs=self.epochs,
                           batch_size=self.batch_size, seed=self.seed)
        result = train(splits, cfg, tcfg)
        self.params_ = result.params
        self.config_ = cfg
        self.history_ = result.log
        self.classes_ = np.arange(k)
        self.n_classes_ = k
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        clips = self._validated(X)
        return predict_proba(clips, self.params_, self.config_)

    def predict(self, X, threshold: float = 0.5) -> np.ndarray:
        """Multi-hot predictions: probabilities binarized at ``threshold``."""
        return (self.predict_proba(X) >= threshold).astype(np.int64)

    def score(self, X, y=None) -> float:
        """Top-1 accuracy (the most confident class must be a true label)."""
        check_is_fitted(self, "params_")
        clips = self._validated(X)
        labels = labels_matrix(clips, y, k=self.n_classes_)
        return top1_accuracy(self.predict_proba(clips), labels)

    def evaluate(self, X, y=None) -> MetricReport:
        """Top-1, instance mAP and instance F-score in one report."""
        check_is_fitted(self, "params_")
        clips = self._validated(X)
        labels = labels_matrix(clips, y, k=self.n_classes_)
        return compute_all(self.predict_proba(clips), labels)

    def explain(self, X) -> list[AttentionMaps]:
        """Attention maps for each clip (space, time, combined)."""
        check_is_fitted(self, "params_")
        clips = self._validated(X)
        out = []
        with no_grad():
            for c in clips:
                res = forward(c, self.params_, self.config_)
                out.append(AttentionMaps(
                    clip_id=c.id,
                    space=None if res.attention.a_s is None
                    else res.attention.a_s.numpy().copy(),
                    time=res.attention.a_t.numpy().copy(),
                    space_time=res.attention.a_st.numpy().copy()))
        return out

    def _validated(self, X) -> list[ClipRecord]:
        clips = [ensure_clip(x) for x in X]
        t, h, w, d_a, d_v = check_clips(clips)
        cfg = self.config_
        if (t, h, w, d_a, d_v) != (cfg.t, cfg.h, cfg.w, cfg.d_a, cfg.d_v):
            raise ConfigurationError(
                f"clips have geometry T={t} H={h} W={w} D_a={d_a} D_v={d_v}, "
                f"model was fit with T={cfg.t} H={cfg.h} W={cfg.w} "
                f"D_a={cfg.d_a} D_v={cfg.d_v}")
        return clips

    def __sklearn_is_fitted__(self) -> bool:
        return hasattr(self, "params_")
