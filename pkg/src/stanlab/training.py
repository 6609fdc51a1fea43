"""Multi-label objective and the optimization loop.

The objective is the sum of three per-class binary cross-entropies, one per
head (final, activation-map, activation-value), each averaged over classes.
Input features are never modified; only the head parameters train.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import ClipRecord
from .errors import ConfigurationError, ContractError, DimensionError
from .model import ForwardOutput, StanConfig, StanParams, forward, predict_proba
from .tensor import ParamTensor, Tensor

_CLAMP_EPS = 1e-7
_clamp_events = 0


def clamp_event_count() -> int:
    """How many probability elements have been clamped away from {0, 1}."""
    return _clamp_events


def reset_clamp_events() -> None:
    global _clamp_events
    _clamp_events = 0


def bce_multilabel(p: Tensor, y: np.ndarray | Sequence[float]) -> Tensor:
    """Mean binary cross-entropy over classes: scalar, always >= 0.

    Probabilities at exactly 0 or 1 (possible after sigmoid saturation) are
    clamped to [1e-7, 1 - 1e-7]; each clamped element bumps a counter that
    :func:`clamp_event_count` exposes.
    """
    global _clamp_events
    y_arr = np.asarray(y, dtype=np.float64)
    if p.rank != 1 or y_arr.shape != p.shape:
        raise DimensionError(f"bce_multilabel shapes differ: p {p.shape}, y {y_arr.shape}")
    k = p.shape[0]

    pv = p.data.astype(np.float64)
    lo, hi = _CLAMP_EPS, 1.0 - _CLAMP_EPS
    clamped = np.clip(pv, lo, hi)
    n_clamped = int(np.count_nonzero((pv < lo) | (pv > hi)))
    if n_clamped:
        _clamp_events += n_clamped

    loss = -(y_arr * np.log(clamped) + (1.0 - y_arr) * np.log1p(-clamped)).sum() / k
    value = np.asarray(loss, dtype=p.dtype)

    def backward(g: np.ndarray) -> None:
        inside = (pv >= lo) & (pv <= hi)
        dp = np.where(inside,
                      -(y_arr / clamped - (1.0 - y_arr) / (1.0 - clamped)) / k,
                      0.0)
        p._accumulate((float(g) * dp).astype(p.dtype))

    return Tensor._node(value, (p,), backward)


@dataclass
class LossBreakdown:
    """The three objective terms; total is always their sum (absent heads
    contribute exactly 0)."""

    bce_final: float
    bce_cam: float
    bce_cav: float

    @property
    def total(self) -> float:
        return self.bce_final + self.bce_cam + self.bce_cav


def stan_loss(out: ForwardOutput, y: np.ndarray | Sequence[float]) -> tuple[Tensor, LossBreakdown]:
    """Sum the per-head cross-entropies. Returns the differentiable scalar
    and a float breakdown."""
    term_final = bce_multilabel(out.p, y)
    total = term_final
    cam_val = 0.0
    if out.p_cam is not None:
        term_cam = bce_multilabel(out.p_cam, y)
        cam_val = term_cam.item()
        total = _scalar_add(total, term_cam)
    term_cav = bce_multilabel(out.p_cav, y)
    total = _scalar_add(total, term_cav)
    return total, LossBreakdown(bce_final=term_final.item(), bce_cam=cam_val,
                                bce_cav=term_cav.item())


def _scalar_add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward(g: np.ndarray) -> None:
        a._accumulate(g)
        b._accumulate(g)

    return Tensor._node(out, (a, b), backward)


# ---------------------------------------------------------------------------
# optimizer

class Adam:
    """Adam with bias correction. Moments are kept in 64-bit; the update is
    cast back to the parameter dtype, and a zero gradient at fresh state
    leaves parameters bit-identical. ``lr_scales`` applies a per-parameter
    multiplier to the base learning rate (parameter groups)."""

    def __init__(self, params: Sequence[ParamTensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 lr_scales: Sequence[float] | None = None):
        if lr < 0:
            raise ConfigurationError(f"learning rate must be non-negative, got {lr}")
        for name, b in (("beta1", beta1), ("beta2", beta2)):
            if not 0.0 <= b < 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1), got {b}")
        self.params = list(params)
        if lr_scales is None:
            lr_scales = [1.0] * len(self.params)
        if len(lr_scales) != len(self.params):
            raise ConfigurationError("lr_scales must match the parameter list")
        if any(s < 0 for s in lr_scales):
            raise ConfigurationError("lr_scales must be non-negative")
        self.lr = lr
        self.lr_scales = list(lr_scales)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(p.shape, dtype=np.float64) for p in self.params]
        self.v = [np.zeros(p.shape, dtype=np.float64) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = np.zeros(p.shape, dtype=np.float64) if p.grad is None \
                else p.grad.astype(np.float64)
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            m_hat = self.m[i] / (1.0 - b1 ** self.t)
            v_hat = self.v[i] / (1.0 - b2 ** self.t)
            update = (self.lr * self.lr_scales[i]) * m_hat / (np.sqrt(v_hat) + self.eps)
            p.data = (p.data.astype(np.float64) - update).astype(p.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def adam_step(opt: Adam) -> None:
    """One optimizer step (alias kept for symmetry with the tests)."""
    opt.step()


# ---------------------------------------------------------------------------
# training loop

@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    lr_decay_factor: float = 0.1
    lr_decay_fraction: float = 2.0 / 3.0
    # Attention gates train on their own (scaled) learning rate: the
    # feature/classifier weights need a fast rate to fit reliably, while
    # the gates stay on a slower one so attention opens only where the
    # evidence keeps pushing.
    gate_lr_scale: float = 1.0

    def validate(self) -> None:
        # zero is allowed (a no-op optimizer is a meaningful control)
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be non-negative")
        for name, b in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0.0 <= b < 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be >= 1")
        if not 0 < self.lr_decay_fraction <= 1:
            raise ConfigurationError("lr_decay_fraction must be in (0, 1]")
        if self.gate_lr_scale < 0:
            raise ConfigurationError("gate_lr_scale must be non-negative")


@dataclass
class EpochLog:
    epoch: int
    loss_total: float
    loss_final: float
    loss_cam: float
    loss_cav: float
    val_top1: float | None = None

    def to_dict(self) -> dict:
        doc = {"epoch": self.epoch, "loss_total": self.loss_total,
               "loss_final": self.loss_final, "loss_cam": self.loss_cam,
               "loss_cav": self.loss_cav}
        if self.val_top1 is not None:
            doc["val_top1"] = self.val_top1
        return doc


@dataclass
class TrainResult:
    params: StanParams
    log: list[EpochLog]
    best_epoch: int | None = None


def _top1(probs: np.ndarray, labels: np.ndarray) -> float:
    hits = labels[np.arange(len(probs)), probs.argmax(axis=1)]
    return float(hits.mean())


def train(splits: Mapping[str, Sequence[ClipRecord]], stan_cfg: StanConfig,
          train_cfg: TrainConfig, params: StanParams | None = None) -> TrainResult:
    """Mini-batch training with seeded shuffling.

    Gradients average over each batch; the input feature tensors are never
    written to. When a "val" split is present, the parameters returned are
    the snapshot with the best validation top-1, otherwise the final ones.
    """
    train_cfg.validate()
    stan_cfg.validate()
    clips = list(splits.get("train", ()))
    if not clips:
        raise ConfigurationError("training requires a non-empty 'train' split")
    val_clips = list(splits.get("val", ()))
    val_labels = np.stack([c.labels for c in val_clips]) if val_clips else None

    if params is None:
        params = StanParams(stan_cfg, seed=train_cfg.seed)
    tensors = params.tensors()
    scales = [train_cfg.gate_lr_scale
              if p.name.startswith(("time_gate", "space_gate")) else 1.0
              for p in tensors]
    opt = Adam(tensors, lr=train_cfg.learning_rate,
               beta1=train_cfg.beta1, beta2=train_cfg.beta2,
               eps=train_cfg.adam_eps, lr_scales=scales)
    rng = np.random.default_rng(train_cfg.seed)
    decay_epoch = max(1, int(round(train_cfg.epochs * train_cfg.lr_decay_fraction)))

    log: list[EpochLog] = []
    best_epoch: int | None = None
    best_top1 = -1.0
    best_params: StanParams | None = None

    for epoch in range(1, train_cfg.epochs + 1):
        if epoch == decay_epoch and train_cfg.lr_decay_factor != 1.0 and epoch > 1:
            opt.lr *= train_cfg.lr_decay_factor
        order = rng.permutation(len(clips))
        sums = np.zeros(3, dtype=np.float64)
        n_batches = 0
        for start in range(0, len(order), train_cfg.batch_size):
            batch = order[start:start + train_cfg.batch_size]
            params.zero_grad()
            batch_sums = np.zeros(3, dtype=np.float64)
            for idx in batch:
                clip = clips[int(idx)]
                out = forward(clip, params, stan_cfg)
                loss, bd = stan_loss(out, clip.labels)
                loss.backward(seed=1.0 / len(batch))
                batch_sums += (bd.bce_final, bd.bce_cam, bd.bce_cav)
            opt.step()
            sums += batch_sums / len(batch)
            n_batches += 1
        means = sums / n_batches

        val_top1 = None
        if val_clips:
            val_top1 = _top1(predict_proba(val_clips, params, stan_cfg), val_labels)
            # >= keeps the latest among ties: later epochs refine the
            # attention maps even after validation accuracy saturates.
            if val_top1 >= best_top1:
                best_top1 = val_top1
                best_epoch = epoch
                best_params = params.copy()
        log.append(EpochLog(epoch=epoch, loss_total=float(means.sum()),
                            loss_final=float(means[0]), loss_cam=float(means[1]),
                            loss_cav=float(means[2]), val_top1=val_top1))

    final = best_params if best_params is not None else params
    return TrainResult(params=final, log=log, best_epoch=best_epoch)
