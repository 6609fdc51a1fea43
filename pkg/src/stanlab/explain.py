"""Attention evaluation: perturbation robustness, pointing games, export.

The perturbation test measures how much the final prediction moves (total
variation distance) when Gaussian noise of growing strength is injected
into the input features, either where attention is high ("relevant") or
low ("irrelevant"). Attention is computed once on the clean clip and held
fixed while classifying the perturbed features, so the curve isolates how
well the attention marks the features the classifier depends on.

Pointing games compare the per-second time attention against human (or
planted) grounding masks via mean absolute error.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from . import tensor as tt
from .data import ClipRecord, write_feature_file
from .errors import ContractError, DimensionError
from .model import (StanConfig, StanParams, classify_with_attention, forward)
from .parallel import map_ordered
from .tensor import Tensor


def _values(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def tvd(p, q) -> float:
    """Total variation distance: half the L1 distance between two
    prediction vectors."""
    pa = _values(p).astype(np.float64)
    qa = _values(q).astype(np.float64)
    if pa.shape != qa.shape:
        raise DimensionError(f"tvd length mismatch: {pa.shape} vs {qa.shape}")
    return float(0.5 * np.abs(pa - qa).sum())


def relevance_mask(a, threshold: float = 0.5, target: str = "relevant") -> np.ndarray:
    """Binary mask of high-attention (>= threshold) or low-attention
    (< threshold) positions; the two targets partition the index set."""
    if not 0.0 < threshold < 1.0:
        raise ContractError(f"threshold must be in (0, 1), got {threshold}")
    av = _values(a)
    if target == "relevant":
        return (av >= threshold).astype(np.float32)
    if target == "irrelevant":
        return (av < threshold).astype(np.float32)
    raise ContractError(f"target must be 'relevant' or 'irrelevant', got {target!r}")


@dataclass
class PerturbConfig:
    """Settings for one perturbation run. ``sigmas`` is the noise standard
    deviation grid, ascending from 0."""

    sigmas: tuple[float, ...] = tuple(round(0.1 * i, 1) for i in range(11))
    trials: int = 100
    target: str = "relevant"
    threshold: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if len(self.sigmas) < 1 or self.sigmas[0] != 0.0:
            raise ContractError("sigma grid must start at 0")
        if any(b < a for a, b in zip(self.sigmas, self.sigmas[1:])):
            raise ContractError("sigma grid must be sorted ascending")
        if self.trials < 1:
            raise ContractError("trials must be >= 1")
        if not 0.0 < self.threshold < 1.0:
            raise ContractError("threshold must be in (0, 1)")
        if self.target not in ("relevant", "irrelevant"):
            raise ContractError(f"unknown target {self.target!r}")
        if self.seed < 0:
            raise ContractError("seed must be non-negative")


@dataclass
class PerturbCurve:
    sigmas: list[float]
    mean_tvd: list[float]
    std_tvd: list[float]
    trials: int

    def to_csv(self, path: str | Path) -> None:
        lines = ["sigma,mean_tvd,std_tvd,trials"]
        for s, m, sd in zip(self.sigmas, self.mean_tvd, self.std_tvd):
            lines.append(f"{s!r},{m!r},{sd!r},{self.trials}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def monotone_non_decreasing(self, z: float = 2.0) -> bool:
        """True when each step drops by no more than z standard errors."""
        sem = [sd / np.sqrt(self.trials) for sd in self.std_tvd]
        return all(self.mean_tvd[i + 1] >= self.mean_tvd[i] - z * (sem[i] + sem[i + 1])
                   for i in range(len(self.mean_tvd) - 1))


class AttentionModel(Protocol):
    """Anything that predicts a space-time attention grid and can classify
    features under a fixed attention map."""

    def attention(self, audio: np.ndarray, visual: np.ndarray) -> np.ndarray:
        """Clean-pass attention, shape [T, H, W]."""
        ...

    def classify(self, audio: np.ndarray, visual: np.ndarray,
                 attention: np.ndarray) -> np.ndarray:
        """Per-class probabilities for the features under the given map."""
        ...


class StanAttentionModel:
    """Adapter exposing a trained head through :class:`AttentionModel`."""

    def __init__(self, params: StanParams, cfg: StanConfig):
        self.params = params
        self.cfg = cfg

    def _clip(self, audio: np.ndarray, visual: np.ndarray) -> ClipRecord:
        labels = np.zeros(self.cfg.k, dtype=np.float32)
        labels[0] = 1.0  # placeholder, unused by the forward pass
        return ClipRecord(id="_adapter", audio=Tensor(audio), visual=Tensor(visual),
                          labels=labels)

    def attention(self, audio: np.ndarray, visual: np.ndarray) -> np.ndarray:
        with tt.no_grad():
            out = forward(self._clip(audio, visual), self.params, self.cfg)
        return out.attention.a_st.numpy().copy()

    def classify(self, audio: np.ndarray, visual: np.ndarray,
                 attention: np.ndarray) -> np.ndarray:
        return classify_with_attention(audio, visual, attention, self.params, self.cfg)


def _trial_rng(seed: int, clip_id: str, sigma_idx: int, trial: int) -> np.random.Generator:
    key = zlib.crc32(clip_id.encode("utf-8")) & 0xFFFFFFFF
    return np.random.default_rng(np.random.SeedSequence((seed, key, sigma_idx, trial)))


def _apply_noise(audio: np.ndarray, visual: np.ndarray, mask_st: np.ndarray,
                 mask_t: np.ndarray, sigma: float,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Add N(0, sigma^2) noise where the masks are set: visual per
    (t, h, w) across channels, audio per step."""
    noise_a = rng.normal(0.0, 1.0, size=audio.shape) * sigma
    noise_v = rng.normal(0.0, 1.0, size=visual.shape) * sigma
    a_p = (audio.astype(np.float64) + noise_a * mask_t[:, None]).astype(np.float32)
    v_p = (visual.astype(np.float64) + noise_v * mask_st[..., None]).astype(np.float32)
    return a_p, v_p


def perturbation_test_general(model: AttentionModel, clip: ClipRecord,
                              cfg: PerturbConfig) -> PerturbCurve:
    """Perturbation curve for any attention predictor (clean attention is
    computed once and reused while classifying perturbed features)."""
    cfg.validate()
    audio = clip.audio.numpy()
    visual = clip.visual.numpy()
    a = model.attention(audio, visual)
    if a.shape != visual.shape[:3]:
        raise ContractError(
            f"attention shape {a.shape} does not match the feature grid {visual.shape[:3]}")
    if not np.all(np.isfinite(a)):
        raise ContractError("attention contains non-finite values")
    p_clean = model.classify(audio, visual, a)
    mask = relevance_mask(a, cfg.threshold, cfg.target)
    # Audio has no spatial axes: collapse the attention over (h, w) by its
    # mean and threshold that, so a step's audio counts as relevant when the
    # step is attended overall and the two targets still partition the steps.
    mask_t = relevance_mask(a.mean(axis=(1, 2)), cfg.threshold, cfg.target)

    means, stds = [], []
    for si, sigma in enumerate(cfg.sigmas):
        vals = np.empty(cfg.trials, dtype=np.float64)
        for trial in range(cfg.trials):
            rng = _trial_rng(cfg.seed, clip.id, si, trial)
            a_p, v_p = _apply_noise(audio, visual, mask, mask_t, sigma, rng)
            vals[trial] = tvd(model.classify(a_p, v_p, a), p_clean)
        means.append(float(vals.mean()))
        stds.append(float(vals.std()))
    return PerturbCurve(sigmas=list(cfg.sigmas), mean_tvd=means, std_tvd=stds,
                        trials=cfg.trials)


def perturbation_test_stan(clip: ClipRecord, params: StanParams,
                           stan_cfg: StanConfig, cfg: PerturbConfig) -> PerturbCurve:
    """Perturbation curve for a trained head.

    The clean pass fixes the space-time attention; each trial adds masked
    noise to the raw audio/visual features, re-fuses them, and classifies
    under the fixed attention.
    """
    for _, p in params.named():
        if not np.all(np.isfinite(p.data)):
            raise ContractError(f"parameter {p.name} contains non-finite values")
    return perturbation_test_general(StanAttentionModel(params, stan_cfg), clip, cfg)


def dataset_perturbation_curve(clips: Sequence[ClipRecord], params: StanParams,
                               stan_cfg: StanConfig, cfg: PerturbConfig) -> PerturbCurve:
    """Average the per-clip curves over a split. std_tvd holds the
    between-clip spread of the per-clip means."""
    curves = map_ordered(
        lambda c: perturbation_test_stan(c, params, stan_cfg, cfg), clips)
    means = np.stack([c.mean_tvd for c in curves])
    return PerturbCurve(sigmas=list(cfg.sigmas),
                        mean_tvd=[float(v) for v in means.mean(axis=0)],
                        std_tvd=[float(v) for v in means.std(axis=0)],
                        trials=cfg.trials)


# ---------------------------------------------------------------------------
# pointing games

def pointing_game_mae(a_t, grounding, mode: str = "soft") -> float:
    """Mean absolute error between time attention and a binary grounding
    mask; "binary" mode thresholds the attention at 0.5 first."""
    av = _values(a_t).astype(np.float64)
    g = np.asarray(grounding, dtype=np.float64)
    if av.ndim != 1 or av.shape != g.shape:
        raise DimensionError(f"length mismatch: attention {av.shape}, mask {g.shape}")
    if not np.all(np.isin(g, (0.0, 1.0))):
        raise ContractError("grounding mask must be 0/1")
    if mode == "binary":
        av = (av >= 0.5).astype(np.float64)
    elif mode != "soft":
        raise ContractError(f"mode must be 'soft' or 'binary', got {mode!r}")
    return float(np.abs(av - g).mean())


# ---------------------------------------------------------------------------
# attention export

def bilinear_resize(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear upsampling with endpoints pinned to the input corners."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D map, got shape {a.shape}")
    h, w = a.shape
    ys = np.linspace(0.0, h - 1.0, out_h) if out_h > 1 else np.array([(h - 1) / 2.0])
    xs = np.linspace(0.0, w - 1.0, out_w) if out_w > 1 else np.array([(w - 1) / 2.0])
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = a[np.ix_(y0, x0)] * (1 - fx) + a[np.ix_(y0, x1)] * fx
    bot = a[np.ix_(y1, x0)] * (1 - fx) + a[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def write_pgm(path: str | Path, a: np.ndarray) -> None:
    """8-bit binary grayscale PGM of a map with values in [0, 1]."""
    img = np.clip(np.rint(np.asarray(a, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    if img.ndim != 2:
        raise DimensionError(f"PGM export needs a 2-D map, got shape {img.shape}")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def export_attention(clip_id: str, attention, out_dir: str | Path,
                     size: tuple[int, int] = (224, 224)) -> list[Path]:
    """Write one clip's attention to disk.

    Per step: the space attention map (or the space-time map in audio mode)
    upsampled to ``size`` as PGM. Plus the time attention as one CSV line
    and the full space-time tensor in the binary feature format.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    a_t = _values(attention.a_t)
    a_st = _values(attention.a_st)
    maps = _values(attention.a_s) if attention.a_s is not None else a_st

    written: list[Path] = []
    for i in range(maps.shape[0]):
        p = out_dir / f"{clip_id}_t{i:02d}_space.pgm"
        write_pgm(p, bilinear_resize(maps[i], size[0], size[1]))
        written.append(p)
    csv_path = out_dir / f"{clip_id}_time_attention.csv"
    csv_path.write_text(",".join(repr(float(v)) for v in a_t) + "\n", encoding="utf-8")
    written.append(csv_path)
    avtf_path = out_dir / f"{clip_id}_spacetime.avtf"
    write_feature_file(a_st, avtf_path)
    written.append(avtf_path)
    return written
