"""The space-time attention head over precomputed audio/visual features.

Per clip the model:

1. projects audio (with its temporal mean as context) and visual features
   into a shared width and fuses them into one space-time tensor,
2. derives per-class activation maps over space and activation values over
   time, gates each through a sigmoid into space attention [T, H, W] and
   time attention [T],
3. combines the two attentions multiplicatively, reweights the fused
   features, and classifies the pooled result,
4. additionally classifies the pooled activation maps/values directly, so
   three sigmoid heads are trained jointly.

Operating modes: "audio-visual" (full), "audio" (no spatial path, time
attention only), "visual" (no audio inputs, both attentions).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import json
import numpy as np

from . import tensor as tt
from .data import ClipRecord, read_tensor_stream, tensor_to_bytes
from .errors import ConfigurationError, DimensionError, FormatError
from .tensor import ParamTensor, Tensor

MODES = ("audio", "visual", "audio-visual")


@dataclass
class StanConfig:
    """Shapes and architecture switches for the attention head."""

    k: int
    t: int = 10
    h: int = 7
    w: int = 7
    d_a: int = 128
    d_v: int = 2048
    d: int = 256
    mode: str = "audio-visual"
    gate_kernel_size: int = 3
    proj_kernel_size: int = 1
    cam_kernel_size: int = 1
    hidden_layer: bool = False
    # Gates start mostly closed (negative bias) and sharp (scaled-up
    # weights): strong class evidence opens them quickly while positions
    # without evidence keep a low value instead of drifting up with the
    # shared bias.
    gate_bias_init: float = -2.0
    gate_weight_scale: float = 1.0


    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("k", "t", "h", "w", "d_a", "d_v", "d"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("gate_kernel_size", "proj_kernel_size", "cam_kernel_size"):
            v = getattr(self, name)
            if v < 1 or v % 2 == 0:
                raise ConfigurationError(f"{name} must be odd and >= 1, got {v}")

    @property
    def d_prime(self) -> int:
        """Width of the fused feature tensor (doubled by concatenation)."""
        return 2 * self.d if self.mode == "audio-visual" else self.d

    @property
    def uses_audio(self) -> bool:
        return self.mode in ("audio", "audio-visual")

    @property
    def uses_visual(self) -> bool:
        return self.mode in ("visual", "audio-visual")

    @property
    def has_space_path(self) -> bool:
        return self.mode != "audio"

    def to_dict(self) -> dict:
        return {"k": self.k, "t": self.t, "h": self.h, "w": self.w,
                "d_a": self.d_a, "d_v": self.d_v, "d": self.d, "mode": self.mode,
                "gate_kernel_size": self.gate_kernel_size,
                "proj_kernel_size": self.proj_kernel_size,
                "cam_kernel_size": self.cam_kernel_size,
                "hidden_layer": self.hidden_layer,
                "gate_bias_init": self.gate_bias_init,
                "gate_weight_scale": self.gate_weight_scale}

    @classmethod
    def from_dict(cls, doc: dict) -> "StanConfig":
        cfg = cls(**doc)
        cfg.validate()
        return cfg


def _glorot(rng: np.random.Generator, shape: tuple[int, ...],
            fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class StanParams:
    """All trainable weights, keyed by stable names.

    MLP blocks are lists of (weight, bias) layers; convolution blocks are
    single (kernel, bias) pairs. The creation order is fixed so that
    seeded initialization is reproducible.
    """

    def __init__(self, cfg: StanConfig, seed: int = 0, dtype=np.float32):
        cfg.validate()
        self.mode = cfg.mode
        self._mlps: dict[str, list[tuple[ParamTensor, ParamTensor]]] = {}
        self._convs: dict[str, tuple[ParamTensor, ParamTensor]] = {}
        rng = np.random.default_rng(seed)
        d, dp = cfg.d, cfg.d_prime

        if cfg.uses_audio:
            self._add_mlp(rng, "audio_st", 2 * cfg.d_a, d, cfg, dtype)
        if cfg.uses_visual:
            self._add_conv(rng, "visual_st", cfg.proj_kernel_size, cfg.d_v, d, dtype)
        if cfg.has_space_path:
            self._add_conv(rng, "cam", cfg.cam_kernel_size, dp, cfg.k, dtype)
            self._add_conv(rng, "space_gate", cfg.gate_kernel_size, cfg.k, 1, dtype,
                           bias_init=cfg.gate_bias_init,
                           weight_scale=cfg.gate_weight_scale)
        if cfg.uses_audio:
            self._add_mlp(rng, "audio_t", 2 * cfg.d_a, d, cfg, dtype)
        if cfg.uses_visual:
            self._add_mlp(rng, "visual_t", cfg.d_v, d, cfg, dtype)
        self._add_mlp(rng, "cav", d, cfg.k, cfg, dtype, hidden=False)
        self._add_mlp(rng, "time_gate", cfg.k, 1, cfg, dtype, hidden=False,
                      bias_init=cfg.gate_bias_init,
                      weight_scale=cfg.gate_weight_scale)
        self._add_mlp(rng, "classifier", dp, cfg.k, cfg, dtype, hidden=False)

    def _add_mlp(self, rng, name: str, d_in: int, d_out: int, cfg: StanConfig,
                 dtype, hidden: bool | None = None, bias_init: float = 0.0,
                 weight_scale: float = 1.0) -> None:
        hidden = cfg.hidden_layer if hidden is None else hidden
        dims = [(d_in, cfg.d), (cfg.d, d_out)] if hidden else [(d_in, d_out)]
        layers = []
        for i, (fi, fo) in enumerate(dims):
            w = ParamTensor(f"{name}.{i}.w",
                            weight_scale * _glorot(rng, (fi, fo), fi, fo, dtype))
            last = i == len(dims) - 1
            b = ParamTensor(f"{name}.{i}.b",
                            np.full(fo, bias_init if last else 0.0, dtype=dtype))
            layers.append((w, b))
        self._mlps[name] = layers

    def _add_conv(self, rng, name: str, k: int, c_in: int, c_out: int, dtype,
                  bias_init: float = 0.0, weight_scale: float = 1.0) -> None:
        w = ParamTensor(f"{name}.w", weight_scale * _glorot(
            rng, (k, k, c_in, c_out), k * k * c_in, k * k * c_out, dtype))
        b = ParamTensor(f"{name}.b", np.full(c_out, bias_init, dtype=dtype))
        self._convs[name] = (w, b)

    # -- access ------------------------------------------------------------

    def mlp(self, name: str, x: Tensor) -> Tensor:
        layers = self._mlps[name]
        out = tt.linear_map(x, layers[0][0], layers[0][1])
        for w, b in layers[1:]:
            out = tt.linear_map(tt.relu(out), w, b)
        return out

    def conv(self, name: str, x: Tensor) -> Tensor:
        w, b = self._convs[name]
        return tt.conv2d(x, w, b)

    def has(self, name: str) -> bool:
        return name in self._mlps or name in self._convs

    def tensors(self) -> list[ParamTensor]:
        out: list[ParamTensor] = []
        for layers in self._mlps.values():
            for w, b in layers:
                out.extend((w, b))
        for w, b in self._convs.values():
            out.extend((w, b))
        return out

    def named(self) -> Iterator[tuple[str, ParamTensor]]:
        for p in self.tensors():
            yield p.name, p

    def zero_grad(self) -> None:
        for p in self.tensors():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.named():
            if name not in state:
                raise ConfigurationError(f"checkpoint is missing parameter {name!r}")
            arr = state[name]
            if tuple(arr.shape) != p.shape:
                raise ConfigurationError(
                    f"parameter {name!r} has shape {tuple(arr.shape)}, expected {p.shape}")
            p.data = np.ascontiguousarray(arr, dtype=p.dtype)
            p.zero_grad()
        extra = set(state) - {name for name, _ in self.named()}
        if extra:
            raise ConfigurationError(f"checkpoint has unknown parameters {sorted(extra)}")

    def copy(self) -> "StanParams":
        dup = StanParams.__new__(StanParams)
        dup.mode = self.mode
        dup._mlps = {name: [(ParamTensor(w.name, w.data.copy()),
                             ParamTensor(b.name, b.data.copy()))
                            for w, b in layers]
                     for name, layers in self._mlps.items()}
        dup._convs = {name: (ParamTensor(w.name, w.data.copy()),
                             ParamTensor(b.name, b.data.copy()))
                      for name, (w, b) in self._convs.items()}
        return dup

    def astype(self, dtype) -> "StanParams":
        dup = self.copy()
        for p in dup.tensors():
            p.data = p.data.astype(dtype)
        return dup


@dataclass
class AttentionBundle:
    """Attention tensors of one clip. a_s is None in audio mode; then a_st
    is the time attention broadcast over the spatial grid."""

    a_s: Tensor | None
    a_t: Tensor
    a_st: Tensor


@dataclass
class ForwardOutput:
    """Everything one forward pass produces.

    p, p_cam, p_cav are per-class sigmoid probabilities (multi-label, no
    sum-to-one constraint). cam stacks the per-step class activation maps
    [T, H, W, K]; cav the per-step class activation values [T, K].
    p_cam/cam are None in audio mode (no spatial path).
    """

    p: Tensor
    p_cam: Tensor | None
    p_cav: Tensor
    attention: AttentionBundle
    cam: Tensor | None
    cav: Tensor
    x_st_weighted: Tensor


def _check_clip_shapes(clip: ClipRecord, cfg: StanConfig) -> None:
    if cfg.uses_audio and clip.audio.shape != (cfg.t, cfg.d_a):
        raise DimensionError(
            f"clip {clip.id}: audio shape {clip.audio.shape} != ({cfg.t}, {cfg.d_a})")
    if cfg.uses_visual and clip.visual.shape != (cfg.t, cfg.h, cfg.w, cfg.d_v):
        raise DimensionError(
            f"clip {clip.id}: visual shape {clip.visual.shape} != "
            f"({cfg.t}, {cfg.h}, {cfg.w}, {cfg.d_v})")


def _audio_with_context(audio: Tensor) -> Tensor:
    """Append the temporal-mean embedding to each step: [T, D_a] -> [T, 2 D_a]."""
    mean = tt.avg_pool_temporal(audio)
    return tt.concat_channels(audio, tt.tile_temporal(mean, audio.shape[0]))


def compose_spacetime(audio: Tensor | None, visual: Tensor | None,
                      params: StanParams, cfg: StanConfig) -> Tensor:
    """Fuse the two modalities into one [T, H, W, D'] feature tensor.

    The audio stream is projected per step (with its temporal mean as
    context) and tiled across space; the visual stream is projected by a
    convolution per step. In the full mode the two are concatenated along
    channels; unimodal modes use their single stream.
    """
    parts: list[Tensor] = []
    if cfg.uses_audio:
        if audio is None:
            raise DimensionError(f"mode {cfg.mode!r} requires audio features")
        a_proj = params.mlp("audio_st", _audio_with_context(audio))
        parts.append(tt.tile_spatial(a_proj, cfg.h, cfg.w))
    if cfg.uses_visual:
        if visual is None:
            raise DimensionError(f"mode {cfg.mode!r} requires visual features")
        frames = [params.conv("visual_st", tt.reshape(
            _slice_time(visual, i), (cfg.h, cfg.w, cfg.d_v))) for i in range(cfg.t)]
        parts.append(tt.stack_time(frames))
    if len(parts) == 2:
        return tt.concat_channels(parts[0], parts[1])
    return parts[0]


def _slice_time(x: Tensor, i: int) -> Tensor:
    """Differentiable [i]-th slice along the leading axis."""
    data = np.ascontiguousarray(x.data[i])

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(x.data)
        full[i] = g
        x._accumulate(full)

    return Tensor._node(data, (x,), backward)


def space_attention(x_st: Tensor, params: StanParams,
                    cfg: StanConfig) -> tuple[Tensor, Tensor]:
    """Per-step class activation maps and the gated space attention.

    Returns (a_s [T, H, W], cam [T, H, W, K]); each step is processed
    independently.
    """
    t = x_st.shape[0]
    cam_frames = []
    gate_frames = []
    for i in range(t):
        frame = _slice_time(x_st, i)
        m = params.conv("cam", frame)                      # [H, W, K]
        cam_frames.append(m)
        g = params.conv("space_gate", m)                   # [H, W, 1]
        gate_frames.append(tt.reshape(g, (cfg.h, cfg.w)))
    cam = tt.stack_time(cam_frames)
    a_s = tt.sigmoid(tt.stack_time(gate_frames))
    return a_s, cam


def time_features(audio: Tensor | None, visual: Tensor | None,
                  params: StanParams, cfg: StanConfig) -> Tensor:
    """Per-step fused embedding for the time path: [T, D].

    Audio uses the same mean-context input as the space path (separate
    weights); visual is spatially pooled first. Streams combine by addition.
    """
    parts: list[Tensor] = []
    if cfg.uses_audio:
        parts.append(params.mlp("audio_t", _audio_with_context(audio)))
    if cfg.uses_visual:
        parts.append(params.mlp("visual_t", tt.avg_pool_spatial(visual)))
    if len(parts) == 2:
        return tt.add(parts[0], parts[1])
    return parts[0]


def time_attention(x_t: Tensor, params: StanParams,
                   cfg: StanConfig) -> tuple[Tensor, Tensor]:
    """Per-step class activation values and the gated time attention.

    Returns (a_t [T], cav [T, K]).
    """
    cav = params.mlp("cav", x_t)
    gate = params.mlp("time_gate", cav)                    # [T, 1]
    a_t = tt.sigmoid(tt.reshape(gate, (x_t.shape[0],)))
    return a_t, cav


def forward(clip: ClipRecord, params: StanParams, cfg: StanConfig) -> ForwardOutput:
    """Full forward pass for one clip."""
    if params.mode != cfg.mode:
        raise ConfigurationError(
            f"params were built for mode {params.mode!r}, config says {cfg.mode!r}")
    _check_clip_shapes(clip, cfg)
    audio = clip.audio if cfg.uses_audio else None
    visual = clip.visual if cfg.uses_visual else None

    x_st = compose_spacetime(audio, visual, params, cfg)

    x_t = time_features(audio, visual, params, cfg)
    a_t, cav = time_attention(x_t, params, cfg)

    if cfg.has_space_path:
        a_s, cam = space_attention(x_st, params, cfg)
        a_st = tt.outer_product_st(a_s, a_t)
        pooled_cam = tt.avg_pool_temporal(tt.avg_pool_spatial(cam))
        p_cam = tt.sigmoid(pooled_cam)
    else:
        a_s, cam, p_cam = None, None, None
        a_st = tt.reshape(tt.tile_spatial(tt.reshape(a_t, (cfg.t, 1)), cfg.h, cfg.w),
                          (cfg.t, cfg.h, cfg.w))

    x_weighted = tt.elementwise_mul(x_st, a_st)
    pooled = tt.avg_pool_temporal(tt.avg_pool_spatial(x_weighted))
    p = tt.sigmoid(params.mlp("classifier", pooled))
    p_cav = tt.sigmoid(tt.avg_pool_temporal(cav))

    return ForwardOutput(p=p, p_cam=p_cam, p_cav=p_cav,
                         attention=AttentionBundle(a_s=a_s, a_t=a_t, a_st=a_st),
                         cam=cam, cav=cav, x_st_weighted=x_weighted)


def classify_with_attention(audio: np.ndarray | None, visual: np.ndarray | None,
                            a_st: np.ndarray, params: StanParams,
                            cfg: StanConfig) -> np.ndarray:
    """Final-head probabilities for (possibly perturbed) features under a
    fixed space-time attention map. Used by the perturbation tests."""
    with tt.no_grad():
        x_st = compose_spacetime(
            Tensor(audio) if audio is not None and cfg.uses_audio else None,
            Tensor(visual) if visual is not None and cfg.uses_visual else None,
            params, cfg)
        x_weighted = tt.elementwise_mul(x_st, Tensor(a_st.astype(x_st.dtype)))
        pooled = tt.avg_pool_temporal(tt.avg_pool_spatial(x_weighted))
        p = tt.sigmoid(params.mlp("classifier", pooled))
    return p.numpy().copy()


def predict_proba(clips, params: StanParams, cfg: StanConfig) -> np.ndarray:
    """Final-head probabilities for a batch of clips, shape [n, K]."""
    with tt.no_grad():
        rows = [forward(c, params, cfg).p.numpy().copy() for c in clips]
    return np.stack(rows, axis=0)


# ---------------------------------------------------------------------------
# checkpoints: JSON header line, then one serialized tensor per parameter

def save_checkpoint(path: str | Path, params: StanParams, cfg: StanConfig) -> None:
    names = [name for name, _ in params.named()]
    header = json.dumps({"config": cfg.to_dict(), "params": names},
                        sort_keys=True) + "\n"
    with open(path, "wb") as f:
        f.write(header.encode("utf-8"))
        for _, p in params.named():
            f.write(tensor_to_bytes(p.data))


def load_checkpoint(path: str | Path) -> tuple[StanParams, StanConfig]:
    path = Path(path)
    with open(path, "rb") as f:
        header_line = f.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
            cfg = StanConfig.from_dict(header["config"])
            names = list(header["params"])
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError("bad_magic",
                              f"checkpoint {path} has an invalid header: {exc}") from exc
        state = {}
        for name in names:
            state[name] = read_tensor_stream(f)
        if f.read(1):
            raise FormatError("truncated", f"trailing bytes in checkpoint {path}")
    params = StanParams(cfg, seed=0)
    params.load_state(state)
    return params, cfg
