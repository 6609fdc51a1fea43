"""Feature-file IO, dataset manifests, and the planted-event generator.

Feature files use a small binary container (magic ``AVTF``): little-endian
header ``magic(4) | version u32 | dtype u8 | rank u8 | reserved u16 |
extents rank*u64``, then the row-major float32 payload, then a CRC32 of the
payload. One file per clip per modality.

Manifests are UTF-8 JSON: ``{name, k, classes[], splits{split: [{id, audio,
visual, labels[], grounding[]?, spatial_mask?, original_length?}]}}`` with
feature paths relative to the manifest location.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import ConfigurationError, DataLoadError, FormatError
from .parallel import map_ordered
from .tensor import Tensor

_MAGIC = b"AVTF"
_VERSION = 1
_DTYPE_F32 = 1
_MAX_RANK = 8
_MAX_EXTENT = 2**48
_MAX_ELEMENTS = 2**34  # 64 GiB of f32, far beyond anything legitimate here


# ---------------------------------------------------------------------------
# binary tensor container

def tensor_to_bytes(t: Tensor | np.ndarray) -> bytes:
    """Serialize a float tensor; rejects rank-0 and non-positive extents."""
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    if arr.ndim == 0:
        raise FormatError("bad_rank", "rank-0 tensors cannot be serialized")
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    if arr.ndim > _MAX_RANK:
        raise FormatError("bad_rank", f"rank {arr.ndim} exceeds maximum {_MAX_RANK}")
    if any(e < 1 for e in arr.shape):
        raise FormatError("extent_overflow", f"extents must be positive, got {arr.shape}")
    header = _MAGIC + struct.pack("<IBBH", _VERSION, _DTYPE_F32, arr.ndim, 0)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = arr.tobytes()
    return header + payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def read_tensor_stream(f: BinaryIO) -> np.ndarray:
    """Parse one serialized tensor from a stream, verifying the checksum."""
    head = f.read(12)
    if len(head) < 12:
        raise FormatError("truncated", "file shorter than the fixed header")
    if head[:4] != _MAGIC:
        raise FormatError("bad_magic", f"expected magic {_MAGIC!r}, got {head[:4]!r}")
    version, dtype_code, rank, _ = struct.unpack("<IBBH", head[4:12])
    if version != _VERSION:
        raise FormatError("bad_version", f"unsupported version {version}")
    if dtype_code != _DTYPE_F32:
        raise FormatError("bad_dtype", f"unsupported dtype code {dtype_code}")
    if rank < 1 or rank > _MAX_RANK:
        raise FormatError("bad_rank", f"rank must be in [1, {_MAX_RANK}], got {rank}")
    ext_raw = f.read(8 * rank)
    if len(ext_raw) < 8 * rank:
        raise FormatError("truncated", "file ends inside the extent list")
    shape = struct.unpack(f"<{rank}Q", ext_raw)
    n = 1
    for e in shape:
        if e < 1 or e > _MAX_EXTENT:
            raise FormatError("extent_overflow", f"extent {e} out of range in {shape}")
        n *= e
        if n > _MAX_ELEMENTS:
            raise FormatError("extent_overflow",
                              f"element count overflows sanity bound: {shape}")
    payload = f.read(4 * n)
    if len(payload) < 4 * n:
        raise FormatError("truncated",
                          f"payload has {len(payload)} bytes, expected {4 * n}")
    crc_raw = f.read(4)
    if len(crc_raw) < 4:
        raise FormatError("truncated", "missing payload checksum")
    (crc,) = struct.unpack("<I", crc_raw)
    if crc != (zlib.crc32(payload) & 0xFFFFFFFF):
        raise FormatError("checksum", "payload checksum mismatch")
    arr = np.frombuffer(payload, dtype="<f4").reshape(shape)
    return np.ascontiguousarray(arr, dtype=np.float32)


def write_feature_file(t: Tensor | np.ndarray, path: str | Path) -> None:
    Path(path).write_bytes(tensor_to_bytes(t))


def read_feature_file(path: str | Path) -> Tensor:
    with open(path, "rb") as f:
        arr = read_tensor_stream(f)
        trailing = f.read(1)
    if trailing:
        raise FormatError("truncated", f"trailing bytes after tensor in {path}")
    return Tensor(arr)


# ---------------------------------------------------------------------------
# clips and manifests

@dataclass
class ClipRecord:
    """One clip's features and targets.

    audio: [T, D_a], visual: [T, H, W, D_v], labels: multi-hot [K].
    grounding marks the seconds in which the labeled sound occurs;
    spatial_mask (generator clips only) marks the planted visual block.
    """

    id: str
    audio: Tensor
    visual: Tensor
    labels: np.ndarray
    grounding: np.ndarray | None = None
    spatial_mask: np.ndarray | None = None

    @property
    def t(self) -> int:
        return self.audio.shape[0]


@dataclass
class ManifestEntry:
    id: str
    audio: str
    visual: str
    labels: list[int]
    grounding: list[int] | None = None
    spatial_mask: str | None = None
    original_length: int | None = None


@dataclass
class DatasetManifest:
    name: str
    k: int
    classes: list[str]
    splits: dict[str, list[ManifestEntry]] = field(default_factory=dict)


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    splits = {}
    for split, entries in manifest.splits.items():
        rows = []
        for e in entries:
            row = {"id": e.id, "audio": e.audio, "visual": e.visual,
                   "labels": e.labels}
            if e.grounding is not None:
                row["grounding"] = e.grounding
            if e.spatial_mask is not None:
                row["spatial_mask"] = e.spatial_mask
            if e.original_length is not None:
                row["original_length"] = e.original_length
            rows.append(row)
        splits[split] = rows
    doc = {"name": manifest.name, "k": manifest.k,
           "classes": manifest.classes, "splits": splits}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataLoadError(f"cannot parse manifest {path}: {exc}") from exc
    try:
        k = int(doc["k"])
        classes = list(doc["classes"])
        name = str(doc["name"])
        raw_splits = doc["splits"]
    except (KeyError, TypeError) as exc:
        raise DataLoadError(f"manifest {path} missing required field: {exc}") from exc
    if len(classes) != k:
        raise DataLoadError(
            f"manifest {path}: {len(classes)} class names but k={k}")
    for required in ("train", "test"):
        if required not in raw_splits:
            raise DataLoadError(f"manifest {path}: missing required split {required!r}")
    splits: dict[str, list[ManifestEntry]] = {}
    for split, rows in raw_splits.items():
        entries = []
        for row in rows:
            try:
                entries.append(ManifestEntry(
                    id=str(row["id"]), audio=str(row["audio"]),
                    visual=str(row["visual"]), labels=list(row["labels"]),
                    grounding=list(row["grounding"]) if "grounding" in row else None,
                    spatial_mask=row.get("spatial_mask"),
                    original_length=row.get("original_length")))
            except (KeyError, TypeError) as exc:
                raise DataLoadError(
                    f"manifest {path}: malformed entry in split {split!r}: {exc}") from exc
        splits[split] = entries
    return DatasetManifest(name=name, k=k, classes=classes, splits=splits)


def _load_clip(entry: ManifestEntry, base: Path, k: int) -> ClipRecord:
    labels = np.asarray(entry.labels, dtype=np.float32)
    if labels.ndim != 1 or labels.shape[0] != k:
        raise DataLoadError(
            f"clip {entry.id}: label vector has length {labels.shape}, expected {k}")
    if not np.all(np.isin(labels, (0.0, 1.0))):
        raise DataLoadError(f"clip {entry.id}: labels must be 0/1")
    if labels.sum() < 1:
        raise DataLoadError(f"clip {entry.id}: every clip must carry at least one label")

    audio_path = base / entry.audio
    visual_path = base / entry.visual
    for p in (audio_path, visual_path):
        if not p.is_file():
            raise DataLoadError(f"clip {entry.id}: missing feature file {p}")
    audio = read_feature_file(audio_path)
    visual = read_feature_file(visual_path)
    if audio.rank != 2:
        raise DataLoadError(f"clip {entry.id}: audio must be [T, D_a], got {audio.shape}")
    if visual.rank != 4:
        raise DataLoadError(
            f"clip {entry.id}: visual must be [T, H, W, D_v], got {visual.shape}")
    if audio.shape[0] != visual.shape[0]:
        raise DataLoadError(
            f"clip {entry.id}: audio T={audio.shape[0]} != visual T={visual.shape[0]}")

    grounding = None
    if entry.grounding is not None:
        grounding = np.asarray(entry.grounding, dtype=np.float32)
        if grounding.shape != (audio.shape[0],):
            raise DataLoadError(
                f"clip {entry.id}: grounding length {grounding.shape} != T={audio.shape[0]}")
        if not np.all(np.isin(grounding, (0.0, 1.0))):
            raise DataLoadError(f"clip {entry.id}: grounding must be 0/1")

    spatial_mask = None
    if entry.spatial_mask is not None:
        mask_path = base / entry.spatial_mask
        if not mask_path.is_file():
            raise DataLoadError(f"clip {entry.id}: missing mask file {mask_path}")
        spatial_mask = read_feature_file(mask_path).numpy()

    return ClipRecord(id=entry.id, audio=audio, visual=visual, labels=labels,
                      grounding=grounding, spatial_mask=spatial_mask)


def load_dataset(manifest_path: str | Path) -> tuple[DatasetManifest, dict[str, list[ClipRecord]]]:
    """Load and validate every clip referenced by a manifest."""
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    base = manifest_path.parent
    splits: dict[str, list[ClipRecord]] = {}
    for split, entries in manifest.splits.items():
        splits[split] = map_ordered(lambda e: _load_clip(e, base, manifest.k), entries)
    return manifest, splits


# ---------------------------------------------------------------------------
# synthetic planted-event generator

@dataclass
class SynthConfig:
    """Generator settings. Everything is a pure function of ``seed``.

    Each class plants a fixed audio pattern in a random contiguous time
    window and a fixed visual pattern in a random spatial block inside the
    same window; the rest is Gaussian noise with standard deviation 1/snr.

    Class patterns decompose into a strong group component (``group_amp``)
    and a weaker identity component (``ident_amp``). Classes pair up so
    that the members of an audio group are told apart only by their audio
    identity but belong to different visual groups, and vice versa; each
    modality alone is therefore slightly ambiguous while the pair of
    modalities is not. On a small deterministic fraction of clips
    (``audio_flip_rate`` / ``visual_flip_rate``) one modality's identity
    component is swapped to the partner class, which caps what any single
    modality can recognize but leaves the fused task solvable. A weaker
    full pattern of a wrong class (``distractor_amp``) is planted outside
    the true window so that off-event segments actively mislead.
    """

    k: int = 4
    t: int = 10
    h: int = 7
    w: int = 7
    d_a: int = 32
    d_v: int = 32
    clips_per_class: int = 50
    snr: float = 10.0
    seed: int = 0
    min_window: int = 2
    max_window: int | None = None
    group_amp: float = 1.5
    ident_amp: float = 0.5
    distractor_amp: float = 0.3
    audio_flip_rate: float = 0.02
    visual_flip_rate: float = 0.02
    # Outside the event window the visual noise floor is raised by this
    # factor (still 1/snr-scaled), like camera pans/background clutter:
    # attending off-event segments then actively costs the classifier.
    visual_burst_factor: float = 8.0
    block_min: int = 2
    block_max: int = 3
    val_clips_per_class: int | None = None
    test_clips_per_class: int | None = None

    def validate(self) -> None:
        for name in ("k", "t", "h", "w", "d_a", "d_v", "clips_per_class"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.snr > 0:
            raise ConfigurationError(f"snr must be positive, got {self.snr}")
        max_window = self.t if self.max_window is None else self.max_window
        if max_window > self.t:
            raise ConfigurationError(
                f"max_window {max_window} exceeds clip length T={self.t}")
        if self.min_window < 1 or self.min_window > max_window:
            raise ConfigurationError(
                f"window range [{self.min_window}, {max_window}] is invalid")
        if self.block_min < 1 or self.block_min > self.block_max:
            raise ConfigurationError(
                f"block range [{self.block_min}, {self.block_max}] is invalid")
        for name in ("group_amp", "ident_amp", "distractor_amp",
                     "audio_flip_rate", "visual_flip_rate", "visual_burst_factor"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        n_audio_groups = (self.k + 1) // 2
        if self.d_a < n_audio_groups + self.k:
            raise ConfigurationError(
                f"d_a={self.d_a} too small for {self.k} orthogonal class patterns")
        if self.d_v < min(2, self.k) + self.k:
            raise ConfigurationError(
                f"d_v={self.d_v} too small for {self.k} orthogonal class patterns")

    @property
    def resolved_max_window(self) -> int:
        return self.t if self.max_window is None else self.max_window

    def split_sizes(self) -> dict[str, int]:
        val = self.val_clips_per_class
        test = self.test_clips_per_class
        return {
            "train": self.clips_per_class,
            "val": max(1, self.clips_per_class // 5) if val is None else val,
            "test": self.clips_per_class if test is None else test,
        }


def _orthonormal_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.normal(size=(d, n)))
    return np.ascontiguousarray(q.T[:n])


@dataclass
class _Patterns:
    """Per-class group/identity components, all mutually orthonormal
    within a modality (so class margins are exact, not seed jitter)."""

    a_group: np.ndarray   # [K, D_a], scaled by group_amp
    a_ident: np.ndarray   # [K, D_a], scaled by ident_amp
    v_group: np.ndarray   # [K, D_v]
    v_ident: np.ndarray   # [K, D_v]

    def audio(self, c: int, ident: int) -> np.ndarray:
        return self.a_group[c] + self.a_ident[ident]

    def visual(self, c: int, ident: int) -> np.ndarray:
        return self.v_group[c] + self.v_ident[ident]


def audio_partner(c: int, k: int) -> int | None:
    """The class sharing c's audio group (they differ in visual group)."""
    p = c + 1 if c % 2 == 0 else c - 1
    return p if 0 <= p < k and p // 2 == c // 2 else None


def visual_partner(c: int, k: int) -> int | None:
    """The class sharing c's visual group (they differ in audio group)."""
    for p in (c + 2, c - 2):
        if 0 <= p < k:
            return p
    return None


def _class_patterns(rng: np.random.Generator, cfg: SynthConfig) -> _Patterns:
    n_audio_groups = (cfg.k + 1) // 2
    n_visual_groups = min(2, cfg.k)
    basis_a = _orthonormal_rows(rng, n_audio_groups + cfg.k, cfg.d_a)
    basis_v = _orthonormal_rows(rng, n_visual_groups + cfg.k, cfg.d_v)
    a_group = np.stack([cfg.group_amp * basis_a[c // 2] for c in range(cfg.k)])
    a_ident = cfg.ident_amp * basis_a[n_audio_groups:n_audio_groups + cfg.k]
    v_group = np.stack([cfg.group_amp * basis_v[c % n_visual_groups]
                        for c in range(cfg.k)])
    v_ident = cfg.ident_amp * basis_v[n_visual_groups:n_visual_groups + cfg.k]
    return _Patterns(a_group=a_group, a_ident=np.ascontiguousarray(a_ident),
                     v_group=v_group, v_ident=np.ascontiguousarray(v_ident))


def _pick_window(rng: np.random.Generator, t: int, lo: int, hi: int) -> tuple[int, int]:
    length = int(rng.integers(lo, hi + 1))
    start = int(rng.integers(0, t - length + 1))
    return start, start + length


def _outside_window(t: int, t0: int, t1: int) -> np.ndarray:
    """Boolean mask of the steps outside the event window [t0, t1)."""
    outside = np.ones(t, dtype=bool)
    outside[t0:t1] = False
    return outside


def _pick_block(rng: np.random.Generator, cfg: SynthConfig) -> tuple[int, int, int, int]:
    bh = int(rng.integers(cfg.block_min, min(cfg.block_max, cfg.h) + 1))
    bw = int(rng.integers(cfg.block_min, min(cfg.block_max, cfg.w) + 1))
    bh, bw = min(bh, cfg.h), min(bw, cfg.w)
    by = int(rng.integers(0, cfg.h - bh + 1))
    bx = int(rng.integers(0, cfg.w - bw + 1))
    return by, bx, bh, bw


def _other_class(rng: np.random.Generator, k: int, c: int) -> int:
    if k == 1:
        return 0
    d = int(rng.integers(0, k - 1))
    return d if d < c else d + 1


def _make_clip(rng: np.random.Generator, cfg: SynthConfig, c: int,
               patterns: _Patterns, audio_ident: int, visual_ident: int):
    noise_scale = 1.0 / cfg.snr
    t0, t1 = _pick_window(rng, cfg.t, cfg.min_window, cfg.resolved_max_window)

    outside = _outside_window(cfg.t, t0, t1)

    audio = rng.normal(size=(cfg.t, cfg.d_a)) * noise_scale
    audio[t0:t1] += patterns.audio(c, audio_ident)
    if outside.any() and cfg.distractor_amp > 0 and cfg.k > 1:
        cd = _other_class(rng, cfg.k, c)
        audio[outside] += cfg.distractor_amp * patterns.audio(cd, cd)

    visual = rng.normal(size=(cfg.t, cfg.h, cfg.w, cfg.d_v)) * noise_scale
    if cfg.visual_burst_factor > 1.0:
        visual[outside] *= cfg.visual_burst_factor
    by, bx, bh, bw = _pick_block(rng, cfg)
    visual[t0:t1, by:by + bh, bx:bx + bw] += patterns.visual(c, visual_ident)
    if outside.any() and cfg.distractor_amp > 0 and cfg.k > 1:
        cd = _other_class(rng, cfg.k, c)
        dby, dbx, dbh, dbw = _pick_block(rng, cfg)
        visual[np.ix_(outside, range(dby, dby + dbh), range(dbx, dbx + dbw))] += \
            cfg.distractor_amp * patterns.visual(cd, cd)

    grounding = np.zeros(cfg.t, dtype=np.float32)
    grounding[t0:t1] = 1.0
    smask = np.zeros((cfg.t, cfg.h, cfg.w), dtype=np.float32)
    smask[t0:t1, by:by + bh, bx:bx + bw] = 1.0
    labels = np.zeros(cfg.k, dtype=np.float32)
    labels[c] = 1.0
    return (audio.astype(np.float32), visual.astype(np.float32),
            labels, grounding, smask)


def _ident_for_clip(cfg: SynthConfig, c: int, i: int, per_class: int) -> tuple[int, int]:
    """Identity components for clip ``i`` of a class: the first few clips
    carry the partner's audio identity, the next few the partner's visual
    identity, deterministically."""
    n_flip_a = int(round(cfg.audio_flip_rate * per_class))
    n_flip_v = int(round(cfg.visual_flip_rate * per_class))
    audio_ident = visual_ident = c
    if i < n_flip_a:
        p = audio_partner(c, cfg.k)
        if p is not None:
            audio_ident = p
    elif i < n_flip_a + n_flip_v:
        p = visual_partner(c, cfg.k)
        if p is not None:
            visual_ident = p
    return audio_ident, visual_ident


def generate_synthetic(cfg: SynthConfig, out_dir: str | Path) -> DatasetManifest:
    """Write a planted-event dataset (features, masks, manifest) to disk."""
    cfg.validate()
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(cfg.seed)
    patterns = _class_patterns(rng, cfg)
    classes = [f"event_{c:02d}" for c in range(cfg.k)]
    manifest = DatasetManifest(name="synthetic", k=cfg.k, classes=classes)

    for split, per_class in cfg.split_sizes().items():
        entries: list[ManifestEntry] = []
        for c in range(cfg.k):
            for i in range(per_class):
                clip_id = f"{split}-{c:02d}-{i:04d}"
                audio_ident, visual_ident = _ident_for_clip(cfg, c, i, per_class)
                audio, visual, labels, grounding, smask = _make_clip(
                    rng, cfg, c, patterns, audio_ident, visual_ident)
                audio_rel = f"features/{clip_id}_audio.avtf"
                visual_rel = f"features/{clip_id}_visual.avtf"
                mask_rel = f"masks/{clip_id}_smask.avtf"
                write_feature_file(audio, out_dir / audio_rel)
                write_feature_file(visual, out_dir / visual_rel)
                write_feature_file(smask, out_dir / mask_rel)
                entries.append(ManifestEntry(
                    id=clip_id, audio=audio_rel, visual=visual_rel,
                    labels=[int(v) for v in labels],
                    grounding=[int(v) for v in grounding],
                    spatial_mask=mask_rel))
        manifest.splits[split] = entries

    write_manifest(manifest, out_dir / "manifest.json")
    return manifest
