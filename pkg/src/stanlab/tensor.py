"""Dense float tensors with a reverse-mode gradient tape.

The engine is deliberately small: it provides exactly the operations the
space-time attention model is built from, each with a hand-written backward
rule. Values are stored in 32-bit floats by default (64-bit supported for
high-precision gradient checking); every reduction accumulates in 64-bit
before casting back to the storage dtype, and reduction order is fixed, so
results are bit-reproducible run to run.

Gradient correctness is enforced by :func:`check_gradients`, which compares
tape gradients against central finite differences.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError

DEFAULT_DTYPE = np.float32

# Pre-activation clip for sigmoid. exp(80) is finite in float32, so the
# elementwise form never overflows; saturation to exactly 0.0/1.0 beyond
# this range matches what unclipped 32-bit rounding would produce anyway.
_SIGMOID_CLIP = 80.0

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference/evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def _as_float_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is None:
        dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
    arr = arr.astype(dtype, copy=False)
    if not arr.flags.c_contiguous:
        arr = arr.copy(order="C")
    return arr


class Tensor:
    """A dense array of reals plus its place on the gradient tape.

    ``data`` is a C-contiguous numpy array (row-major flat storage).
    ``grad`` is lazily allocated by :meth:`backward` and accumulates until
    explicitly reset; it is never cleared implicitly.
    """

    __slots__ = ("data", "grad", "_parents", "_backward_fn")

    def __init__(self, data, dtype=None):
        self.data = _as_float_array(data, dtype)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None

    @classmethod
    def _node(cls, data: np.ndarray, parents: tuple["Tensor", ...],
              backward_fn: Callable[[np.ndarray], None]) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        if _grad_enabled:
            out._parents = parents
            out._backward_fn = backward_fn
        else:
            out._parents = ()
            out._backward_fn = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def rank(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        """The underlying array. Treat as read-only."""
        return self.data

    def zero_grad(self) -> None:
        """Explicitly reset the accumulated gradient."""
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, seed: np.ndarray | float | None = None) -> None:
        """Run reverse-mode accumulation from this tensor.

        ``seed`` defaults to ones (the usual call is on a scalar loss).
        Gradients accumulate into ``.grad`` of every tensor on the tape.
        """
        if seed is None:
            seed = np.ones_like(self.data)
        else:
            seed = np.broadcast_to(np.asarray(seed, dtype=self.dtype), self.shape).copy()

        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        self._accumulate(seed)
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name})"


class ParamTensor(Tensor):
    """A named, trainable tensor. Its gradient persists across backward
    passes until :meth:`zero_grad` is called."""

    __slots__ = ("name",)

    def __init__(self, name: str, data, dtype=None):
        super().__init__(data, dtype)
        self.name = name

    def __repr__(self) -> str:
        return f"ParamTensor({self.name!r}, shape={self.shape}, dtype={self.dtype.name})"


def _check_same_dtype(*tensors: Tensor) -> np.dtype:
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise DimensionError(
                f"mixed dtypes {dt.name} and {t.dtype.name}; cast operands to a common dtype")
    return dt


# ---------------------------------------------------------------------------
# flat <-> multi index conversion (row-major)

def flat_index(shape: Sequence[int], multi: Sequence[int]) -> int:
    """Row-major flat offset of ``multi`` within ``shape``."""
    if len(shape) != len(multi):
        raise DimensionError(f"index rank {len(multi)} != shape rank {len(shape)}")
    flat = 0
    for extent, i in zip(shape, multi):
        if not 0 <= i < extent:
            raise DimensionError(f"index {multi} out of bounds for shape {tuple(shape)}")
        flat = flat * extent + i
    return flat


def multi_index(shape: Sequence[int], flat: int) -> tuple[int, ...]:
    """Inverse of :func:`flat_index`."""
    total = 1
    for extent in shape:
        total *= extent
    if not 0 <= flat < total:
        raise DimensionError(f"flat index {flat} out of bounds for shape {tuple(shape)}")
    idx = []
    for extent in reversed(shape):
        idx.append(flat % extent)
        flat //= extent
    return tuple(reversed(idx))


# ---------------------------------------------------------------------------
# ops

def linear_map(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map over the last axis: y[..., j] = sum_i x[..., i] w[i, j] + b[j]."""
    dt = _check_same_dtype(x, w, b)
    if x.rank < 1 or w.rank != 2 or b.rank != 1:
        raise DimensionError(
            f"linear_map expects x[..., Din], w[Din, Dout], b[Dout]; "
            f"got {x.shape}, {w.shape}, {b.shape}")
    din, dout = w.shape
    if x.shape[-1] != din or b.shape[0] != dout:
        raise DimensionError(
            f"linear_map shape mismatch: x {x.shape} vs w {w.shape}, b {b.shape}")

    x2d = x.data.reshape(-1, din).astype(np.float64)
    w64 = w.data.astype(np.float64)
    y = (x2d @ w64 + b.data.astype(np.float64)).reshape(x.shape[:-1] + (dout,)).astype(dt)

    def backward(gy: np.ndarray) -> None:
        g2d = gy.reshape(-1, dout).astype(np.float64)
        x._accumulate((g2d @ w64.T).reshape(x.shape).astype(dt))
        w._accumulate((x2d.T @ g2d).astype(dt))
        b._accumulate(g2d.sum(axis=0).astype(dt))

    return Tensor._node(y, (x, w, b), backward)


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """2-D cross-correlation with zero padding that preserves H and W.

    x: [H, W, Cin], w: [k, k, Cin, Cout] with k odd, b: [Cout].
    """
    dt = _check_same_dtype(x, w, b)
    if x.rank != 3 or w.rank != 4 or b.rank != 1:
        raise DimensionError(
            f"conv2d expects x[H,W,Cin], w[k,k,Cin,Cout], b[Cout]; "
            f"got {x.shape}, {w.shape}, {b.shape}")
    k, k2, cin, cout = w.shape
    if k != k2:
        raise DimensionError(f"kernel must be square, got {w.shape}")
    if k % 2 == 0:
        raise ConfigurationError(f"kernel size must be odd, got {k}")
    h, wd, cin_x = x.shape
    if cin_x != cin or b.shape[0] != cout:
        raise DimensionError(
            f"conv2d channel mismatch: x {x.shape} vs w {w.shape}, b {b.shape}")

    pad = (k - 1) // 2
    xpad = np.zeros((h + 2 * pad, wd + 2 * pad, cin), dtype=np.float64)
    xpad[pad:pad + h, pad:pad + wd] = x.data
    w64 = w.data.astype(np.float64)
    y64 = np.broadcast_to(b.data.astype(np.float64), (h, wd, cout)).copy()
    for di in range(k):
        for dj in range(k):
            patch = xpad[di:di + h, dj:dj + wd].reshape(-1, cin)
            y64 += (patch @ w64[di, dj]).reshape(h, wd, cout)
    y = y64.astype(dt)

    def backward(gy: np.ndarray) -> None:
        g2d = gy.reshape(-1, cout).astype(np.float64)
        gxpad = np.zeros_like(xpad)
        gw = np.zeros_like(w64)
        for di in range(k):
            for dj in range(k):
                patch = xpad[di:di + h, dj:dj + wd].reshape(-1, cin)
                gxpad[di:di + h, dj:dj + wd] += (g2d @ w64[di, dj].T).reshape(h, wd, cin)
                gw[di, dj] = patch.T @ g2d
        x._accumulate(gxpad[pad:pad + h, pad:pad + wd].astype(dt))
        w._accumulate(gw.astype(dt))
        b._accumulate(g2d.sum(axis=0).astype(dt))

    return Tensor._node(y, (x, w, b), backward)


def sigmoid(x: Tensor) -> Tensor:
    """Elementwise logistic function, overflow-safe."""
    z = np.clip(x.data, -_SIGMOID_CLIP, _SIGMOID_CLIP)
    y = 1.0 / (1.0 + np.exp(-z))
    y = y.astype(x.dtype, copy=False)

    def backward(gy: np.ndarray) -> None:
        x._accumulate((gy * y * (1.0 - y)).astype(x.dtype, copy=False))

    return Tensor._node(y, (x,), backward)


def relu(x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0)

    def backward(gy: np.ndarray) -> None:
        x._accumulate(np.where(x.data > 0, gy, 0).astype(x.dtype, copy=False))

    return Tensor._node(y, (x,), backward)


def add(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    _check_same_dtype(x, y)
    if x.shape != y.shape:
        raise DimensionError(f"add shape mismatch: {x.shape} vs {y.shape}")
    out = x.data + y.data

    def backward(g: np.ndarray) -> None:
        x._accumulate(g)
        y._accumulate(g)

    return Tensor._node(out, (x, y), backward)


def avg_pool_spatial(x: Tensor) -> Tensor:
    """Mean over the two spatial axes: [T, H, W, C] -> [T, C]."""
    if x.rank != 4:
        raise DimensionError(f"avg_pool_spatial expects rank 4, got {x.shape}")
    t, h, w, c = x.shape
    y = np.mean(x.data, axis=(1, 2), dtype=np.float64).astype(x.dtype)

    def backward(gy: np.ndarray) -> None:
        g = np.broadcast_to(gy[:, None, None, :] / np.array(h * w, dtype=x.dtype),
                            x.shape)
        x._accumulate(g.astype(x.dtype, copy=False))

    return Tensor._node(y, (x,), backward)


def avg_pool_temporal(x: Tensor) -> Tensor:
    """Mean over the leading time axis: [T, ...] -> [...]."""
    if x.rank < 1:
        raise DimensionError("avg_pool_temporal expects rank >= 1")
    t = x.shape[0]
    y = np.mean(x.data, axis=0, dtype=np.float64).astype(x.dtype)

    def backward(gy: np.ndarray) -> None:
        g = np.broadcast_to(gy / np.array(t, dtype=x.dtype), x.shape)
        x._accumulate(g.astype(x.dtype, copy=False))

    return Tensor._node(y, (x,), backward)


def tile_spatial(x: Tensor, h: int, w: int) -> Tensor:
    """Copy per-step vectors across a spatial grid: [T, D] -> [T, h, w, D]."""
    if x.rank != 2:
        raise DimensionError(f"tile_spatial expects rank 2, got {x.shape}")
    if h < 1 or w < 1:
        raise ConfigurationError(f"tile extents must be >= 1, got {h}x{w}")
    t, d = x.shape
    y = np.broadcast_to(x.data[:, None, None, :], (t, h, w, d)).copy()

    def backward(gy: np.ndarray) -> None:
        x._accumulate(gy.sum(axis=(1, 2), dtype=np.float64).astype(x.dtype))

    return Tensor._node(y, (x,), backward)


def tile_temporal(x: Tensor, t: int) -> Tensor:
    """Repeat a tensor along a new leading time axis: [...] -> [t, ...]."""
    if t < 1:
        raise ConfigurationError(f"tile extent must be >= 1, got {t}")
    y = np.broadcast_to(x.data[None], (t,) + x.shape).copy()

    def backward(gy: np.ndarray) -> None:
        x._accumulate(gy.sum(axis=0, dtype=np.float64).astype(x.dtype))

    return Tensor._node(y, (x,), backward)


def outer_product_st(a_s: Tensor, a_t: Tensor) -> Tensor:
    """Combine space and time attention: out[t,h,w] = a_s[t,h,w] * a_t[t]."""
    _check_same_dtype(a_s, a_t)
    if a_s.rank != 3 or a_t.rank != 1:
        raise DimensionError(
            f"outer_product_st expects a_s[T,H,W], a_t[T]; got {a_s.shape}, {a_t.shape}")
    if a_s.shape[0] != a_t.shape[0]:
        raise DimensionError(
            f"time length mismatch: a_s has T={a_s.shape[0]}, a_t has T={a_t.shape[0]}")
    y = a_s.data * a_t.data[:, None, None]

    def backward(gy: np.ndarray) -> None:
        a_s._accumulate((gy * a_t.data[:, None, None]).astype(a_s.dtype, copy=False))
        a_t._accumulate((gy * a_s.data).sum(axis=(1, 2), dtype=np.float64).astype(a_t.dtype))

    return Tensor._node(y, (a_s, a_t), backward)


def elementwise_mul(x: Tensor, a: Tensor) -> Tensor:
    """Reweight features by an attention map broadcast over channels.

    x: [T, H, W, D], a: [T, H, W] -> [T, H, W, D].
    """
    _check_same_dtype(x, a)
    if x.rank != 4 or a.rank != 3:
        raise DimensionError(
            f"elementwise_mul expects x[T,H,W,D], a[T,H,W]; got {x.shape}, {a.shape}")
    if x.shape[:3] != a.shape:
        raise DimensionError(
            f"leading extents differ: x {x.shape[:3]} vs a {a.shape}")
    y = x.data * a.data[..., None]

    def backward(gy: np.ndarray) -> None:
        x._accumulate((gy * a.data[..., None]).astype(x.dtype, copy=False))
        a._accumulate((gy * x.data).sum(axis=-1, dtype=np.float64).astype(a.dtype))

    return Tensor._node(y, (x, a), backward)


def concat_channels(x: Tensor, y: Tensor) -> Tensor:
    """Concatenate along the last (channel) axis."""
    _check_same_dtype(x, y)
    if x.rank != y.rank or x.shape[:-1] != y.shape[:-1]:
        raise DimensionError(
            f"concat_channels non-channel extents differ: {x.shape} vs {y.shape}")
    d1 = x.shape[-1]
    out = np.concatenate([x.data, y.data], axis=-1)

    def backward(g: np.ndarray) -> None:
        x._accumulate(np.ascontiguousarray(g[..., :d1]))
        y._accumulate(np.ascontiguousarray(g[..., d1:]))

    return Tensor._node(out, (x, y), backward)


def stack_time(tensors: Sequence[Tensor]) -> Tensor:
    """Stack same-shape tensors along a new leading axis."""
    if not tensors:
        raise DimensionError("stack_time needs at least one tensor")
    _check_same_dtype(*tensors)
    shape = tensors[0].shape
    for t in tensors:
        if t.shape != shape:
            raise DimensionError(f"stack_time shape mismatch: {t.shape} vs {shape}")
    out = np.stack([t.data for t in tensors], axis=0)
    parents = tuple(tensors)

    def backward(g: np.ndarray) -> None:
        for i, t in enumerate(parents):
            t._accumulate(np.ascontiguousarray(g[i]))

    return Tensor._node(out, parents, backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Row-major reshape (element order preserved)."""
    shape = tuple(shape)
    out = x.data.reshape(shape).copy(order="C")

    def backward(g: np.ndarray) -> None:
        x._accumulate(g.reshape(x.shape))

    return Tensor._node(out, (x,), backward)


# ---------------------------------------------------------------------------
# finite-difference gradient verification

@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    tolerance: float
    passed: bool
    n_elements: int

    def __str__(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return (f"gradcheck[{self.name}] {status}: max rel err "
                f"{self.max_rel_error:.3e} (tol {self.tolerance:.1e}, "
                f"{self.n_elements} elements)")


def check_gradients(f: Callable[[], Tensor], params: Iterable[ParamTensor],
                    eps: float = 1e-3, tol: float = 1e-4,
                    name: str = "f") -> GradCheckReport:
    """Compare tape gradients of a scalar function against central differences.

    ``f`` re-evaluates the computation from the current parameter values.
    Per element the discrepancy is |g_tape - g_fd| / max(1, |g_tape|, |g_fd|),
    which behaves as a relative error for gradients above unit magnitude and
    as an absolute error below it (so near-zero gradients do not blow up the
    ratio). The finite-difference step uses actually-representable
    perturbations, i.e. the division is by the realized (theta+ - theta-).
    """
    if eps <= 0:
        raise ContractError(f"eps must be positive, got {eps}")
    params = list(params)
    for p in params:
        p.zero_grad()
    out = f()
    if out.size != 1:
        raise ContractError(f"check_gradients needs a scalar function, got shape {out.shape}")
    out.backward()

    tape_grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                  for p in params]

    max_rel = 0.0
    n = 0
    with no_grad():
        for p, g in zip(params, tape_grads):
            flat = p.data.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                hi = float(flat[i])
                f_hi = float(f().data)
                flat[i] = orig - eps
                lo = float(flat[i])
                f_lo = float(f().data)
                flat[i] = orig
                fd = (f_hi - f_lo) / (hi - lo)
                a = float(gflat[i])
                rel = abs(a - fd) / max(1.0, abs(a), abs(fd))
                if rel > max_rel:
                    max_rel = rel
                n += 1

    return GradCheckReport(name=name, max_rel_error=max_rel, tolerance=tol,
                           passed=max_rel < tol, n_elements=n)
