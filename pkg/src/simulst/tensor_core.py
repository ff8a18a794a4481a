"""Dense numeric kernel: matrices, masked attention, rotary embeddings, layer
primitives, a multiply-accumulate counter and a finite-difference gradient.

Matrices are plain 2-D ``numpy.ndarray`` objects. Masks are boolean arrays of
shape ``(queries, keys)`` where ``True`` means the key is visible.

Precision defaults to float32. Equivalence and gradient suites switch to
float64 through :func:`float64_mode`.
"""

from __future__ import annotations

import contextlib
import contextvars
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .errors import InvalidArgument, InvalidConfig, InvalidMask, NumericFailure, OutOfRange

# Replaces disallowed logits before max-subtraction; exp() of it underflows to 0.
MASK_SENTINEL = -1e30

_default_dtype: type = np.float32


def default_dtype():
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise InvalidConfig(f"unsupported dtype {dtype!r}")
    _default_dtype = dtype


@contextlib.contextmanager
def float64_mode() -> Iterator[None]:
    """Temporarily make float64 the default precision (test mode)."""
    previous = _default_dtype
    set_default_dtype(np.float64)
    try:
        yield
    finally:
        set_default_dtype(previous)


def as_matrix(x, dtype=None, name: str = "matrix") -> np.ndarray:
    """Coerce ``x`` to a finite 2-D array of the requested (or default) dtype."""
    arr = np.asarray(x, dtype=dtype or _default_dtype)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InvalidArgument(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument(f"{name} contains non-finite entries")
    return arr


# --------------------------------------------------------------------------
# multiply-accumulate accounting
# --------------------------------------------------------------------------

@dataclass
class WorkCounter:
    """Exact count of multiply-accumulates issued by :func:`matmul`."""

    macs: int = 0
    by_kind: dict = field(default_factory=dict)

    def add(self, macs: int, kind: str | None = None) -> None:
        self.macs += macs
        if kind is not None:
            self.by_kind[kind] = self.by_kind.get(kind, 0) + macs


_active_counters: contextvars.ContextVar[tuple] = contextvars.ContextVar(
    "simulst_work_counters", default=()
)


@contextlib.contextmanager
def count_macs() -> Iterator[WorkCounter]:
    """Count every multiply-accumulate issued inside the block.

    Counters nest: an inner block's work is also charged to enclosing ones.
    """
    counter = WorkCounter()
    token = _active_counters.set(_active_counters.get() + (counter,))
    try:
        yield counter
    finally:
        _active_counters.reset(token)


def charge_macs(macs: int, kind: str | None = None) -> None:
    for counter in _active_counters.get():
        counter.add(macs, kind)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b`` with MAC accounting and row-independent rounding.

    A single-row product would go through gemv, whose summation order differs
    from gemm; duplicating the row keeps every row on the gemm path so that a
    row's result does not depend on how many rows were computed with it.
    """
    m, k = a.shape
    n = b.shape[1]
    charge_macs(m * k * n)
    if m == 1 and k > 0 and n > 0:
        return np.matmul(np.concatenate([a, a]), b)[:1]
    return np.matmul(a, b)


# --------------------------------------------------------------------------
# attention
# --------------------------------------------------------------------------

def check_mask(mask: np.ndarray, rows: int, cols: int) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (rows, cols):
        raise InvalidMask(f"mask shape {mask.shape} does not match ({rows}, {cols})")
    if rows and not mask.any(axis=1).all():
        bad = int(np.flatnonzero(~mask.any(axis=1))[0])
        raise InvalidMask(f"query row {bad} has no allowed key")
    return mask


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=-1, keepdims=True)


def attention_weights(q, k, mask, scale: float | None = None) -> np.ndarray:
    if scale is None:
        scale = 1.0 / math.sqrt(q.shape[1])
    logits = matmul(q, k.T) * q.dtype.type(scale)
    logits = np.where(mask, logits, q.dtype.type(MASK_SENTINEL))
    logits = logits - logits.max(axis=1, keepdims=True)
    weights = np.where(mask, np.exp(logits), 0).astype(q.dtype, copy=False)
    return weights / weights.sum(axis=1, keepdims=True)


def masked_attention(q, k, v, mask, scale: float | None = None) -> np.ndarray:
    """Scaled dot-product attention where only ``mask``-allowed keys contribute.

    Args:
        q: ``(n_q, d)`` queries.
        k: ``(n_k, d)`` keys.
        v: ``(n_k, d_v)`` values.
        mask: ``(n_q, n_k)`` boolean grid, ``True`` = visible.
        scale: logit scale, ``1/sqrt(d)`` when omitted.

    Disallowed keys receive a weight of exactly zero.
    """
    q = np.asarray(q)
    k = np.asarray(k)
    v = np.asarray(v)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise InvalidArgument("q, k, v must be 2-D")
    if q.shape[1] != k.shape[1]:
        raise InvalidArgument(f"q has {q.shape[1]} columns but k has {k.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise InvalidArgument(f"k has {k.shape[0]} rows but v has {v.shape[0]}")
    mask = check_mask(mask, q.shape[0], k.shape[0])
    return matmul(attention_weights(q, k, mask, scale), v)


def multi_head_attention(q, k, v, mask, n_heads: int) -> np.ndarray:
    """Split the feature axis into ``n_heads`` heads and attend per head."""
    d = q.shape[1]
    if d % n_heads:
        raise InvalidConfig(f"width {d} not divisible by {n_heads} heads")
    mask = check_mask(mask, q.shape[0], k.shape[0])
    hd = d // n_heads
    outs = [
        matmul(attention_weights(q[:, h * hd:(h + 1) * hd], k[:, h * hd:(h + 1) * hd], mask), v[:, h * hd:(h + 1) * hd])
        for h in range(n_heads)
    ]
    return np.concatenate(outs, axis=1)


# --------------------------------------------------------------------------
# rotary position embedding
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RotaryTable:
    max_position: int
    head_dim: int
    base: float = 10000.0
    cos: np.ndarray = field(init=False, repr=False, compare=False)
    sin: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.head_dim % 2:
            raise InvalidConfig(f"rotary head_dim must be even, got {self.head_dim}")
        if self.max_position < 1:
            raise InvalidConfig("max_position must be positive")
        inv_freq = self.base ** (-np.arange(0, self.head_dim, 2, dtype=np.float64) / self.head_dim)
        angles = np.arange(self.max_position, dtype=np.float64)[:, None] * inv_freq[None, :]
        object.__setattr__(self, "cos", np.cos(angles))
        object.__setattr__(self, "sin", np.sin(angles))


def apply_rope(x, position, table: RotaryTable) -> np.ndarray:
    """Rotate consecutive feature pairs ``(2i, 2i+1)`` of every row.

    ``position`` is either one index shared by all rows or one index per row.
    """
    x = np.asarray(x)
    if x.shape[1] != table.head_dim:
        raise InvalidArgument(f"x has {x.shape[1]} columns, table expects {table.head_dim}")
    pos = np.broadcast_to(np.asarray(position, dtype=np.int64), (x.shape[0],))
    if pos.size and (pos.min() < 0 or pos.max() >= table.max_position):
        raise OutOfRange(f"position outside rotary table of size {table.max_position}")
    cos = table.cos[pos].astype(x.dtype)
    sin = table.sin[pos].astype(x.dtype)
    even, odd = x[:, 0::2], x[:, 1::2]
    out = np.empty_like(x)
    out[:, 0::2] = even * cos - odd * sin
    out[:, 1::2] = even * sin + odd * cos
    return out


def apply_rope_heads(x, positions, table: RotaryTable, n_heads: int) -> np.ndarray:
    hd = table.head_dim
    return np.concatenate(
        [apply_rope(x[:, h * hd:(h + 1) * hd], positions, table) for h in range(n_heads)], axis=1
    )


# --------------------------------------------------------------------------
# layer primitives
# --------------------------------------------------------------------------

def linear(x, w, b=None) -> np.ndarray:
    y = matmul(x, w)
    if b is not None:
        y = y + b
    return y


def layer_norm(x, gain, bias, eps: float = 1e-5) -> np.ndarray:
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(var + x.dtype.type(eps)) * gain + bias


def gelu(x) -> np.ndarray:
    # tanh approximation
    c = x.dtype.type(math.sqrt(2.0 / math.pi))
    return x.dtype.type(0.5) * x * (1 + np.tanh(c * (x + x.dtype.type(0.044715) * x ** 3)))


# --------------------------------------------------------------------------
# gradient oracle
# --------------------------------------------------------------------------

def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``, entry by entry."""
    if eps <= 0:
        raise InvalidArgument("eps must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        orig = x[idx]
        x[idx] = orig + eps
        hi = float(f(x.copy()))
        x[idx] = orig - eps
        lo = float(f(x.copy()))
        x[idx] = orig
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise NumericFailure(f"f is not finite around index {idx}")
        grad[idx] = (hi - lo) / (2 * eps)
    return grad
