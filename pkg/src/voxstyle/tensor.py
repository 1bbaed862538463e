"""Reverse-mode autodiff on an explicit tape, backed by numpy arrays.

The op set is exactly what the style encoder and its toy training lab
need: dense matmul, a handful of elementwise maps, row/column slicing,
softmax, layer norm, two 1-d convolution flavors, gather/scatter over
rows, and a fused row-wise cosine. Ops preserve the dtype of their
inputs (float32 by default, float64 for gradient checking); reductions
and normalization statistics accumulate in float64 regardless.

Graphs are built only while a `Tape` is active; `backward(loss)` walks
that tape once, accumulating into `.grad` of every tensor that requires
gradients. A consumed tape refuses a second backward.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

GELU_CUBIC = 0.044715
_SQRT_2_OVER_PI = 0.7978845608028654

_FLOAT_DTYPES = (np.float32, np.float64)


class DimensionError(ValueError):
    """Shapes passed to an op do not satisfy its contract."""


class TapeError(RuntimeError):
    """Backward called without a usable tape, or on a detached loss."""


class Tensor:
    """A dense float array plus gradient bookkeeping.

    `requires_grad` marks trainable leaves; op outputs inherit it when
    any input requires gradients and a tape is active. `grad` is filled
    by `backward` and accumulates across calls until `zero_grad`.
    """

    __slots__ = ("data", "requires_grad", "grad", "tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.tape: "Tape | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"


_Backward = Callable[[np.ndarray], tuple]


class Tape:
    """Records ops for one forward pass; single-use for backward."""

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], _Backward]] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.pop()


_ACTIVE: list[Tape] = []


def _tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def record_op(out_data: np.ndarray, inputs: Sequence[Tensor], backward: _Backward) -> Tensor:
    """Wrap a forward result as a Tensor and register its backward.

    Public so that fused ops (quantizers, cosine heads) defined in other
    modules participate in the same tape. `backward` receives the output
    gradient and returns one array (or None) per input.
    """
    out = Tensor(out_data)
    tape = _tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.tape = tape
        tape.records.append((out, tuple(inputs), backward))
    return out


def backward(loss: Tensor) -> None:
    """Reverse pass from a scalar loss over the active tape."""
    tape = _tape()
    if tape is None:
        raise TapeError("backward needs an active Tape context")
    if tape.consumed:
        raise TapeError("this tape was already consumed; rebuild the graph before backward")
    if loss.data.size != 1:
        raise DimensionError(f"loss must be scalar, got shape {loss.shape}")
    if loss.tape is not tape:
        raise TapeError("loss was not produced on the active tape")
    tape.consumed = True
    loss.grad = np.ones_like(loss.data)
    for out, inputs, bw in reversed(tape.records):
        gout = out.grad
        if gout is None:
            continue
        gins = bw(gout)
        for inp, gin in zip(inputs, gins):
            if gin is None or not inp.requires_grad:
                continue
            gin = np.asarray(gin, dtype=inp.data.dtype).reshape(inp.data.shape)
            if inp.grad is None:
                inp.grad = gin.copy()
            else:
                inp.grad += gin


def zero_grad(params) -> None:
    """Clear accumulated gradients on an iterable (or dict) of tensors."""
    if isinstance(params, dict):
        params = params.values()
    for p in params:
        p.grad = None


def constant(data, dtype=None) -> Tensor:
    """A non-trainable tensor; copies to stay immune to later in-place updates."""
    return Tensor(np.array(data, dtype=dtype, copy=True))


def detach(x: Tensor) -> Tensor:
    """Stop-gradient copy of `x`."""
    return Tensor(x.data.copy())


# ---------------------------------------------------------------------------
# shape helpers


def _need_2d(x: Tensor, op: str) -> None:
    if x.data.ndim != 2:
        raise DimensionError(f"{op} expects a 2-d tensor, got shape {x.shape}")


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _f64(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float64)


# ---------------------------------------------------------------------------
# arithmetic


def _binary(a: Tensor, b, op: str, fwd, bwd_a, bwd_b):
    if isinstance(b, Tensor):
        _same_shape(a, b, op)
        out = fwd(a.data, b.data)
        bd = b.data

        def bw(g):
            return bwd_a(g, a.data, bd), bwd_b(g, a.data, bd)

        return record_op(out, (a, b), bw)
    scalar = float(b)
    out = fwd(a.data, np.asarray(scalar, dtype=a.data.dtype))

    def bw_scalar(g):
        return (bwd_a(g, a.data, scalar),)

    return record_op(out, (a,), bw_scalar)


def add(a: Tensor, b) -> Tensor:
    """Elementwise a + b; b is a same-shape tensor or a python scalar."""
    return _binary(a, b, "add", lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a: Tensor, b) -> Tensor:
    return _binary(a, b, "sub", lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a: Tensor, b) -> Tensor:
    return _binary(a, b, "mul", lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python constant (not differentiable w.r.t. c)."""
    c = float(c)
    return record_op(a.data * np.asarray(c, dtype=a.data.dtype), (a,), lambda g: (g * c,))


def neg(a: Tensor) -> Tensor:
    return record_op(-a.data, (a,), lambda g: (-g,))


def square(a: Tensor) -> Tensor:
    d = a.data
    return record_op(d * d, (a,), lambda g: (2.0 * g * d,))


def absolute(a: Tensor) -> Tensor:
    """|a|; subgradient 0 at exactly 0."""
    d = a.data
    return record_op(np.abs(d), (a,), lambda g: (g * np.sign(d),))


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximation GELU, cubic coefficient 0.044715."""
    d = a.data
    d2 = d * d
    inner = d2 * GELU_CUBIC
    inner += 1.0
    inner *= d
    inner *= _SQRT_2_OVER_PI
    th = np.tanh(inner)
    out = th + 1.0
    out *= d
    out *= 0.5

    def bw(g):
        # slope = 0.5 (1 + th) + 0.5 d (1 - th^2) s2pi (1 + 3 c d^2)
        slope = d2 * (3.0 * GELU_CUBIC)
        slope += 1.0
        slope *= _SQRT_2_OVER_PI
        slope *= 1.0 - th * th
        slope *= d
        slope += 1.0 + th
        slope *= 0.5
        slope *= g
        return (slope,)

    return record_op(out, (a,), bw)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _need_2d(a, "matmul")
    _need_2d(b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return g @ bd.T, ad.T @ g

    return record_op(ad @ bd, (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    _need_2d(a, "transpose")
    return record_op(a.data.T.copy(), (a,), lambda g: (g.T,))


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-D bias row to every row of a T x D tensor."""
    _need_2d(x, "bias_add")
    if b.data.ndim != 1 or b.shape[0] != x.shape[1]:
        raise DimensionError(f"bias_add: bias {b.shape} does not fit columns of {x.shape}")

    def bw(g):
        return g, np.sum(_f64(g), axis=0)

    return record_op(x.data + b.data[None, :], (x, b), bw)


# ---------------------------------------------------------------------------
# reductions


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    out = np.asarray(np.sum(_f64(a.data)), dtype=a.data.dtype)
    return record_op(out, (a,), lambda g: (np.full(shape, float(g), dtype=a.data.dtype),))


def mean_all(a: Tensor) -> Tensor:
    if a.data.size == 0:
        raise DimensionError("mean_all over an empty tensor")
    n = a.data.size
    shape = a.shape
    out = np.asarray(np.mean(_f64(a.data)), dtype=a.data.dtype)
    return record_op(out, (a,), lambda g: (np.full(shape, float(g) / n, dtype=a.data.dtype),))


def mean_rows(x: Tensor) -> Tensor:
    """Mean over rows of T x D, keeping a 1 x D result."""
    _need_2d(x, "mean_rows")
    t = x.shape[0]
    if t == 0:
        raise DimensionError("mean_rows over zero rows")
    out = np.mean(_f64(x.data), axis=0, keepdims=True).astype(x.data.dtype)
    return record_op(out, (x,), lambda g: (np.repeat(g / t, t, axis=0),))


def broadcast_rows(v: Tensor, n: int) -> Tensor:
    """Tile a (D,) or (1, D) tensor into n rows."""
    if v.data.ndim == 1:
        row = v.data[None, :]
    elif v.data.ndim == 2 and v.shape[0] == 1:
        row = v.data
    else:
        raise DimensionError(f"broadcast_rows expects (D,) or (1, D), got {v.shape}")

    def bw(g):
        return (np.sum(_f64(g), axis=0).reshape(v.data.shape),)

    return record_op(np.repeat(row, n, axis=0), (v,), bw)


# ---------------------------------------------------------------------------
# normalization and attention pieces


def softmax_lastdim(x: Tensor) -> Tensor:
    """Row-wise softmax over the last axis of a 1-d or 2-d tensor."""
    if x.data.ndim not in (1, 2):
        raise DimensionError(f"softmax_lastdim expects 1-d or 2-d, got {x.shape}")
    d = x.data
    shifted = d - np.max(d, axis=-1, keepdims=True)
    e = np.exp(shifted)
    denom = np.sum(_f64(e), axis=-1, keepdims=True)
    y = (e / denom).astype(d.dtype)

    def bw(g):
        dot = np.sum(_f64(g * y), axis=-1, keepdims=True)
        return ((y * (g - dot)).astype(d.dtype),)

    return record_op(y, (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization of T x D, with learned (D,) gain and bias."""
    _need_2d(x, "layer_norm")
    d = x.shape[1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} do not fit {x.shape}"
        )
    x64 = _f64(x.data)
    mu = np.mean(x64, axis=1, keepdims=True)
    xc = x64 - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat64 = xc * inv
    xhat = xhat64.astype(x.data.dtype)
    out = xhat * gain.data[None, :] + bias.data[None, :]

    def bw(g):
        dxhat = _f64(g) * _f64(gain.data)[None, :]
        m1 = np.mean(dxhat, axis=1, keepdims=True)
        m2 = np.mean(dxhat * xhat64, axis=1, keepdims=True)
        gx = (inv * (dxhat - m1 - xhat64 * m2)).astype(x.data.dtype)
        ggain = np.sum(_f64(g) * xhat64, axis=0)
        gbias = np.sum(_f64(g), axis=0)
        return gx, ggain, gbias

    return record_op(out, (x, gain, bias), bw)


# ---------------------------------------------------------------------------
# convolutions over the time axis (rows)


def conv1d(x: Tensor, kernel: Tensor, mode: str) -> Tensor:
    """1-d convolution along rows of a T x C tensor.

    mode "pointwise": kernel is C_in x C_out, a per-frame channel mix.
    mode "depthwise_k7": kernel is 7 x C, per-channel taps, zero padding
    of 3 frames on each side so T is preserved.
    """
    _need_2d(x, "conv1d")
    if mode == "pointwise":
        if kernel.data.ndim != 2 or kernel.shape[0] != x.shape[1]:
            raise DimensionError(f"conv1d pointwise: kernel {kernel.shape} vs input {x.shape}")
        return matmul(x, kernel)
    if mode != "depthwise_k7":
        raise DimensionError(f"conv1d: unknown mode {mode!r}")
    if kernel.data.ndim != 2 or kernel.shape[0] != 7 or kernel.shape[1] != x.shape[1]:
        raise DimensionError(f"conv1d depthwise_k7: kernel {kernel.shape} vs input {x.shape}")
    t, c = x.shape
    xp = np.zeros((t + 6, c), dtype=x.data.dtype)
    xp[3 : 3 + t] = x.data
    kd = kernel.data
    out = np.zeros((t, c), dtype=x.data.dtype)
    for j in range(7):
        out += xp[j : j + t] * kd[j][None, :]

    def bw(g):
        gxp = np.zeros_like(xp)
        gk = np.zeros(kd.shape, dtype=np.float64)
        for j in range(7):
            gxp[j : j + t] += g * kd[j][None, :]
            gk[j] = np.sum(_f64(g) * _f64(xp[j : j + t]), axis=0)
        return gxp[3 : 3 + t], gk

    return record_op(out, (x, kernel), bw)


# ---------------------------------------------------------------------------
# row and column indexing


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows x[idx]; backward scatter-adds (duplicates accumulate)."""
    _need_2d(x, "gather_rows")
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError(f"gather_rows: index must be 1-d, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise DimensionError(f"gather_rows: index out of range for {x.shape[0]} rows")
    rows = x.shape[0]

    def bw(g):
        buf = np.zeros((rows, x.shape[1]), dtype=np.float64)
        np.add.at(buf, idx, _f64(g))
        return (buf,)

    return record_op(x.data[idx].copy(), (x,), bw)


def scatter_rows_filled(values: Tensor, idx: np.ndarray, fill: Tensor, total_rows: int) -> Tensor:
    """Place V rows at positions idx of a total_rows x D output; every
    other row is a copy of the (D,) fill vector. idx must be unique."""
    _need_2d(values, "scatter_rows_filled")
    if fill.data.ndim != 1 or fill.shape[0] != values.shape[1]:
        raise DimensionError(f"scatter_rows_filled: fill {fill.shape} vs values {values.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1 or idx.size != values.shape[0]:
        raise DimensionError("scatter_rows_filled: one index per value row required")
    if idx.size != np.unique(idx).size:
        raise DimensionError("scatter_rows_filled: duplicate indices")
    if idx.size and (idx.min() < 0 or idx.max() >= total_rows):
        raise DimensionError(f"scatter_rows_filled: index out of range for {total_rows} rows")
    out = np.repeat(fill.data[None, :], total_rows, axis=0)
    out[idx] = values.data
    hole = np.ones(total_rows, dtype=bool)
    hole[idx] = False

    def bw(g):
        return g[idx].copy(), np.sum(_f64(g[hole]), axis=0)

    return record_op(out, (values, fill), bw)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    _need_2d(x, "slice_cols")
    if not (0 <= start < stop <= x.shape[1]):
        raise DimensionError(f"slice_cols: [{start}:{stop}] out of range for {x.shape}")

    def bw(g):
        buf = np.zeros(x.shape, dtype=g.dtype)
        buf[:, start:stop] = g
        return (buf,)

    return record_op(x.data[:, start:stop].copy(), (x,), bw)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise DimensionError("concat_cols of nothing")
    rows = parts[0].shape[0]
    for p in parts:
        _need_2d(p, "concat_cols")
        if p.shape[0] != rows:
            raise DimensionError("concat_cols: row counts differ")
    widths = [p.shape[1] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(widths)])

    def bw(g):
        return tuple(g[:, offsets[i] : offsets[i + 1]].copy() for i in range(len(widths)))

    return record_op(np.concatenate([p.data for p in parts], axis=1), tuple(parts), bw)


# ---------------------------------------------------------------------------
# fused row-wise cosine


def cosine_rows(u: Tensor, v: Tensor, eps: float = 1e-8) -> Tensor:
    """cos(u_i, v_i) per row of two T x D tensors, shape (T,).

    Denominator |u||v| + eps, so an all-zero row contributes 0 with a
    finite gradient instead of NaN.
    """
    _same_shape(u, v, "cosine_rows")
    _need_2d(u, "cosine_rows")
    u64, v64 = _f64(u.data), _f64(v.data)
    nu = np.sqrt(np.sum(u64 * u64, axis=1))
    nv = np.sqrt(np.sum(v64 * v64, axis=1))
    dot = np.sum(u64 * v64, axis=1)
    denom = nu * nv + eps
    cos = (dot / denom).astype(u.data.dtype)

    def bw(g):
        g64 = _f64(g)[:, None]
        # d cos / du = v/denom - (dot * nv / (nu * denom^2)) * u; the
        # second factor has limit 0 as |u| -> 0 because dot -> 0 too.
        su = np.where(nu > 1e-30, dot * nv / (denom * denom * nu), 0.0)[:, None]
        sv = np.where(nv > 1e-30, dot * nu / (denom * denom * nv), 0.0)[:, None]
        gu = g64 * (v64 / denom[:, None] - su * u64)
        gv = g64 * (u64 / denom[:, None] - sv * v64)
        return gu, gv

    return record_op(cos, (u, v), bw)
