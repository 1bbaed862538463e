"""Residual vector quantization with rotation-based gradient flow.

The forward of both quantize ops maps each feature row to (numerically)
its nearest code; they differ only in the linear map their backward
applies. "ste" copies the output gradient. "rt" builds, per row, the
rotation R = I - 2 r r^T + 2 qhat ehat^T with r = (ehat + qhat) /
|ehat + qhat| and returns q~ = (|q|/|e|) R e; e and q are treated as
points, so backward applies the frozen map (|q|/|e|) R^T. R is a
composition of two reflections (through the bisecting hyperplane, then
through qhat's mirror), hence orthogonal, and R ehat = qhat, which makes
the forward agree with plain nearest-code quantization to rounding.

Edge rows: antiparallel ehat = -qhat has no bisector direction, so a
single reflection through v = (ehat - qhat)/|ehat - qhat| is used; a row
with |e| or |q| below 1e-8 falls back to a straight-through copy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    DimensionError,
    Tensor,
    add,
    constant,
    gather_rows,
    mean_all,
    record_op,
    scale,
    square,
    sub,
)

NORM_EPS = 1e-8
ANTIPARALLEL_EPS = 1e-6


class DegenerateInputError(ValueError):
    """Rotation requested for a vector too close to zero."""


@dataclass
class Codebook:
    """K x D code rows, trainable through gather-based losses."""

    codes: Tensor

    def __post_init__(self):
        if self.codes.data.ndim != 2:
            raise DimensionError(f"codebook must be K x D, got shape {self.codes.shape}")
        if not np.all(np.isfinite(self.codes.data)):
            raise ValueError("codebook contains non-finite entries")
        if np.unique(self.codes.data, axis=0).shape[0] != self.codes.shape[0]:
            raise ValueError("codebook has duplicate rows")

    @property
    def size(self) -> int:
        return self.codes.shape[0]

    @property
    def dim(self) -> int:
        return self.codes.shape[1]

    @classmethod
    def init_normal(cls, size: int, dim: int, rng: np.random.Generator) -> "Codebook":
        data = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(size, dim)).astype(np.float32)
        return cls(codes=Tensor(data, requires_grad=True))


@dataclass
class RvqStack:
    """A cascade of codebooks quantizing successive residuals."""

    layers: list[Codebook]
    commitment_weight: float = 0.25

    @property
    def depth(self) -> int:
        return len(self.layers)

    @classmethod
    def create(
        cls,
        size: int,
        dim: int,
        rng: np.random.Generator,
        depth: int = 4,
        commitment_weight: float = 0.25,
    ) -> "RvqStack":
        return cls(
            layers=[Codebook.init_normal(size, dim, rng) for _ in range(depth)],
            commitment_weight=commitment_weight,
        )

    def parameters(self, prefix: str = "rvq") -> dict[str, Tensor]:
        return {f"{prefix}.layer{i}.codes": cb.codes for i, cb in enumerate(self.layers)}


@dataclass
class QuantizeOutput:
    """Everything rvq_forward produces for one T x D input."""

    quantized: Tensor
    indices: np.ndarray  # (T, depth) int64
    residual_norms: list[float]  # Frobenius norm entering each layer, plus final
    commitment_loss: Tensor  # unweighted
    codebook_loss: Tensor
    commitment_weight: float = 0.25


def _nearest_indices(codes: np.ndarray, feats: np.ndarray) -> np.ndarray:
    """Argmin of squared distance per row, computed in float64.

    Ties break toward the lowest index. The expansion |e|^2 - 2 e.c +
    |c|^2 in float64 keeps the decision exact for float32 inputs, whose
    pairwise distance gaps dwarf the rounding of this accumulation.
    """
    c64 = np.asarray(codes, dtype=np.float64)
    f64 = np.asarray(feats, dtype=np.float64)
    d2 = (
        np.sum(f64 * f64, axis=1)[:, None]
        - 2.0 * (f64 @ c64.T)
        + np.sum(c64 * c64, axis=1)[None, :]
    )
    return np.argmin(d2, axis=1).astype(np.int64)


def nearest_code(codebook: Codebook, vec: np.ndarray) -> tuple[int, np.ndarray]:
    """Index and value of the code nearest to a single (D,) vector."""
    vec = np.asarray(vec)
    if vec.ndim != 1 or vec.shape[0] != codebook.dim:
        raise DimensionError(f"nearest_code: vector {vec.shape} vs codebook dim {codebook.dim}")
    idx = int(_nearest_indices(codebook.codes.data, vec[None, :])[0])
    return idx, codebook.codes.data[idx].copy()


class RotationTransform:
    """The orthogonal map carrying ehat onto qhat for one vector pair.

    `apply` evaluates R x matrix-free; `apply_transpose` evaluates
    R^T x. `is_reflection` marks the antiparallel fallback, where the
    map is a single (symmetric) Householder reflection.
    """

    def __init__(self, e_hat: np.ndarray, q_hat: np.ndarray, r: np.ndarray, is_reflection: bool):
        self.e_hat = e_hat
        self.q_hat = q_hat
        self.r = r
        self.is_reflection = is_reflection

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = x - 2.0 * self.r * (self.r @ x)
        if not self.is_reflection:
            out += 2.0 * self.q_hat * (self.e_hat @ x)
        return out

    def apply_transpose(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = x - 2.0 * self.r * (self.r @ x)
        if not self.is_reflection:
            out += 2.0 * self.e_hat * (self.q_hat @ x)
        return out


def rotation_align(e: np.ndarray, q: np.ndarray) -> RotationTransform:
    """Build the rotation taking direction e to direction q."""
    e64 = np.asarray(e, dtype=np.float64)
    q64 = np.asarray(q, dtype=np.float64)
    if e64.shape != q64.shape or e64.ndim != 1:
        raise DimensionError(f"rotation_align: shapes {e64.shape} vs {q64.shape}")
    ne = float(np.linalg.norm(e64))
    nq = float(np.linalg.norm(q64))
    if ne <= NORM_EPS or nq <= NORM_EPS:
        raise DegenerateInputError(f"rotation_align: norms too small ({ne:.3e}, {nq:.3e})")
    e_hat = e64 / ne
    q_hat = q64 / nq
    s = e_hat + q_hat
    ns = float(np.linalg.norm(s))
    if ns < ANTIPARALLEL_EPS:
        v = e_hat - q_hat
        return RotationTransform(e_hat, q_hat, v / np.linalg.norm(v), is_reflection=True)
    return RotationTransform(e_hat, q_hat, s / ns, is_reflection=False)


class _BatchRotation:
    """Row-wise rotation state for a whole T x D feature block."""

    def __init__(self, feats64: np.ndarray, codes64: np.ndarray):
        t, d = feats64.shape
        ne = np.linalg.norm(feats64, axis=1)
        nq = np.linalg.norm(codes64, axis=1)
        self.ste = (ne <= NORM_EPS) | (nq <= NORM_EPS)
        ok = ~self.ste
        safe_ne = np.where(ok, ne, 1.0)
        safe_nq = np.where(ok, nq, 1.0)
        self.e_hat = feats64 / safe_ne[:, None]
        self.q_hat = codes64 / safe_nq[:, None]
        self.scale = np.where(ok, safe_nq / safe_ne, 1.0)
        s = self.e_hat + self.q_hat
        ns = np.linalg.norm(s, axis=1)
        anti = ok & (ns < ANTIPARALLEL_EPS)
        diff = self.e_hat - self.q_hat
        nd = np.linalg.norm(diff, axis=1)
        r = np.where(anti[:, None], diff / np.maximum(nd, 1e-300)[:, None],
                     s / np.maximum(ns, 1e-300)[:, None])
        r[self.ste] = 0.0
        self.r = r
        # The qhat ehat^T rank-one term exists only for proper rotations.
        self.pair = (ok & ~anti).astype(np.float64)[:, None]

    def apply_rows(self, x: np.ndarray) -> np.ndarray:
        rx = np.sum(self.r * x, axis=1, keepdims=True)
        ex = np.sum(self.e_hat * x, axis=1, keepdims=True)
        return x - 2.0 * self.r * rx + 2.0 * self.pair * self.q_hat * ex

    def apply_transpose_rows(self, x: np.ndarray) -> np.ndarray:
        rx = np.sum(self.r * x, axis=1, keepdims=True)
        qx = np.sum(self.q_hat * x, axis=1, keepdims=True)
        return x - 2.0 * self.r * rx + 2.0 * self.pair * self.e_hat * qx


def _check_quantize_args(feats: Tensor, codebook: Codebook) -> None:
    if feats.data.ndim != 2:
        raise DimensionError(f"quantize expects T x D features, got {feats.shape}")
    if feats.shape[1] != codebook.dim:
        raise DimensionError(f"quantize: feature dim {feats.shape[1]} vs codebook dim {codebook.dim}")


def quantize_rt(feats: Tensor, codebook: Codebook) -> tuple[Tensor, np.ndarray]:
    """Nearest-code quantization whose backward is the frozen rotation map.

    Returns the quantized rows (forward-equal to the selected codes up
    to rounding; gradients flow to `feats` only) and the (T,) indices.
    """
    _check_quantize_args(feats, codebook)
    idx = _nearest_indices(codebook.codes.data, feats.data)
    feats64 = np.asarray(feats.data, dtype=np.float64)
    codes64 = np.asarray(codebook.codes.data, dtype=np.float64)[idx]
    rot = _BatchRotation(feats64, codes64)
    out64 = rot.scale[:, None] * rot.apply_rows(feats64)
    out64[rot.ste] = codes64[rot.ste]
    dtype = feats.data.dtype

    def bw(g):
        g64 = np.asarray(g, dtype=np.float64)
        ge = rot.scale[:, None] * rot.apply_transpose_rows(g64)
        ge[rot.ste] = g64[rot.ste]
        return (ge.astype(dtype),)

    return record_op(out64.astype(dtype), (feats,), bw), idx


def quantize_ste(feats: Tensor, codebook: Codebook) -> tuple[Tensor, np.ndarray]:
    """Nearest-code quantization with straight-through gradients."""
    _check_quantize_args(feats, codebook)
    idx = _nearest_indices(codebook.codes.data, feats.data)
    out = codebook.codes.data[idx].astype(feats.data.dtype)
    return record_op(out, (feats,), lambda g: (g,)), idx


_QUANTIZE = {"rt": quantize_rt, "ste": quantize_ste}


def rvq_forward(stack: RvqStack, feats: Tensor, mode: str = "rt") -> QuantizeOutput:
    """Quantize residuals through every layer of the stack.

    The residual recurrence stays on the tape, so gradient flow through
    each q~ is exactly what the chosen quantize op defines. Commitment
    pulls the encoder toward the (detached) selected codes; the codebook
    term pulls the codes toward the (detached) residuals via gather, so
    code gradients exist even though q~ itself blocks them.
    """
    if mode not in _QUANTIZE:
        raise DimensionError(f"rvq_forward: unknown mode {mode!r}")
    if feats.data.ndim != 2 or feats.shape[0] == 0:
        raise DimensionError(f"rvq_forward expects a non-empty T x D input, got {feats.shape}")
    quantize = _QUANTIZE[mode]
    residual = feats
    quantized: Tensor | None = None
    commitment: Tensor | None = None
    codebook_term: Tensor | None = None
    columns = []
    norms = [float(np.linalg.norm(np.asarray(residual.data, dtype=np.float64)))]
    for layer in stack.layers:
        qt, idx = quantize(residual, layer)
        columns.append(idx)
        code_values = constant(layer.codes.data[idx])
        commit_l = mean_all(square(sub(residual, code_values)))
        gathered = gather_rows(layer.codes, idx)
        target = constant(residual.data)
        codebook_l = mean_all(square(sub(target, gathered)))
        commitment = commit_l if commitment is None else add(commitment, commit_l)
        codebook_term = codebook_l if codebook_term is None else add(codebook_term, codebook_l)
        quantized = qt if quantized is None else add(quantized, qt)
        residual = sub(residual, qt)
        norms.append(float(np.linalg.norm(np.asarray(residual.data, dtype=np.float64))))
    return QuantizeOutput(
        quantized=quantized,
        indices=np.stack(columns, axis=1),
        residual_norms=norms,
        commitment_loss=commitment,
        codebook_loss=codebook_term,
        commitment_weight=stack.commitment_weight,
    )


def rvq_loss(out: QuantizeOutput) -> Tensor:
    """codebook_loss + commitment_weight * commitment_loss."""
    return add(out.codebook_loss, scale(out.commitment_loss, out.commitment_weight))
