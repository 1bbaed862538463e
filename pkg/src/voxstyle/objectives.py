"""Style-direction objectives and the total training loss.

sd_loss pushes the style embedding away from the content subspace: the
squared Frobenius norm of sg[E_content] @ E_style^T, normalized by T^2,
so gradients reach only the style side. sp_loss ties per-frame style to
prosody: two small MLP heads project style rows and low-band mel rows
to a shared space and the loss is the negative sum of row cosines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    Tensor,
    absolute,
    add,
    bias_add,
    cosine_rows,
    detach,
    gelu,
    matmul,
    mean_all,
    neg,
    scale,
    square,
    sub,
    sum_all,
    transpose,
)
from .styleenc import glorot

COSINE_EPS = 1e-8


class TrainingAbort(RuntimeError):
    """A loss term became non-finite."""


@dataclass(frozen=True)
class LossWeights:
    lambda_rvq: float = 1.0
    lambda_adv: float = 0.05
    lambda_sd: float = 0.02
    lambda_sp: float = 0.02


@dataclass
class LossReport:
    recon: float
    rvq: float
    adv: float
    sd: float
    sp: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {
            "recon": self.recon,
            "rvq": self.rvq,
            "adv": self.adv,
            "sd": self.sd,
            "sp": self.sp,
            "total": self.total,
        }


class MlpHead:
    """Two linear layers with a GELU between, for the cosine spaces."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, hidden: int = 64):
        self.w1 = glorot(rng, in_dim, hidden)
        self.b1 = Tensor(np.zeros(hidden, dtype=np.float32), requires_grad=True)
        self.w2 = glorot(rng, hidden, out_dim)
        self.b2 = Tensor(np.zeros(out_dim, dtype=np.float32), requires_grad=True)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.w1": self.w1,
            f"{prefix}.b1": self.b1,
            f"{prefix}.w2": self.w2,
            f"{prefix}.b2": self.b2,
        }

    def forward(self, x: Tensor) -> Tensor:
        h = gelu(bias_add(matmul(x, self.w1), self.b1))
        return bias_add(matmul(h, self.w2), self.b2)


def sd_loss(content: Tensor, style: Tensor, normalize: bool = True) -> Tensor:
    """|sg[content] @ style^T|_F^2, divided by T^2 when normalized.

    The content side is detached, so minimizing this steers only the
    style embedding toward the content rows' orthogonal complement.
    """
    frozen = detach(content)
    gram = matmul(frozen, transpose(style))
    total = sum_all(square(gram))
    if not normalize:
        return total
    t = content.shape[0]
    return scale(total, 1.0 / float(t * t))


def sp_loss(style: Tensor, lowband: Tensor, style_head: MlpHead, prosody_head: MlpHead) -> Tensor:
    """Negative sum of cosines between projected style and prosody rows.

    Perfect agreement on T frames scores -T. Zero rows contribute 0 via
    the epsilon in the cosine denominator.
    """
    s = style_head.forward(style)
    p = prosody_head.forward(lowband)
    return neg(sum_all(cosine_rows(p, s, eps=COSINE_EPS)))


def reconstruction_l1(mel_hat: Tensor, mel_target: Tensor) -> Tensor:
    """Mean absolute error over all T x 80 cells."""
    return mean_all(absolute(sub(mel_hat, mel_target)))


def total_loss(
    recon: Tensor,
    rvq: Tensor,
    sd: Tensor,
    sp: Tensor,
    weights: LossWeights = LossWeights(),
) -> tuple[Tensor, LossReport]:
    """recon + lambda_rvq * rvq + lambda_adv * 0 + lambda_sd * sd + lambda_sp * sp.

    The adversarial slot is reserved: its term is identically zero but
    the weight and report field exist so downstream tooling is stable.
    Raises TrainingAbort naming the first non-finite term.
    """
    values = {
        "recon": float(recon.data),
        "rvq": float(rvq.data),
        "sd": float(sd.data),
        "sp": float(sp.data),
    }
    for name, value in values.items():
        if not np.isfinite(value):
            raise TrainingAbort(f"loss term {name!r} is non-finite: {value}")
    total = add(
        add(recon, scale(rvq, weights.lambda_rvq)),
        add(scale(sd, weights.lambda_sd), scale(sp, weights.lambda_sp)),
    )
    adv = 0.0
    report = LossReport(
        recon=values["recon"],
        rvq=values["rvq"],
        adv=adv,
        sd=values["sd"],
        sp=values["sp"],
        total=float(total.data) + weights.lambda_adv * adv,
    )
    return total, report
