"""Central-difference gradient checking for tape-built scalar functions."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tape, Tensor, backward


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-3) -> float:
    """Max relative error between the tape gradient of f at x and
    central finite differences, everything evaluated in float64.

    `f` must build a scalar from its argument using tape ops and be
    deterministic; it is re-run 2 * x.size times for the differences.
    Relative error per coordinate is |fd - an| / max(|fd|, |an|, 1e-8),
    so a genuinely zero gradient checks clean.
    """
    x0 = Tensor(np.asarray(x.data, dtype=np.float64).copy(), requires_grad=True)
    with Tape():
        loss = f(x0)
        if loss.data.size != 1:
            raise ValueError(f"grad_check needs a scalar function, got shape {loss.shape}")
        backward(loss)
    analytic = (
        np.zeros_like(x0.data) if x0.grad is None else np.asarray(x0.grad, dtype=np.float64)
    )

    flat = x0.data.reshape(-1)
    fd = np.zeros_like(flat)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = f(Tensor(x0.data.copy())).item()
        flat[i] = keep - h
        down = f(Tensor(x0.data.copy())).item()
        flat[i] = keep
        fd[i] = (up - down) / (2.0 * h)

    an = analytic.reshape(-1)
    denom = np.maximum(np.maximum(np.abs(fd), np.abs(an)), 1e-8)
    return float(np.max(np.abs(fd - an) / denom))
