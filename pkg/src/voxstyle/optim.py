"""AdamW with decoupled weight decay and bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import DimensionError, Tensor


@dataclass
class AdamWConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    # Decay defaults off: pulling codebooks and mask embeddings toward
    # zero fights the commitment objective.
    weight_decay: float = 0.0


@dataclass
class AdamWState:
    """First/second moment buffers keyed like the parameter dict."""

    config: AdamWConfig = field(default_factory=AdamWConfig)
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adamw_step(params: dict[str, Tensor], state: AdamWState) -> None:
    """One update over `params`, reading each tensor's `.grad` in place.

    A missing gradient counts as zero (the parameter still sees weight
    decay). Moment buffers are created lazily and must keep matching
    the parameter shapes afterwards.
    """
    cfg = state.config
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise DimensionError(f"adamw_step: grad {g.shape} vs param {p.data.shape} for {name!r}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = v
        else:
            v = state.v[name]
            if m.shape != p.data.shape:
                raise DimensionError(f"adamw_step: stale moment shape for {name!r}")
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        p.data -= cfg.lr * (update + cfg.weight_decay * p.data)
