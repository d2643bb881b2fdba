from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .params import ParamStore
from .tensor import NonFiniteError


@dataclass
class AdamWConfig:
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass
class AdamWState:
    m: ParamStore
    v: ParamStore
    step: int = 0
    config: AdamWConfig = field(default_factory=AdamWConfig)

    @classmethod
    def for_params(cls, params: ParamStore, config: AdamWConfig | None = None) -> "AdamWState":
        return cls(params.zeros_like(), params.zeros_like(), 0, config or AdamWConfig())


def adamw_step(params: ParamStore, grads: ParamStore, state: AdamWState, lr: float) -> None:
    """One AdamW update, in place on ``params`` and ``state``.

    Weight decay is decoupled: ``p -= lr * wd * p`` before the Adam step.
    """
    if not (params.same_layout(grads) and params.same_layout(state.m)):
        raise KeyError("params, grads and optimizer moments must share one layout")
    g = grads.flat
    if not np.isfinite(g).all():
        raise NonFiniteError("non-finite gradient")
    cfg = state.config
    b1, b2 = cfg.betas
    state.step += 1
    t = state.step
    p, m, v = params.flat, state.m.flat, state.v.flat
    if cfg.weight_decay:
        p *= 1.0 - lr * cfg.weight_decay
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * g * g
    # p -= lr * m_hat / (sqrt(v_hat) + eps), with the bias corrections folded in
    denom = np.sqrt(v)
    denom *= 1.0 / math.sqrt(1.0 - b2 ** t)
    denom += cfg.eps
    p -= (lr / (1.0 - b1 ** t)) * m / denom
