from __future__ import annotations

from typing import Callable

import numpy as np

from .params import ParamStore
from .tensor import Tape, Tensor, backward, constants


def grad_check(forward: Callable[[dict], Tensor], params: ParamStore, probe_count: int = 200,
               h: float = 1e-5, seed: int = 0, floor: float = 1e-6) -> float:
    """Max relative error between backprop and central differences.

    ``forward`` maps a dict of parameter tensors to a scalar loss. Coordinates
    are drawn uniformly without replacement. The denominator is floored at
    ``floor`` so that coordinates whose true derivative is zero do not turn
    round-off into huge relative errors.
    """
    with Tape() as tape:
        loss = forward(tape.watch(params))
    analytic = backward(tape, loss).flat

    rng = np.random.default_rng(seed)
    n = params.size
    coords = rng.choice(n, size=min(probe_count, n), replace=False)
    flat = params.flat
    worst = 0.0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + h
        up = forward(constants(params)).item()
        flat[i] = orig - h
        down = forward(constants(params)).item()
        flat[i] = orig
        numeric = (up - down) / (2 * h)
        err = abs(numeric - analytic[i]) / max(abs(numeric), abs(analytic[i]), floor)
        worst = max(worst, err)
    return worst
