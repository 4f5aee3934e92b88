from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from litetok.errors import NumericError
from litetok.numerics.tensor import Tape, Tensor, backward, no_tape


def finite_difference_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-3,
                            max_coords: int | None = None, seed: int = 0) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` takes no arguments and reads ``params`` by reference. When
    ``max_coords`` is given, that many coordinates are sampled uniformly
    (without replacement) across all parameters; otherwise every coordinate
    is checked.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    for p in params:
        p.grad = None
        p.requires_grad = True
    with Tape() as tape:
        loss = f()
    if not np.isfinite(loss.data).all():
        raise NumericError("objective returned a non-finite value")
    backward(loss, tape)

    coords = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    if max_coords is not None and max_coords < len(coords):
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[k] for k in sorted(pick)]

    def evaluate() -> float:
        with no_tape():
            v = float(f().data.reshape(-1)[0])
        if not np.isfinite(v):
            raise NumericError("objective returned a non-finite value")
        return v

    worst = 0.0
    for i, j in coords:
        p = params[i]
        at = np.unravel_index(j, p.shape)
        orig = p.data[at]
        p.data[at] = orig + h
        up = evaluate()
        p.data[at] = orig - h
        down = evaluate()
        p.data[at] = orig
        numeric = (up - down) / (2 * h)
        analytic = 0.0 if p.grad is None else float(p.grad[at])
        rel = abs(analytic - numeric) / (abs(analytic) + abs(numeric) + 1e-8)
        worst = max(worst, rel)
    return worst
