from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import NumericError, Tensor, no_grad


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    max_coords: int | None = 200,
    seed: int = 0,
) -> float:
    """Compare backprop against central differences.

    ``f`` must rebuild the scalar loss from the current parameter values.
    Returns the max over sampled coordinates of
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    Coordinates are sampled per parameter (all of them when ``max_coords`` is
    None or the parameter is small enough).
    """
    for p in params:
        if p.dtype != np.float64:
            raise TypeError("grad_check needs float64 parameters")
        p.grad = None
    loss = f()
    if not np.isfinite(loss.data).all():
        raise NumericError("loss is not finite")
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            n = flat.size
            coords = np.arange(n) if max_coords is None or n <= max_coords else rng.choice(n, max_coords, replace=False)
            for i in coords:
                orig = flat[i]
                flat[i] = orig + h
                up = float(f().data)
                flat[i] = orig - h
                down = float(f().data)
                flat[i] = orig
                if not (np.isfinite(up) and np.isfinite(down)):
                    raise NumericError("loss is not finite under perturbation")
                num = (up - down) / (2 * h)
                a = float(ga.reshape(-1)[i])
                worst = max(worst, abs(a - num) / max(1.0, abs(a), abs(num)))
    return worst
