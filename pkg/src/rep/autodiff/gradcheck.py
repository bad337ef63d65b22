from __future__ import annotations

from typing import Callable

import numpy as np

from rep.autodiff.tensor import Tape, Tensor, backward


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-5,
    samples_per_param: int | None = 20,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """Worst relative error between tape gradients and central differences.

    ``fn`` must rebuild the scalar loss from the current parameter values each
    call and be deterministic (dropout off).  Use 64-bit parameters.
    """
    rng = np.random.default_rng(seed)
    with Tape() as tape:
        loss = fn()
    analytic = backward(tape, loss, params)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if samples_per_param is None or samples_per_param >= n:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=samples_per_param, replace=False)
        for i in coords:
            old = flat[i]
            flat[i] = old + eps
            up = float(fn().data)
            flat[i] = old - eps
            down = float(fn().data)
            flat[i] = old
            numeric = (up - down) / (2 * eps)
            worst = max(worst, relative_error(float(analytic[name].reshape(-1)[i]), numeric, floor))
    return worst
