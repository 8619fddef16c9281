"""Central finite-difference oracle for analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, OracleError
from .tensor import Tensor, no_grad


def finite_difference_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Largest relative error between backprop and central differences.

    ``f`` takes no arguments and returns a scalar tensor computed from
    ``params``. The error for one entry is
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)``.
    """
    if h <= 0:
        raise ContractError(f"finite difference step must be positive, got {h}")
    with no_grad():
        first = np.array(f().data, copy=True)
        second = np.array(f().data, copy=True)
    if not np.array_equal(first, second):
        raise OracleError("function under test is not deterministic: two calls returned different values")

    for p in params:
        p.grad = None
    f().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    with no_grad():
        for p, grad in zip(params, analytic):
            flat = p.data.reshape(-1)
            gflat = grad.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + h
                up = float(f().data)
                flat[k] = orig - h
                down = float(f().data)
                flat[k] = orig
                numeric = (up - down) / (2.0 * h)
                a = float(gflat[k])
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
                worst = max(worst, err)
    return worst
