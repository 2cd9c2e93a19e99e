"""Central finite-difference checks against recorded gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Value, backward

STEP = 1e-5
TOLERANCE = 1e-4


def numeric_grad(f: Callable[[], Value], param: Value, step: float = STEP) -> np.ndarray:
    """Central differences of the scalar ``f()`` with respect to ``param.data``."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        plus = f().item()
        flat[i] = orig - step
        minus = f().item()
        flat[i] = orig
        gflat[i] = (plus - minus) / (2 * step)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """``|a - n| / max(|a|, |n|)`` in the 2-norm; gradients below ``floor`` count as exact zeros."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < floor:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def check(f: Callable[[], Value], params: Sequence[Value], step: float = STEP, pooled: bool = False) -> float:
    """Relative error between ``backward`` and finite differences.

    By default this is the worst error over ``params`` taken one at a time. With
    ``pooled=True`` all gradients are flattened into one vector first, which keeps
    parameters whose gradient is near zero from reporting pure rounding noise.
    """
    for p in params:
        p.grad = None
    backward(f())
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    numeric = [numeric_grad(f, p, step) for p in params]
    if pooled:
        flat = lambda gs: np.concatenate([g.reshape(-1) for g in gs])
        return rel_error(flat(analytic), flat(numeric))
    return max((rel_error(a, n) for a, n in zip(analytic, numeric)), default=0.0)
