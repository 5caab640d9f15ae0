"""Central finite-difference verification of backward rules."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, backward, default_dtype


def _pow2_step(eps: float) -> float:
    # a power-of-two step keeps x +/- h exactly representable for moderate |x|
    return float(2.0 ** np.round(np.log2(eps)))


def numerical_grad(f: Callable[[Tensor], Tensor], x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    h = _pow2_step(eps)
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    with default_dtype(np.float64):
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            xp = flat[i]
            fp = f(Tensor(x.copy())).item()
            flat[i] = orig - h
            xm = flat[i]
            fm = f(Tensor(x.copy())).item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (xp - xm)
    return g


def analytic_grad(f: Callable[[Tensor], Tensor], x: np.ndarray) -> np.ndarray:
    with default_dtype(np.float64):
        xt = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
        out = f(xt)
        backward(out)
    return xt.grad if xt.grad is not None else np.zeros_like(xt.data)


def grad_check(f: Callable[[Tensor], Tensor], x: np.ndarray, eps: float = 1e-6) -> float:
    """Return max_i |analytic_i - central_i| / max(1, |analytic_i|).

    ``f`` maps a tensor to a scalar tensor. Evaluation happens in 64-bit.
    """
    a = analytic_grad(f, x)
    n = numerical_grad(f, x, eps)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(1.0, np.abs(a))))
