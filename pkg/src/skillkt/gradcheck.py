"""Finite-difference gradient oracle.

Everything here evaluates the target function as a black box; nothing depends
on the tape machinery, so these estimates stay independent of the analytic
gradients they are used to check.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ConfigError


def finite_difference_grad(f: Callable[[np.ndarray], float], x: np.ndarray,
                           h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient estimate, one coordinate at a time."""
    if h <= 0:
        raise ConfigError(f"finite difference step must be positive, got {h}")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        grad[i] = (f(xp) - f(xm)) / (2.0 * h)
        it.iternext()
    return grad


def directional_derivative_fd(f: Callable[[np.ndarray], float], x: np.ndarray,
                              direction: np.ndarray, h: float = 1e-5) -> float:
    """Central-difference estimate of the derivative of f along a direction."""
    if h <= 0:
        raise ConfigError(f"finite difference step must be positive, got {h}")
    x = np.asarray(x, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    return float((f(x + h * d) - f(x - h * d)) / (2.0 * h))


def max_rel_error(approx: np.ndarray, exact: np.ndarray, floor: float = 1e-8) -> float:
    """Largest |approx-exact| / max(|approx|, |exact|, floor) over all entries.

    The floor turns the comparison absolute for entries whose true magnitude
    is below it, which keeps near-zero gradients from producing spurious
    relative blow-ups.
    """
    a = np.asarray(approx, dtype=np.float64)
    b = np.asarray(exact, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
