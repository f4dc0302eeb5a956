"""Order-independent Monte-Carlo aggregation.

Means are computed with exactly rounded summation (``math.fsum``), so the
result does not depend on the order in which trials finished.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np


def exact_sum(stack) -> np.ndarray:
    """Exactly rounded sum over axis 0 of an array of shape ``(T, ...)``."""
    stack = np.asarray(stack, dtype=float)
    flat = stack.reshape(stack.shape[0], -1)
    out = np.array([math.fsum(flat[:, j]) for j in range(flat.shape[1])])
    return out.reshape(stack.shape[1:])


def exact_mean(stack) -> np.ndarray:
    stack = np.asarray(stack, dtype=float)
    return exact_sum(stack) / stack.shape[0]


def standard_error(stack) -> np.ndarray:
    """Standard error of the mean over axis 0 (sample std with ``ddof=1``)."""
    stack = np.asarray(stack, dtype=float)
    t = stack.shape[0]
    if t < 2:
        return np.full(stack.shape[1:], np.inf)
    mean = exact_mean(stack)
    var = exact_sum((stack - mean) ** 2) / (t - 1)
    return np.sqrt(var / t)


def run_trials(func, args, jobs: int = 1) -> list:
    """``[func(a) for a in args]``, optionally spread over ``jobs`` processes.

    Results come back in argument order whatever the completion order.
    """
    args = list(args)
    if jobs is None or jobs <= 1 or len(args) <= 1:
        return [func(a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, args, chunksize=max(1, len(args) // (4 * jobs))))
