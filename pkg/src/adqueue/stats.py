"""Standard errors for time averages of autocorrelated simulation output."""

from __future__ import annotations

import numpy as np


def batch_means_se(x, n_batches: int = 20) -> float:
    """Standard error of ``mean(x)`` from ``n_batches`` contiguous batch means.

    Queue-driven series are strongly autocorrelated, so the naive i.i.d.
    formula would understate the error.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size < 2:
        return 0.0
    k = min(n_batches, x.size)
    means = np.array([b.mean() for b in np.array_split(x, k)])
    return float(means.std(ddof=1) / np.sqrt(k))


def binomial_se(p: float, n: int) -> float:
    return float(np.sqrt(p * (1.0 - p) / n))
