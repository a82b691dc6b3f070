"""Seeded random draws for query arrivals, clicks and randomized budgets.

Every simulation draws from independent streams keyed by ``(seed, stream)``.
Each time slot consumes a fixed number of uniforms whatever happens in it:
one for the query and one per webpage slot for clicks. Changing the
algorithm or epsilon therefore never shifts the realized arrival path, which
makes runs at different parameters directly comparable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

ARRIVALS = 0
CLICKS = 1
BUDGETS = 2
POLICY = 3
POPULATION = 4
ESTIMATION = 5

NO_QUERY = -1


class RngStream:
    """A reproducible uniform stream identified by a 64-bit seed and a stream id."""

    def __init__(self, seed: int, stream: int = ARRIVALS):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        if stream < 0:
            raise ValueError("stream id must be nonnegative")
        self.seed = seed
        self.stream = int(stream)
        ss = np.random.SeedSequence(seed, spawn_key=(self.stream,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def uniform(self, size=None):
        return self.generator.random(size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"


def keyword_cdf(rates) -> np.ndarray:
    """Cumulative per-slot keyword probabilities, ``cdf[-1]`` is the arrival probability."""
    return np.cumsum(np.asarray(rates, dtype=float))


def keywords_from_uniforms(u, rates) -> np.ndarray:
    """Map uniforms to keyword indices, ``NO_QUERY`` when nothing arrives.

    Keyword ``q`` is returned when ``cdf[q-1] <= u < cdf[q]``.
    """
    cdf = keyword_cdf(rates)
    u = np.asarray(u, dtype=float)
    k = np.searchsorted(cdf, u, side="right")
    return np.where(k >= cdf.size, NO_QUERY, k)


@dataclass(frozen=True)
class SlotDraw:
    """Random outcome of one time slot.

    ``keyword`` is ``None`` when no query arrives. ``click_u`` holds one
    uniform per webpage slot; the ad placed in slot ``s`` is clicked when
    ``click_u[s] < c``.
    """

    keyword: Optional[int]
    click_u: np.ndarray

    def clicked(self, s: int, c: float) -> bool:
        return bool(self.click_u[s] < c)


def sample_query(arrivals: RngStream, inst, clicks: Optional[RngStream] = None) -> SlotDraw:
    """Draw the query of one slot and the click uniforms for its webpage slots."""
    u = arrivals.uniform()
    k = int(keywords_from_uniforms(u, inst.keyword_rates))
    click_src = clicks if clicks is not None else arrivals
    cu = click_src.uniform(inst.num_slots)
    return SlotDraw(None if k == NO_QUERY else k, cu)


def sample_click(stream: RngStream, c: float) -> bool:
    return bool(stream.uniform() < c)


def round_randomly(u, x) -> np.ndarray:
    """``ceil(x)`` where ``u < x - floor(x)``, else ``floor(x)``."""
    x = np.asarray(x, dtype=float)
    lo = np.floor(x)
    return (lo + (np.asarray(u) < (x - lo))).astype(np.int64)


def sample_integer_budget(stream: RngStream, b):
    """Randomized integer budget with mean ``b``; integer budgets are returned unchanged.

    One uniform is consumed per entry of ``b``.
    """
    b = np.asarray(b, dtype=float)
    if np.any(b < 0):
        raise ValueError("budget must be nonnegative")
    out = round_randomly(stream.uniform(b.shape), b)
    return int(out) if out.ndim == 0 else out


def sample_integer_requirement(stream: RngStream, m):
    """Randomized integer impression requirement, same law as :func:`sample_integer_budget`."""
    m = np.asarray(m, dtype=float)
    if np.any(m < 0):
        raise ValueError("requirement must be nonnegative")
    out = round_randomly(stream.uniform(m.shape), m)
    return int(out) if out.ndim == 0 else out


class CycleStreams:
    """Arrival, click and budget streams for one simulation run."""

    def __init__(self, seed: int):
        self.seed = seed
        self.arrivals = RngStream(seed, ARRIVALS)
        self.clicks = RngStream(seed, CLICKS)
        self.budgets = RngStream(seed, BUDGETS)
        self.policy = RngStream(seed, POLICY)
        self.population = RngStream(seed, POPULATION)

    def cycle_block(self, num_slots_per_cycle: int, num_webpage_slots: int):
        """Uniforms for one cycle: query draws (N,) and click draws (N, L)."""
        u = self.arrivals.uniform(num_slots_per_cycle)
        cu = self.clicks.uniform((num_slots_per_cycle, num_webpage_slots))
        return u, cu


def sample_batch_arrivals(stream: RngStream, sizes, probs, count: int) -> np.ndarray:
    """Number of arrivals in each of ``count`` slots for a batch-arrival demo.

    ``sizes[j]`` queries arrive with probability ``probs[j]``. This process
    lies outside the single-query Bernoulli model and only drives the
    fairness demo.
    """
    sizes = np.asarray(sizes, dtype=int)
    cdf = np.cumsum(np.asarray(probs, dtype=float))
    if abs(cdf[-1] - 1.0) > 1e-12:
        raise ValueError("batch size probabilities must sum to 1")
    idx = np.searchsorted(cdf, stream.uniform(count), side="right")
    return sizes[np.minimum(idx, sizes.size - 1)]
