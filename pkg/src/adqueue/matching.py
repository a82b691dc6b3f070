"""Maximum-weight one-to-one assignment of clients to webpage slots.

Weights are a (clients, slots) array. Ineligible pairs carry ``-inf`` and
edges with weight <= 0 are never used, so the empty assignment is always
admissible and the optimum is nonnegative.

Ties are broken deterministically. An assignment is described by its slot
vector ``(slot of client 0, slot of client 1, ...)`` with an unassigned
client counted as slot ``L``. Among all assignments whose total lies within
``TIE_RTOL * max positive weight`` of the optimum, the lexicographically
smallest slot vector is returned.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

TIE_RTOL = 1e-12
MAX_DP_SLOTS = 12
MAX_ENUMERATION = 2_000_000


@dataclass(frozen=True)
class Assignment:
    """A partial matching stored as sorted ``(client, slot)`` pairs."""

    pairs: tuple
    total: float = 0.0

    def __post_init__(self):
        clients = [i for i, _ in self.pairs]
        slots = [s for _, s in self.pairs]
        if len(set(clients)) != len(clients) or len(set(slots)) != len(slots):
            raise ValueError(f"not a matching: {self.pairs}")

    def __hash__(self):
        return hash(self.pairs)

    def __eq__(self, other):
        return isinstance(other, Assignment) and self.pairs == other.pairs

    @property
    def is_empty(self) -> bool:
        return not self.pairs

    def matrix(self, num_clients: int, num_slots: int) -> np.ndarray:
        m = np.zeros((num_clients, num_slots), dtype=np.int8)
        for i, s in self.pairs:
            m[i, s] = 1
        return m

    @cached_property
    def clients(self) -> np.ndarray:
        return np.array([i for i, _ in self.pairs], dtype=np.intp)

    @cached_property
    def slots(self) -> np.ndarray:
        return np.array([s for _, s in self.pairs], dtype=np.intp)

    def slot_vector(self, num_clients: int, num_slots: int) -> tuple:
        v = [num_slots] * num_clients
        for i, s in self.pairs:
            v[i] = s
        return tuple(v)

    def value(self, w) -> float:
        """Sum of ``w[i, s]`` over the pairs, accumulated in client order."""
        t = 0.0
        for i, s in self.pairs:
            t += float(w[i, s])
        return t


EMPTY = Assignment(())


def _prepare(w, eligible=None) -> np.ndarray:
    w = np.array(w, dtype=float)
    if w.ndim != 2:
        raise ValueError(f"weight matrix must be 2-D, got shape {w.shape}")
    if eligible is not None:
        eligible = np.asarray(eligible, dtype=bool)
        if eligible.shape != w.shape:
            raise ValueError("eligibility mask does not match weight matrix")
        w[~eligible] = -np.inf
    w[np.isnan(w)] = -np.inf
    return w


def _tolerance(w: np.ndarray) -> float:
    pos = w[w > 0]
    return TIE_RTOL * float(pos.max()) if pos.size else 0.0


def max_weight_assignment(w, eligible=None) -> Assignment:
    """Best matching of clients (rows) to slots (columns) under the documented tie rule."""
    w = _prepare(w, eligible)
    n, L = w.shape
    usable = w > 0
    if not usable.any():
        return EMPTY
    if L > MAX_DP_SLOTS:
        return _large_assignment(w)
    full = 1 << L
    # best[i][mask]: best total of clients i.. given the slots in mask are taken
    best = np.zeros((n + 1, full))
    options = [[(s, float(w[i, s])) for s in range(L) if usable[i, s]] for i in range(n)]
    for i in range(n - 1, -1, -1):
        nxt = best[i + 1]
        cur = nxt.copy()
        for s, ws in options[i]:
            bit = 1 << s
            for mask in range(full):
                if not mask & bit:
                    v = ws + nxt[mask | bit]
                    if v > cur[mask]:
                        cur[mask] = v
        best[i] = cur
    target = best[0, 0] - _tolerance(w)
    pairs = []
    acc = 0.0
    mask = 0
    for i in range(n):
        for s, ws in options[i]:
            bit = 1 << s
            if not mask & bit and acc + ws + best[i + 1, mask | bit] >= target:
                pairs.append((i, s))
                acc += ws
                mask |= bit
                break
    a = Assignment(tuple(pairs))
    return Assignment(a.pairs, a.value(w))


def _large_assignment(w: np.ndarray) -> Assignment:
    from scipy.optimize import linear_sum_assignment

    gain = np.where(w > 0, w, 0.0)
    rows, cols = linear_sum_assignment(gain, maximize=True)
    pairs = tuple((int(i), int(s)) for i, s in zip(rows, cols) if w[i, s] > 0)
    a = Assignment(pairs)
    return Assignment(a.pairs, a.value(w))


def enumerate_assignments(w, eligible=None) -> Assignment:
    """Exhaustive search over all partial matchings, same tie rule.

    Used as a reference implementation; guarded to small problems.
    """
    w = _prepare(w, eligible)
    n, L = w.shape
    if L > MAX_DP_SLOTS:
        raise ValueError(f"enumeration limited to {MAX_DP_SLOTS} slots, got {L}")
    choices = [[s for s in range(L) if w[i, s] > 0] + [L] for i in range(n)]
    count = 1
    for c in choices:
        count *= len(c)
        if count > MAX_ENUMERATION:
            raise ValueError("too many candidate assignments to enumerate")
    candidates = []
    for vec in itertools.product(*choices):
        used = [s for s in vec if s < L]
        if len(used) != len(set(used)):
            continue
        total = 0.0
        for i, s in enumerate(vec):
            if s < L:
                total += float(w[i, s])
        candidates.append((vec, total))
    top = max(t for _, t in candidates)
    tol = _tolerance(w)
    vec = min(v for v, t in candidates if t >= top - tol)
    pairs = tuple((i, s) for i, s in enumerate(vec) if s < L)
    return Assignment(pairs, next(t for v, t in candidates if v == vec))


def all_assignments(eligible) -> list:
    """Every matching (including the empty one) that uses only eligible pairs."""
    eligible = np.asarray(eligible, dtype=bool)
    n, L = eligible.shape
    choices = [[s for s in range(L) if eligible[i, s]] + [L] for i in range(n)]
    out = []
    for vec in itertools.product(*choices):
        used = [s for s in vec if s < L]
        if len(used) == len(set(used)):
            out.append(Assignment(tuple((i, s) for i, s in enumerate(vec) if s < L)))
    return out
