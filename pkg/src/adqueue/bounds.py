"""Lower bounds on overdraft levels and the threshold-policy queue.

Any policy whose revenue is within ``eps`` of the optimum keeps an average
overdraft of order ``log(1/eps)``. The single- and multi-queue bounds below
evaluate that floor, with natural logarithms throughout.

The threshold-policy chain shows the order is attained. Arrivals of size 2
come with probability ``nu`` into a unit-rate queue. Below level ``T`` all
arrivals are admitted, above ``T`` none are, and at ``T`` one arrival is
admitted with probability ``p1`` and two with probability ``p2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ProblemInstance


@dataclass(frozen=True)
class LowerBoundParams:
    """``phi``: probability of a cycle without queries; ``P_plus``: probability all randomized budgets are positive."""

    epsilon: float
    phi: float
    P_plus: float = 1.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.phi < 1:
            raise ValueError(f"phi must lie in (0,1), got {self.phi}")
        if not 0 < self.P_plus <= 1:
            raise ValueError(f"P_plus must lie in (0,1], got {self.P_plus}")

    @classmethod
    def from_instance(cls, inst: ProblemInstance, epsilon: float, clients=None):
        """``phi = (1 - nu)^N``; ``P_plus`` multiplies ``Pr(b~_i > 0)`` over ``clients`` (default all)."""
        b = inst.budget if clients is None else inst.budget[np.atleast_1d(clients)]
        positive = np.where(b >= 1, 1.0, b - np.floor(b))
        return cls(epsilon, (1.0 - inst.arrival_prob) ** inst.cycle_slots, float(np.prod(positive)))


def single_queue_lower_bound(params: LowerBoundParams) -> float:
    """``log(1/eps) / (2 (1 - log(phi P_plus))) - 1``."""
    return math.log(1.0 / params.epsilon) / (2.0 * (1.0 - math.log(params.phi * params.P_plus))) - 1.0


@dataclass(frozen=True)
class HalfspaceRegion:
    """``{lambda >= 0 : h[n] . lambda <= d[n]}`` with ``h >= 0`` and ``d > 0``."""

    h: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        h = np.atleast_2d(np.asarray(self.h, dtype=float))
        d = np.asarray(self.d, dtype=float).reshape(-1)
        if h.shape[0] != d.size:
            raise ValueError("need one offset per halfspace row")
        if np.any(h < 0):
            raise ValueError("halfspace coefficients must be nonnegative")
        if np.any(d <= 0):
            raise ValueError("halfspace offsets must be positive")
        if not np.any(h > 0):
            raise ValueError("at least one coefficient must be positive")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "d", d)

    def contains(self, lam) -> bool:
        lam = np.asarray(lam, dtype=float)
        return bool(np.all(lam >= 0) and np.all(self.h @ lam <= self.d + 1e-12))


def two_client_region(inst: ProblemInstance) -> HalfspaceRegion:
    """Per-cycle revenue region of a one-keyword, two-client, one-slot instance.

    Each client is capped by its budget, and the clients share the slot:
    ``lambda_1 / (c_1 r_1) + lambda_2 / (c_2 r_2) <= N nu``.
    """
    if (inst.num_keywords, inst.num_clients, inst.num_slots) != (1, 2, 1):
        raise ValueError("two_client_region needs 1 keyword, 2 clients and 1 slot")
    cr = inst.pair_revenue[0, :, 0]
    if np.any(cr <= 0) or np.any(inst.budget <= 0):
        raise ValueError("both clients need positive expected payment and budget")
    h = np.array([[1.0, 0.0], [0.0, 1.0], 1.0 / cr])
    d = np.array([inst.budget[0], inst.budget[1], inst.cycle_slots * inst.keyword_rates[0]])
    return HalfspaceRegion(h, d)


@dataclass(frozen=True)
class MultiQueueBound:
    C1: float
    C2: float
    bound: float


def multi_queue_lower_bound(params: LowerBoundParams, region: HalfspaceRegion) -> MultiQueueBound:
    """``(log(1/eps) - C2) / C1 - 1`` on the sum of mean overdrafts.

    ``C1 = 2 (1 - log(phi P_plus)) max h`` and ``C2 = max(log max h, 0)``.
    """
    hmax = float(region.h.max())
    C1 = 2.0 * (1.0 - math.log(params.phi * params.P_plus)) * hmax
    C2 = max(math.log(hmax), 0.0)
    return MultiQueueBound(C1, C2, (math.log(1.0 / params.epsilon) - C2) / C1 - 1.0)


class InvalidChainError(ValueError):
    pass


@dataclass(frozen=True)
class ThresholdPolicy:
    T: int
    p1: float
    p2: float
    nu: float

    def __post_init__(self):
        if int(self.T) != self.T or self.T < 0:
            raise InvalidChainError(f"T must be a nonnegative integer, got {self.T}")
        if self.p1 < 0 or self.p2 < 0 or self.p1 + self.p2 > 1:
            raise InvalidChainError("need p1, p2 >= 0 with p1 + p2 <= 1")
        if not 0.5 < self.nu < 1:
            raise InvalidChainError(f"nu must lie in (1/2, 1), got {self.nu}")
        if 1.0 - (self.p1 + self.p2) * self.nu <= 0:
            raise InvalidChainError("1 - (p1 + p2) nu must be positive")


@dataclass(frozen=True)
class StationaryResult:
    pi: np.ndarray
    throughput: float
    mean_queue: float


def threshold_policy_stationary(policy: ThresholdPolicy) -> StationaryResult:
    """Exact stationary law on states ``0..T+1`` from the cut equations.

    Below ``T`` the queue moves up w.p. ``nu`` and down w.p. ``1 - nu``, so
    ``pi_{i+1} = pi_i nu / (1 - nu)`` for ``i <= T-2``. Level ``T`` is
    entered from ``T-1`` w.p. ``nu`` and left downwards w.p.
    ``1 - (p1 + p2) nu``, giving ``pi_T = pi_{T-1} nu / (1 - (p1 + p2) nu)``.
    Level ``T+1`` is entered w.p. ``p2 nu`` and always left, so
    ``pi_{T+1} = pi_T p2 nu``.
    """
    T, p1, p2, nu = policy.T, policy.p1, policy.p2, policy.nu
    w = np.empty(T + 2)
    w[0] = 1.0
    for i in range(1, T):
        w[i] = w[i - 1] * nu / (1.0 - nu)
    if T >= 1:
        w[T] = w[T - 1] * nu / (1.0 - (p1 + p2) * nu)
    w[T + 1] = w[T] * p2 * nu
    pi = w / w.sum()
    throughput = nu * (2.0 * pi[:T].sum() + pi[T] * (2.0 * p2 + p1))
    return StationaryResult(pi, float(throughput), float(np.arange(T + 2) @ pi))


def transition_matrix(policy: ThresholdPolicy) -> np.ndarray:
    """One-step transition matrix of the threshold-policy queue on ``0..T+1``."""
    T, p1, p2, nu = policy.T, policy.p1, policy.p2, policy.nu
    P = np.zeros((T + 2, T + 2))
    for i in range(T + 2):
        if i < T:
            moves = {i + 1: nu, max(i - 1, 0): 1.0 - nu}
        elif i == T:
            moves = {T: p1 * nu, T + 1: p2 * nu}
            down = max(T - 1, 0)
            moves[down] = moves.get(down, 0.0) + 1.0 - (p1 + p2) * nu
        else:
            moves = {T: 1.0}
        for j, p in moves.items():
            P[i, j] += p
    return P


def simulate_threshold_chain(policy: ThresholdPolicy, steps: int, seed: int = 0, chains: int = 1000,
                             burn_in: int = 1000):
    """Monte Carlo occupation frequencies and throughput of the threshold policy.

    ``chains`` independent copies run in parallel, each for ``steps``
    slots after ``burn_in``. Returns ``(freq, throughput, per_chain_throughput)``.
    """
    from .stochastic import RngStream

    rng = RngStream(seed, 0)
    T, p1, p2, nu = policy.T, policy.p1, policy.p2, policy.nu
    Q = np.zeros(chains, dtype=np.int64)
    counts = np.zeros(T + 2, dtype=np.int64)
    admitted = np.zeros(chains)
    for t in range(burn_in + steps):
        u = rng.uniform((2, chains))
        arrive = u[0] < nu
        acc = np.where(Q < T, 2, 0)
        at_T = Q == T
        acc = np.where(at_T, np.where(u[1] < p1, 1, np.where(u[1] < p1 + p2, 2, 0)), acc)
        acc = np.where(arrive, acc, 0)
        if t >= burn_in:
            counts += np.bincount(Q, minlength=T + 2)
            admitted += acc
        Q = np.maximum(Q + acc - 1, 0)
    freq = counts / counts.sum()
    per_chain = admitted / steps
    return freq, float(per_chain.mean()), per_chain


def threshold_constant(nu: float, p1: float, p2: float, epsilon: float) -> float:
    """``C(eps) = (2 nu - 1 + eps)(1 - nu (p1 + p2)) / (nu (2 - 2 (1 - nu) p2 - p1))``."""
    return (2 * nu - 1 + epsilon) * (1 - nu * (p1 + p2)) / (nu * (2 - 2 * (1 - nu) * p2 - p1))


@dataclass(frozen=True)
class ThresholdChoice:
    T_real: float
    T_int: int
    throughput: float
    throughput_below: float
    throughput_above: float
    mean_queue: float

    def brackets(self, target: float) -> bool:
        """Whether ``target`` lies between the throughputs at ``T_int - 1`` and ``T_int + 1``."""
        return self.throughput_below <= target <= self.throughput_above


def threshold_for_epsilon(nu: float, p1: float, p2: float, epsilon: float) -> ThresholdChoice:
    """Threshold reaching throughput ``1 - eps``: ``(log(1/eps) + log C(eps)) / log(nu / (1 - nu))``.

    Also reports the exact throughput at the rounded threshold and its
    neighbours; at ``T_int = 0`` the lower neighbour is taken as 0.
    """
    if not 0.5 < nu < 1:
        raise ValueError("nu must lie in (1/2, 1)")
    T = (math.log(1.0 / epsilon) + math.log(threshold_constant(nu, p1, p2, epsilon))) / math.log(nu / (1 - nu))
    Ti = max(int(round(T)), 0)

    def stat(t):
        return threshold_policy_stationary(ThresholdPolicy(t, p1, p2, nu))

    here = stat(Ti)
    below = stat(Ti - 1).throughput if Ti >= 1 else 0.0
    return ThresholdChoice(T, Ti, here.throughput, below, stat(Ti + 1).throughput, here.mean_queue)


@dataclass(frozen=True)
class Regression:
    slope: float
    intercept: float
    r2: float


def log_tightness_regression(nu: float, p1: float, p2: float, eps_list) -> Regression:
    """Least-squares fit of the exact mean queue at the chosen threshold on ``log(1/eps)``."""
    x = np.array([math.log(1.0 / e) for e in eps_list])
    y = np.array([threshold_for_epsilon(nu, p1, p2, e).mean_queue for e in eps_list])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return Regression(float(slope), float(intercept), r2)
