"""Online revenue maximization with overdraft queues.

Each client has an overdraft queue ``Q_i``, frozen for a whole budgeting
cycle of ``N`` slots. A query for keyword ``q`` is answered with the
assignment maximizing ``sum M_is c_qis r_qi (theta_i - Q_i)``, where the
threshold ``theta_i`` is ``1/eps`` for the standard algorithm. At the end of
the cycle ``Q_i <- max(Q_i + A_i - b~_i, floor_i)`` with ``A_i`` the revenue
charged to client ``i`` and ``b~_i`` its randomized integer budget.

The underdraft variant lowers the threshold to ``Gamma_i <= 0`` and lets the
queue fall to ``-C_i``. The estimated-CTR variant ranks with estimates
``c_hat`` while clicks are still drawn from the true rates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .matching import max_weight_assignment
from .model import InstanceError, ProblemInstance, max_click_payment, max_pair_revenue, require_valid
from .stochastic import (NO_QUERY, CycleStreams, RngStream, ESTIMATION, keywords_from_uniforms,
                         round_randomly, sample_batch_arrivals)

VARIANTS = ("standard", "underdraft", "estimated")


@dataclass(frozen=True)
class RevenuePolicy:
    """Algorithm parameters shared by the three variants.

    ``threshold[i]`` is the queue level at which client ``i`` stops being
    posted and ``floor[i]`` the lowest value its queue may take.
    ``weight_ctr`` holds the click-through rates used for ranking.
    """

    variant: str
    epsilon: float
    threshold: np.ndarray
    floor: np.ndarray
    weight_ctr: np.ndarray
    delta: float = 0.0
    pay_per_impression: bool = False

    @classmethod
    def standard(cls, inst: ProblemInstance, epsilon: float, pay_per_impression=False):
        _check_eps(epsilon)
        n = inst.num_clients
        return cls("standard", epsilon, np.full(n, 1.0 / epsilon), np.zeros(n),
                   inst.effective_ctr, 0.0, pay_per_impression)

    @classmethod
    def underdraft(cls, inst: ProblemInstance, epsilon: float, strict: bool = False,
                   pay_per_impression=False):
        gamma, C = underdraft_thresholds(inst, epsilon, strict=strict)
        return cls("underdraft", epsilon, gamma, -C, inst.effective_ctr, 0.0, pay_per_impression)

    @classmethod
    def estimated(cls, inst: ProblemInstance, epsilon: float, ctr_hat=None, delta: float = 0.0,
                  seed: int = 0, pay_per_impression=False):
        """Rank with ``ctr_hat``; drawn as ``c (1 + delta u)``, ``u ~ U[-1, 1]``, when omitted."""
        _check_eps(epsilon)
        if ctr_hat is None:
            ctr_hat = perturbed_ctr(inst, delta, seed)
        ctr_hat = np.where(inst.eligibility, np.asarray(ctr_hat, dtype=float), 0.0)
        if ctr_hat.shape != inst.ctr.shape:
            raise ValueError("ctr_hat must match the shape of ctr")
        n = inst.num_clients
        return cls("estimated", epsilon, np.full(n, 1.0 / epsilon), np.zeros(n),
                   ctr_hat, delta, pay_per_impression)

    def initial_queue(self) -> np.ndarray:
        return np.zeros_like(self.threshold) if self.variant != "underdraft" else self.floor.copy()


def _check_eps(epsilon):
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")


def perturbed_ctr(inst: ProblemInstance, delta: float, seed: int = 0) -> np.ndarray:
    """Estimates ``c (1 + delta u)`` with ``u`` i.i.d. uniform on [-1, 1] per entry."""
    if not 0 <= delta < 1:
        raise ValueError("delta must lie in [0, 1)")
    u = RngStream(seed, ESTIMATION).uniform(inst.ctr.shape) * 2.0 - 1.0
    return inst.ctr * (1.0 + delta * u)


def revenue_weights(inst: ProblemInstance, policy: RevenuePolicy, Q, q: int) -> np.ndarray:
    """Edge weights ``c r (theta_i - Q_i)`` for keyword ``q``; ``-inf`` marks ineligible pairs."""
    Q = np.asarray(Q, dtype=float)
    w = policy.weight_ctr[q] * inst.bid[q][:, None] * (policy.threshold - Q)[:, None]
    return np.where(inst.eligibility[q], w, -np.inf)


def update_overdraft(Q, A, b_tilde):
    return np.maximum(np.asarray(Q, dtype=float) + A - b_tilde, 0.0)


def update_underdraft(Q, A, b_tilde, C):
    return np.maximum(np.asarray(Q, dtype=float) + A - b_tilde, -np.asarray(C, dtype=float))


def underdraft_thresholds(inst: ProblemInstance, epsilon: float, strict: bool = False):
    """Throttling thresholds ``Gamma_i`` and credit limits ``C_i = 1/eps - Gamma_i``.

    ``Gamma_i = min(floor(b_i) - N max_{q,s} r c, 0)``. With ``strict=True``
    the expected payment ``r c`` is replaced by the largest single-click
    payment, which keeps the queue nonpositive on every sample path.
    """
    _check_eps(epsilon)
    if inst.budget is None:
        raise InstanceError(["budget is required for underdraft thresholds"])
    peak = max_click_payment(inst) if strict else max_pair_revenue(inst)
    gamma = np.minimum(np.floor(inst.budget) - inst.cycle_slots * peak, 0.0)
    # snap off binary rounding in c*r so the shift against the standard policy stays exact
    gamma = np.round(gamma, 9) + 0.0
    return gamma, 1.0 / epsilon - gamma


@dataclass(frozen=True)
class CycleOutcome:
    A: np.ndarray
    realized_budget: np.ndarray
    Q_after: np.ndarray
    num_queries: int
    num_clicks: int
    decisions: tuple

    @property
    def revenue(self) -> float:
        return float(self.A.sum())


def cycle_decisions(inst: ProblemInstance, policy: RevenuePolicy, Q) -> tuple:
    """Per-keyword assignment used throughout a cycle that starts with queues ``Q``."""
    out = []
    for q in range(inst.num_keywords):
        out.append(max_weight_assignment(revenue_weights(inst, policy, Q, q)))
    return tuple(out)


def serve_cycle(inst: ProblemInstance, decisions, keywords, click_u, pay_per_impression=False):
    """Charges per client for one cycle given the query sequence and click uniforms.

    Returns ``(A, impressions, clicks)``.
    """
    A = np.zeros(inst.num_clients)
    imps = np.zeros(inst.num_clients, dtype=np.int64)
    clicks = 0
    for q, a in enumerate(decisions):
        if a.is_empty:
            continue
        rows = keywords == q
        cnt = int(rows.sum())
        if cnt == 0:
            continue
        for i, s in a.pairs:
            k = int((click_u[rows, s] < inst.ctr[q, i, s]).sum())
            clicks += k
            A[i] += inst.bid[q, i] * (cnt if pay_per_impression else k)
            imps[i] += cnt
    return A, imps, clicks


def run_budgeting_cycle(inst: ProblemInstance, policy: RevenuePolicy, Q, streams: CycleStreams,
                        decisions: Optional[tuple] = None) -> CycleOutcome:
    """Simulate one budgeting cycle and apply the queue update of the policy's variant."""
    Q = np.asarray(Q, dtype=float)
    N, L = inst.cycle_slots, inst.num_slots
    u, cu = streams.cycle_block(N, L)
    kw = keywords_from_uniforms(u, inst.keyword_rates)
    if decisions is None:
        decisions = cycle_decisions(inst, policy, Q)
    A, _, clicks = serve_cycle(inst, decisions, kw, cu, policy.pay_per_impression)
    b = round_randomly(streams.budgets.uniform(inst.num_clients), inst.budget)
    Q_after = np.maximum(Q + A - b, policy.floor)
    return CycleOutcome(A, b, Q_after, int((kw != NO_QUERY).sum()), clicks, decisions)


@dataclass
class RevenueTrace:
    """Per-cycle record of a revenue run; ``Q[k]`` is the queue at the start of cycle ``k``."""

    A: np.ndarray
    Q: np.ndarray
    budgets: np.ndarray
    queries: np.ndarray
    clicks: np.ndarray
    decisions: Optional[list] = None

    @property
    def revenue(self) -> np.ndarray:
        return self.A.sum(axis=1)

    @property
    def cycles(self) -> int:
        return self.A.shape[0]

    def average_revenue_per_slot(self, cycle_slots: int, burn_in: int = 0) -> float:
        return float(self.revenue[burn_in:].mean() / cycle_slots)


def simulate_revenue(inst: ProblemInstance, policy: RevenuePolicy, cycles: int, seed: int,
                     Q0=None, keep_decisions: bool = False) -> RevenueTrace:
    """Run ``cycles`` budgeting cycles from queue ``Q0`` (default: zero, or ``-C`` for underdraft)."""
    require_valid(inst, need="budget")
    if cycles < 0:
        raise ValueError("cycles must be nonnegative")
    n = inst.num_clients
    streams = CycleStreams(seed)
    Q = policy.initial_queue() if Q0 is None else np.array(Q0, dtype=float)
    As = np.zeros((cycles, n))
    Qs = np.zeros((cycles + 1, n))
    Bs = np.zeros((cycles, n), dtype=np.int64)
    queries = np.zeros(cycles, dtype=np.int64)
    clicks = np.zeros(cycles, dtype=np.int64)
    decisions = [] if keep_decisions else None
    Qs[0] = Q
    cache_key, cache = None, None
    for k in range(cycles):
        key = Q.tobytes()
        if key != cache_key:
            cache_key, cache = key, cycle_decisions(inst, policy, Q)
        out = run_budgeting_cycle(inst, policy, Q, streams, cache)
        As[k], Bs[k], queries[k], clicks[k] = out.A, out.realized_budget, out.num_queries, out.num_clicks
        if keep_decisions:
            decisions.append(out.decisions)
        Q = out.Q_after
        Qs[k + 1] = Q
    return RevenueTrace(As, Qs, Bs, queries, clicks, decisions)


@dataclass
class UnfairnessDemo:
    epsilon: float
    weights: np.ndarray  # (horizon, 2)
    Q: np.ndarray  # (horizon, 2)
    gamma: np.ndarray
    C: np.ndarray


def unfairness_demo(epsilon: float, horizon: int, seed: int = 0) -> UnfairnessDemo:
    """Weight paths of two identical clients started maximally apart.

    Both clients have budget 0.6, click-through rate 0.5 and bid 1, one
    keyword and one webpage slot, ``N = 1``. Each slot carries two queries
    with probability 0.5 and none otherwise. Client 1 starts at ``Gamma_1``
    and client 2 at ``-C_2``; row ``k`` holds ``c r (Gamma_i - Q_i(k))``.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    inst = ProblemInstance(ctr=np.full((1, 2, 1), 0.5), bid=np.ones((1, 2)), arrival_prob=0.5,
                           keyword_prob=[1.0], cycle_slots=1, budget=[0.6, 0.6])
    gamma, C = underdraft_thresholds(inst, epsilon)
    policy = RevenuePolicy.underdraft(inst, epsilon)
    arrivals = RngStream(seed, 0)
    click_stream = RngStream(seed, 1)
    budget_stream = RngStream(seed, 2)
    counts = sample_batch_arrivals(arrivals, [0, 2], [0.5, 0.5], horizon)
    Q = np.array([gamma[0], -C[1]])
    weights = np.zeros((horizon, 2))
    Qs = np.zeros((horizon, 2))
    cr = inst.ctr[0, :, 0] * inst.bid[0]
    for k in range(horizon):
        Qs[k] = Q
        weights[k] = cr * (gamma - Q)
        a = max_weight_assignment(revenue_weights(inst, policy, Q, 0))
        cu = click_stream.uniform(2)
        A = np.zeros(2)
        for i, s in a.pairs:
            A[i] += inst.bid[0, i] * (cu[: counts[k]] < inst.ctr[0, i, s]).sum()
        b = round_randomly(budget_stream.uniform(2), inst.budget)
        Q = update_underdraft(Q, A, b, C)
    return UnfairnessDemo(epsilon, weights, Qs, gamma, C)


def first_meeting_index(demo: UnfairnessDemo, tol: float = 0.01) -> int:
    """First cycle at which client 1's weight has come within ``tol`` of client 2's.

    Weights move in discrete jumps and may step across each other, so a
    crossing also counts. Returns -1 if it never happens within the horizon.
    """
    gap = demo.weights[:, 1] - demo.weights[:, 0]
    hit = np.nonzero(gap < tol)[0]
    return int(hit[0]) if hit.size else -1


def is_integral(x) -> bool:
    x = np.asarray(x, dtype=float)
    return bool(np.all(x == np.round(x)))


def decisions_equal(a: list, b: list) -> bool:
    return len(a) == len(b) and all(x == y for x, y in zip(a, b))

