"""Click-through-rate maximization with impression credit queues.

Each client owes ``m_i`` impressions per requirement cycle. The credit queue
``Q_i`` tracks the unserved backlog: ``Q_i <- [Q_i + m~_i - S_i]^+`` with
``S_i`` the impressions delivered in the cycle. A query for keyword ``q`` is
answered with the assignment maximizing ``sum M_is (c_qis / eps + Q_i)``.

The fast-update variant splits the cycle into ``T`` queueing cycles and
refreshes the queue (and hence the weights) after each of them.

Short-term client types receive a per-cycle credit ``(1 - alpha) l X``
where ``X`` clients of the type are active and ``alpha`` is chosen from the
current backlog.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .matching import max_weight_assignment
from .model import InstanceError, ProblemInstance, compute_D1, require_valid
from .offline import (InfeasibleError, OfflineSolution, capacity_vector, evaluate_ctr_rates,
                      max_min_slack, relaxed_ctr_optimum)
from .stochastic import NO_QUERY, CycleStreams, keywords_from_uniforms, round_randomly

POLICIES = ("mwm", "mwm-fast", "opt")


class DegenerateError(ValueError):
    """No relaxed-feasible point leaves every client a positive capacity slack."""


def ctr_weights(inst: ProblemInstance, Q, q: int, epsilon: float) -> np.ndarray:
    """Edge weights ``c / eps + Q_i`` for keyword ``q``; ``-inf`` marks ineligible pairs."""
    Q = np.asarray(Q, dtype=float)
    w = inst.ctr[q] / epsilon + Q[:, None]
    return np.where(inst.eligibility[q], w, -np.inf)


def ctr_decisions(inst: ProblemInstance, Q, epsilon: float) -> tuple:
    return tuple(max_weight_assignment(ctr_weights(inst, Q, q, epsilon))
                 for q in range(inst.num_keywords))


@dataclass
class ShortTermConfig:
    """Short-term client types occupying the trailing client indices.

    ``x_values``/``x_probs`` give the i.i.d. law of the number of active
    clients of each type per cycle (one row per type). ``power`` selects the
    unhappiness ``phi(a) = a^power / power``; ``power=2`` makes the target
    unfulfilled rate the backlog ratio clipped to [0, 1].
    """

    clients: np.ndarray
    term_requirement: np.ndarray
    x_values: np.ndarray
    x_probs: np.ndarray
    weight: np.ndarray
    power: float = 2.0

    def __post_init__(self):
        self.clients = np.asarray(self.clients, dtype=int)
        self.term_requirement = np.asarray(self.term_requirement, dtype=float)
        self.x_values = np.atleast_2d(np.asarray(self.x_values, dtype=float))
        self.x_probs = np.atleast_2d(np.asarray(self.x_probs, dtype=float))
        self.weight = np.asarray(self.weight, dtype=float)
        k = self.clients.size
        for name in ("term_requirement", "weight"):
            if getattr(self, name).shape != (k,):
                raise ValueError(f"{name} must have one entry per short-term type")
        if self.x_values.shape != self.x_probs.shape or self.x_values.shape[0] != k:
            raise ValueError("x_values and x_probs must have one row per short-term type")
        if np.any(np.abs(self.x_probs.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("each row of x_probs must sum to 1")
        if np.any(self.weight <= 0):
            raise ValueError("short-term weights must be positive")
        if self.power <= 1:
            raise ValueError("power must exceed 1 for a strictly convex unhappiness")

    @property
    def mean_population(self) -> np.ndarray:
        return (self.x_values * self.x_probs).sum(axis=1)

    def sample_population(self, u) -> np.ndarray:
        cdf = np.cumsum(self.x_probs, axis=1)
        idx = (np.asarray(u)[:, None] >= cdf).sum(axis=1)
        idx = np.minimum(idx, self.x_values.shape[1] - 1)
        return self.x_values[np.arange(self.clients.size), idx]


def short_term_alpha(l, X, Q, H, w, power: float = 2.0):
    """Target unfulfilled rate ``psi(l X Q / (H w))`` with ``psi`` the inverse of ``phi'``."""
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise ValueError("w must be positive")
    if H < 1:
        raise ValueError("H must be at least 1")
    x = np.asarray(l, dtype=float) * X * np.asarray(Q, dtype=float) / (H * w)
    x = np.maximum(x, 0.0)
    a = x if power == 2 else x ** (1.0 / (power - 1.0))
    a = np.minimum(a, 1.0)
    return float(a) if a.ndim == 0 else a


def short_term_credit_update(Q, alpha_star, l, X, S):
    return np.maximum(np.asarray(Q, dtype=float) + (1.0 - np.asarray(alpha_star)) * l * X - S, 0.0)


@dataclass
class HourlyRates:
    """Per-hour joint keyword rates ``rates[h, q]``; hour ``h`` covers ``N / H`` slots."""

    rates: np.ndarray

    def __post_init__(self):
        self.rates = np.atleast_2d(np.asarray(self.rates, dtype=float))
        if np.any(self.rates < 0) or np.any(self.rates.sum(axis=1) >= 1):
            raise ValueError("hourly rates must be nonnegative with total below 1 in every hour")

    @property
    def hours(self) -> int:
        return self.rates.shape[0]

    def keywords(self, u, cycle_slots: int) -> np.ndarray:
        H = self.hours
        if cycle_slots % H:
            raise ValueError(f"cycle_slots={cycle_slots} is not divisible by H={H}")
        per = cycle_slots // H
        out = np.empty(cycle_slots, dtype=np.int64)
        for h in range(H):
            out[h * per:(h + 1) * per] = keywords_from_uniforms(u[h * per:(h + 1) * per], self.rates[h])
        return out


@dataclass(frozen=True)
class CycleServiceOutcome:
    S: np.ndarray
    over: np.ndarray
    under: np.ndarray
    J: int
    Q_after: np.ndarray
    credit: np.ndarray
    alpha: Optional[np.ndarray] = None
    population: Optional[np.ndarray] = None


def serve_slots(inst: ProblemInstance, decisions, keywords, click_u):
    """Impressions per client and total clicks for a run of slots under fixed decisions."""
    S = np.zeros(inst.num_clients, dtype=np.int64)
    J = 0
    for q, a in enumerate(decisions):
        if a.is_empty:
            continue
        rows = keywords == q
        cnt = int(rows.sum())
        if cnt == 0:
            continue
        for i, s in a.pairs:
            S[i] += cnt
            J += int((click_u[rows, s] < inst.ctr[q, i, s]).sum())
    return S, J


def fast_queue_update(Q_hat, served) -> np.ndarray:
    """Queue after one queueing cycle: ``[Q_hat - served]^+``."""
    return np.maximum(np.asarray(Q_hat, dtype=float) - served, 0.0)


def _opt_tables(inst: ProblemInstance, support) -> list:
    tables = []
    for q in range(inst.num_keywords):
        items = sorted(support[q].items(), key=lambda kv: kv[0].pairs)
        tables.append(([a for a, _ in items], np.cumsum([p for _, p in items])))
    return tables


def _serve_opt(inst, tables, keywords, click_u, u_policy):
    S = np.zeros(inst.num_clients, dtype=np.int64)
    J = 0
    for t in np.nonzero(keywords != NO_QUERY)[0]:
        assigns, cdf = tables[keywords[t]]
        j = int(np.searchsorted(cdf, u_policy[t], side="right"))
        if j >= len(assigns):
            continue
        q = keywords[t]
        for i, s in assigns[j].pairs:
            S[i] += 1
            J += int(click_u[t, s] < inst.ctr[q, i, s])
    return S, J


class CtrSimulator:
    """Runs requirement cycles under one of the policies ``mwm``, ``mwm-fast`` or ``opt``.

    ``opt`` samples, per query, an assignment from a fixed offline
    distribution ``opt_support``; its queues are tracked but not used.
    """

    def __init__(self, inst: ProblemInstance, epsilon: float, policy: str = "mwm",
                 fast_T: Optional[int] = None, opt_support=None,
                 hourly: Optional[HourlyRates] = None, short_term: Optional[ShortTermConfig] = None):
        require_valid(inst, need="requirement")
        if policy not in POLICIES:
            raise ValueError(f"unknown policy {policy!r}; choose from {POLICIES}")
        if not epsilon > 0:
            raise ValueError("epsilon must be positive")
        self.inst = inst
        self.epsilon = float(epsilon)
        self.policy = policy
        self.fast_T = 1 if fast_T is None else int(fast_T)
        if policy == "mwm-fast" and fast_T is None:
            raise ValueError("mwm-fast needs the number of queueing cycles T")
        if self.fast_T < 1 or inst.cycle_slots % self.fast_T:
            raise ValueError(f"cycle_slots={inst.cycle_slots} is not divisible by T={self.fast_T}")
        if policy == "opt":
            if opt_support is None:
                raise ValueError("opt policy needs an offline support")
            self.tables = _opt_tables(inst, opt_support)
        self.hourly = hourly
        if hourly is not None and inst.cycle_slots % hourly.hours:
            raise ValueError(f"cycle_slots={inst.cycle_slots} is not divisible by H={hourly.hours}")
        self.short_term = short_term
        self.long_term = np.ones(inst.num_clients, dtype=bool)
        if short_term is not None:
            self.long_term[short_term.clients] = False

    def _keywords(self, u):
        if self.hourly is None:
            return keywords_from_uniforms(u, self.inst.keyword_rates)
        return self.hourly.keywords(u, self.inst.cycle_slots)

    def _credit(self, Q, streams: CycleStreams):
        inst = self.inst
        credit = round_randomly(streams.budgets.uniform(inst.num_clients), inst.requirement).astype(float)
        alpha = pop = None
        st = self.short_term
        if st is not None:
            pop = st.sample_population(streams.population.uniform(st.clients.size))
            H = self.hourly.hours if self.hourly is not None else 1
            alpha = np.atleast_1d(short_term_alpha(st.term_requirement, pop, Q[st.clients], H,
                                                   st.weight, st.power))
            credit[st.clients] = (1.0 - alpha) * st.term_requirement * pop
        return credit, alpha, pop

    def cycle(self, Q, streams: CycleStreams) -> CycleServiceOutcome:
        inst = self.inst
        N, L = inst.cycle_slots, inst.num_slots
        Q = np.asarray(Q, dtype=float)
        u, cu = streams.cycle_block(N, L)
        up = streams.policy.uniform(N)
        kw = self._keywords(u)
        credit, alpha, pop = self._credit(Q, streams)
        if self.policy == "opt":
            S, J = _serve_opt(inst, self.tables, kw, cu, up)
            Q_after = np.maximum(Q + credit - S, 0.0)
        elif self.policy == "mwm":
            S, J = serve_slots(inst, ctr_decisions(inst, Q, self.epsilon), kw, cu)
            Q_after = np.maximum(Q + credit - S, 0.0)
        else:
            per = N // self.fast_T
            Q_hat = Q + credit
            S = np.zeros(inst.num_clients, dtype=np.int64)
            J = 0
            for tau in range(self.fast_T):
                sl = slice(tau * per, (tau + 1) * per)
                s_tau, j_tau = serve_slots(inst, ctr_decisions(inst, Q_hat, self.epsilon), kw[sl], cu[sl])
                Q_hat = fast_queue_update(Q_hat, s_tau)
                S += s_tau
                J += j_tau
            Q_after = Q_hat
        over = np.maximum(S - credit, 0.0)
        under = np.maximum(credit - S, 0.0)
        return CycleServiceOutcome(S, over, under, J, Q_after, credit, alpha, pop)

    def run(self, cycles: int, seed: int, Q0=None) -> "CtrTrace":
        n = self.inst.num_clients
        streams = CycleStreams(seed)
        Q = np.zeros(n) if Q0 is None else np.array(Q0, dtype=float)
        k_st = 0 if self.short_term is None else self.short_term.clients.size
        tr = CtrTrace(S=np.zeros((cycles, n), dtype=np.int64), over=np.zeros((cycles, n)),
                      under=np.zeros((cycles, n)), credit=np.zeros((cycles, n)),
                      Q=np.zeros((cycles + 1, n)), J=np.zeros(cycles, dtype=np.int64),
                      alpha=np.zeros((cycles, k_st)), population=np.zeros((cycles, k_st)),
                      long_term=self.long_term.copy())
        tr.Q[0] = Q
        for k in range(cycles):
            out = self.cycle(Q, streams)
            tr.S[k], tr.over[k], tr.under[k], tr.credit[k], tr.J[k] = (
                out.S, out.over, out.under, out.credit, out.J)
            if k_st:
                tr.alpha[k], tr.population[k] = out.alpha, out.population
            Q = out.Q_after
            tr.Q[k + 1] = Q
        return tr


@dataclass
class CtrTrace:
    """Per-cycle record of a click-through run; ``Q[k]`` is the queue at the start of cycle ``k``."""

    S: np.ndarray
    over: np.ndarray
    under: np.ndarray
    credit: np.ndarray
    Q: np.ndarray
    J: np.ndarray
    alpha: np.ndarray
    population: np.ndarray
    long_term: np.ndarray = field(default=None)

    @property
    def cycles(self) -> int:
        return self.S.shape[0]

    def total_queue(self) -> np.ndarray:
        """Sum of queues at the end of each cycle."""
        return self.Q[1:].sum(axis=1)

    def normalized_over(self, requirement) -> np.ndarray:
        m = np.asarray(requirement, dtype=float)[self.long_term]
        return self.over[:, self.long_term].sum(axis=1) / m.sum()

    def normalized_under(self, requirement) -> np.ndarray:
        m = np.asarray(requirement, dtype=float)[self.long_term]
        return self.under[:, self.long_term].sum(axis=1) / m.sum()


def simulate_ctr(inst: ProblemInstance, epsilon: float, cycles: int, seed: int, policy: str = "mwm",
                 **kwargs) -> CtrTrace:
    return CtrSimulator(inst, epsilon, policy, **kwargs).run(cycles, seed)


def run_requirement_cycle(inst: ProblemInstance, Q, epsilon: float, streams: CycleStreams,
                          fast_T: Optional[int] = None, hourly: Optional[HourlyRates] = None):
    """One requirement cycle under max-weight matching, with optional fast updates."""
    policy = "mwm" if fast_T is None else "mwm-fast"
    return CtrSimulator(inst, epsilon, policy, fast_T=fast_T, hourly=hourly).cycle(Q, streams)


@dataclass
class CustomizedRequirement:
    requirement: np.ndarray
    xi: float
    support: list
    capacity: np.ndarray
    slack: np.ndarray
    D1: float
    D3: float
    fw_gap: float


def _line_search(x, d, xi, lo_margin, gmax):
    """Step in [0, gmax] maximizing sum log(x + g d - xi) with x + g d - xi >= lo_margin."""
    neg = d < 0
    if np.any(neg):
        gmax = min(gmax, float(np.min((x[neg] - xi - lo_margin) / -d[neg])))
    gmax = max(gmax, 0.0)

    def slope(g):
        return float(np.sum(d / (x + g * d - xi)))

    if gmax == 0.0 or slope(gmax) >= 0:
        return gmax
    lo, hi = 0.0, gmax
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if slope(mid) > 0:
            lo = mid
        else:
            hi = mid
    return lo


def _maximize_log_slack(inst: ProblemInstance, xi: float, floor: float, iterations: int,
                        gap_tol: float, warm=None):
    """Away-step Frank-Wolfe for max sum log(capacity_i - xi) over the capacity polytope.

    Vertices are joint choices of one assignment per keyword; the active set
    maps each vertex to its convex weight.
    """
    if warm is not None and np.min(warm[0] - xi) > floor:
        active = dict(warm[1])
    else:
        start = max_min_slack(inst, np.full(inst.num_clients, xi + floor))
        if start.upper <= 0 or start.value <= 0:
            raise InfeasibleError(
                f"xi={xi:.6g} is too large: no relaxed-feasible point leaves every client "
                f"at least {floor:.3g} impressions beyond xi (best margin {start.upper:.6g})")
        active = _vertices_from_support(start.support)
    verts = {v: capacity_vector(inst, v) for v in active}
    x = sum(w * verts[v] for v, w in active.items())
    elig = inst.eligibility
    gap = math.inf
    for _ in range(iterations):
        g = 1.0 / (x - xi)
        fw = tuple(max_weight_assignment(np.broadcast_to(g[:, None], elig[q].shape), elig[q])
                   for q in range(inst.num_keywords))
        if fw not in verts:
            verts[fw] = capacity_vector(inst, fw)
        d_fw = verts[fw] - x
        gap = float(g @ d_fw)
        if gap <= gap_tol:
            break
        away = min(active, key=lambda v: float(g @ verts[v]))
        d_away = x - verts[away]
        if len(active) > 1 and float(g @ d_away) > gap:
            w_away = active[away]
            gamma = _line_search(x, d_away, xi, floor, w_away / (1.0 - w_away))
            if gamma <= 0:
                break
            for v in active:
                active[v] *= 1.0 + gamma
            active[away] -= gamma
            if active[away] <= 1e-14:
                del active[away]
            x = x + gamma * d_away
        else:
            gamma = _line_search(x, d_fw, xi, floor, 1.0)
            if gamma <= 0:
                break
            for v in active:
                active[v] *= 1.0 - gamma
            active[fw] = active.get(fw, 0.0) + gamma
            active = {v: w for v, w in active.items() if w > 1e-14}
            x = x + gamma * d_fw
    support = [dict() for _ in range(inst.num_keywords)]
    for v, w in active.items():
        for q, a in enumerate(v):
            if not a.is_empty:
                support[q][a] = support[q].get(a, 0.0) + w
    cap, _ = evaluate_ctr_rates(inst, support)
    return cap, support, gap, active


def _vertices_from_support(support) -> dict:
    """Split per-keyword distributions into a convex combination of joint choices."""
    from .matching import EMPTY

    rows = []
    for dist in support:
        items = sorted(dist.items(), key=lambda kv: kv[0].pairs)
        rest = 1.0 - sum(p for _, p in items)
        if rest > 1e-15:
            items.append((EMPTY, rest))
        rows.append(items)
    # north-west corner rule over the cumulative masses
    cuts = sorted({0.0, 1.0} | {float(c) for row in rows for c in np.cumsum([p for _, p in row])[:-1]})
    active = {}
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi - lo <= 1e-15:
            continue
        mid = 0.5 * (lo + hi)
        v = []
        for row in rows:
            cum = np.cumsum([p for _, p in row])
            j = min(int(np.searchsorted(cum, mid, side="right")), len(row) - 1)
            v.append(row[j][0])
        v = tuple(v)
        active[v] = active.get(v, 0.0) + (hi - lo)
    return active


def customize_requirements(inst: ProblemInstance, q_max: float, epsilon: float,
                           floor: Optional[float] = None, iterations: int = 20000,
                           gap_tol: float = 1e-8) -> CustomizedRequirement:
    """Impression requirements that keep the queue bound below ``q_max``.

    The required slack is ``xi = (D1 + D3 / eps) / q_max``; the requirements
    maximize ``sum_i log m_i`` subject to ``capacity_i(p) - m_i >= xi``,
    which after eliminating ``m_i = capacity_i(p) - xi`` is solved by
    away-step Frank-Wolfe over the capacity polytope. ``D1`` depends on ``m``, so
    ``xi`` is iterated to a fixed point. Every ``m_i`` is kept at least
    ``floor`` (default ``1e-6 N``).
    """
    if q_max <= 0:
        raise ValueError("q_max must be positive")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    N, L = inst.cycle_slots, inst.num_slots
    floor = 1e-6 * N if floor is None else float(floor)
    relaxed = relaxed_ctr_optimum(inst)
    D3 = N * relaxed.objective
    m = np.zeros(inst.num_clients)
    xi = None
    warm = None
    for _ in range(50):
        D1 = compute_D1(N, L, m)
        new_xi = (D1 + D3 / epsilon) / q_max
        if xi is not None and abs(new_xi - xi) <= 1e-9 * max(1.0, xi):
            break
        xi = new_xi
        cap, support, gap, active = _maximize_log_slack(inst, xi, floor, iterations, gap_tol, warm)
        warm = (cap, active)
        m = np.maximum(cap - xi, floor)
    slack = cap - m
    return CustomizedRequirement(m, xi, support, cap, slack, compute_D1(N, L, m), D3, gap)


@dataclass(frozen=True)
class CreditQueueBound:
    D1: float
    D2: float
    D3: float
    bound: float


def queue_length_bound(D1: float, D3: float, D2: float, epsilon: float) -> float:
    """``(D1 + D3 / eps) / D2``."""
    if D2 <= 0:
        raise DegenerateError(f"capacity slack D2={D2} is not positive")
    return (D1 + D3 / epsilon) / D2


def credit_queue_bound(inst: ProblemInstance, epsilon: float, offline: Optional[OfflineSolution] = None,
                   requirement=None, iterations: int = 4000) -> CreditQueueBound:
    """Upper bound on the long-run mean of the total credit queue.

    ``D2`` is the largest achievable minimum capacity slack
    ``max_p min_i (capacity_i(p) - m_i)``; ``offline`` is the relaxed
    click-maximizing solution giving ``D3`` (computed when omitted).
    """
    m = inst.requirement if requirement is None else np.asarray(requirement, dtype=float)
    if m is None:
        raise InstanceError(["requirement is required for the queue bound"])
    if offline is None:
        offline = relaxed_ctr_optimum(inst)
    _, clicks = evaluate_ctr_rates(inst, offline.support)
    D3 = inst.cycle_slots * clicks
    D1 = compute_D1(inst.cycle_slots, inst.num_slots, m)
    res = max_min_slack(inst, m, iterations)
    if res.upper <= 0 or res.value <= 0:
        raise DegenerateError(
            f"no relaxed-feasible point gives every client positive slack "
            f"(best slack found {res.value:.6g}, dual bound {res.upper:.6g})")
    return CreditQueueBound(D1, res.value, D3, queue_length_bound(D1, D3, res.value, epsilon))
