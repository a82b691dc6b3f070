"""Offline benchmark: the long-term average linear program and its dual.

The offline problem picks, for each keyword, a sub-distribution over
assignments so as to maximize the expected revenue per slot while the
expected payment of each client over a cycle stays within its budget.
It is solved by projected dual subgradient steps whose inner maximization is
one max-weight assignment per keyword, with primal averaging over the tail
of the run.

The same machinery, with other edge coefficients, gives the click-through
model's offline optimum and the max-min capacity slack.
"""

from __future__ import annotations

import itertools
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .matching import EMPTY, Assignment, all_assignments, max_weight_assignment
from .model import InstanceError, ProblemInstance

SIMPLEX_TOL = 1e-9


class ConvergenceWarning(UserWarning):
    """The iteration budget ran out before the feasibility residual met the tolerance."""


class InfeasibleError(ValueError):
    pass


@dataclass
class OfflineSolution:
    """Averaged primal, final duals and the derived rates.

    ``support[q]`` maps each assignment used for keyword ``q`` to its
    probability; the remaining mass posts nothing. ``rates[i]`` is the
    expected per-cycle constraint quantity of client ``i`` (payment for the
    revenue problem, impressions for the click-through problem).
    """

    support: list
    duals: np.ndarray
    objective: float
    rates: np.ndarray
    residual: float = 0.0
    iterations: int = 0
    converged: bool = True
    diagnostic: str = ""
    history: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def R_star(self) -> float:
        return self.objective

    @property
    def lam(self) -> np.ndarray:
        return self.rates

    def to_dict(self, inst: Optional[ProblemInstance] = None) -> dict:
        support = []
        for q, dist in enumerate(self.support):
            rows = []
            for a, p in sorted(dist.items(), key=lambda kv: kv[0].pairs):
                rows.append({"pairs": [list(x) for x in a.pairs], "prob": p})
            support.append(rows)
        return {
            "objective": self.objective,
            "duals": self.duals.tolist(),
            "rates": self.rates.tolist(),
            "residual": self.residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "diagnostic": self.diagnostic,
            "support": support,
        }


def _check_support(inst: ProblemInstance, support) -> None:
    if len(support) != inst.num_keywords:
        raise ValueError(f"support must list {inst.num_keywords} keywords, got {len(support)}")
    for q, dist in enumerate(support):
        total = 0.0
        for a, p in dist.items():
            if not (-SIMPLEX_TOL <= p <= 1 + SIMPLEX_TOL):
                raise ValueError(f"probability {p} for keyword {q} lies outside [0,1]")
            for i, s in a.pairs:
                if not inst.eligibility[q, i, s]:
                    raise ValueError(f"assignment for keyword {q} uses ineligible pair ({i}, {s})")
            total += p
        if total > 1 + SIMPLEX_TOL:
            raise ValueError(f"probabilities for keyword {q} sum to {total} > 1")


def _per_client(inst: ProblemInstance, support, coeff: np.ndarray) -> np.ndarray:
    """``N sum_q nu_q sum_M p_qM sum_s M_is coeff[q,i,s]`` for every client."""
    out = np.zeros(inst.num_clients)
    rates = inst.keyword_rates
    for q, dist in enumerate(support):
        for a, p in dist.items():
            for i, s in a.pairs:
                out[i] += rates[q] * p * coeff[q, i, s]
    return inst.cycle_slots * out


def evaluate_rate_vector(inst: ProblemInstance, support):
    """Exact per-client payment per cycle and revenue per slot of a primal point."""
    _check_support(inst, support)
    lam = _per_client(inst, support, inst.pair_revenue)
    return lam, float(lam.sum() / inst.cycle_slots)


def evaluate_ctr_rates(inst: ProblemInstance, support):
    """Exact impressions per cycle for each client and expected clicks per slot."""
    _check_support(inst, support)
    imp = _per_client(inst, support, inst.eligibility.astype(float))
    clicks = _per_client(inst, support, inst.effective_ctr)
    return imp, float(clicks.sum() / inst.cycle_slots)


class _DualProblem:
    """max sum_q nu_q E[obj(M)]  s.t.  N sum_q nu_q E[con_i(M)] <= rhs_i.

    ``obj`` and ``con`` are per-edge coefficients of shape (keywords,
    clients, slots). The inner maximization at duals ``delta`` uses edge
    weights ``obj - delta_i * con``.
    """

    def __init__(self, inst: ProblemInstance, obj, con, rhs):
        self.inst = inst
        self.obj = np.asarray(obj, dtype=float)
        self.con = np.asarray(con, dtype=float)
        self.rhs = np.asarray(rhs, dtype=float)
        self.rates = inst.keyword_rates
        self.N = inst.cycle_slots

    def maximizers(self, delta) -> list:
        out = []
        for q in range(self.inst.num_keywords):
            w = self.obj[q] - delta[:, None] * self.con[q]
            out.append(max_weight_assignment(w, self.inst.eligibility[q]))
        return out

    def usage(self, choice) -> np.ndarray:
        g = np.zeros(self.inst.num_clients)
        for q, a in enumerate(choice):
            for i, s in a.pairs:
                g[i] += self.rates[q] * self.con[q, i, s]
        return self.N * g

    def subgradient(self, choice) -> np.ndarray:
        return self.usage(choice) - self.rhs

    def objective(self, choice) -> float:
        v = 0.0
        for q, a in enumerate(choice):
            for i, s in a.pairs:
                v += self.rates[q] * self.obj[q, i, s]
        return v

    def dual_value(self, delta) -> float:
        delta = np.asarray(delta, dtype=float)
        choice = self.maximizers(delta)
        lag = 0.0
        for q, a in enumerate(choice):
            w = self.obj[q] - delta[:, None] * self.con[q]
            lag += self.rates[q] * a.value(w)
        return lag + float(delta @ self.rhs) / self.N

    def scale(self) -> float:
        """Bound on the magnitude of a subgradient entry."""
        reach = self.N * (self.rates[:, None] * np.abs(self.con).max(axis=2, initial=0.0)).sum(axis=0)
        return float(max(reach.max(initial=0.0), np.abs(self.rhs).max(initial=0.0), 1e-12))

    def solve(self, step=None, iterations=100_000, tol=1e-4, average_from=0.5,
              delta0=None, record_every=0):
        if iterations < 1:
            raise ValueError("iterations must be at least 1")
        n = self.inst.num_clients
        if step is None:
            step = 1.0 / (self.scale() * iterations ** 0.25)
        if step <= 0:
            raise ValueError("step must be positive")
        delta = np.zeros(n) if delta0 is None else np.array(delta0, dtype=float)
        start = min(int(iterations * average_from), iterations - 1)
        counts = [Counter() for _ in range(self.inst.num_keywords)]
        history = []
        for k in range(iterations):
            choice = self.maximizers(delta)
            if k >= start:
                for q, a in enumerate(choice):
                    counts[q][a] += 1
            if record_every and k % record_every == 0:
                history.append(self.objective(choice))
            delta = np.maximum(delta + step * self.subgradient(choice), 0.0)
        total = iterations - start
        support = [{a: c / total for a, c in cnt.items() if not a.is_empty} for cnt in counts]
        usage = _per_client(self.inst, support, self.con)
        objective = sum(self.rates[q] * p * sum(self.obj[q, i, s] for i, s in a.pairs)
                        for q, dist in enumerate(support) for a, p in dist.items())
        residual = float(np.maximum(usage - self.rhs, 0.0).max(initial=0.0))
        converged = residual <= tol
        diagnostic = ""
        if not converged:
            diagnostic = (f"feasibility residual {residual:.3g} exceeds tolerance {tol:g} "
                          f"after {iterations} iterations")
            warnings.warn(diagnostic, ConvergenceWarning, stacklevel=3)
        return OfflineSolution(support=support, duals=delta, objective=float(objective),
                               rates=usage, residual=residual, iterations=iterations,
                               converged=converged, diagnostic=diagnostic,
                               history=np.array(history) if record_every else None)


def _revenue_problem(inst: ProblemInstance) -> _DualProblem:
    if inst.budget is None:
        raise InstanceError(["budget is required for the offline revenue problem"])
    cr = inst.pair_revenue
    return _DualProblem(inst, cr, cr, inst.budget)


def dual_gradient_step(inst: ProblemInstance, delta, step: float):
    """One projected dual subgradient step.

    Returns the new duals and, per keyword, the assignment maximizing
    ``sum M c r (1 - delta_i)``.
    """
    prob = _revenue_problem(inst)
    delta = np.asarray(delta, dtype=float)
    choice = prob.maximizers(delta)
    return np.maximum(delta + step * prob.subgradient(choice), 0.0), choice


def solve_offline(inst: ProblemInstance, step: Optional[float] = None, iterations: int = 100_000,
                  tol: float = 1e-4, average_from: float = 0.5, record_every: int = 0) -> OfflineSolution:
    """Offline optimal revenue per slot by dual subgradient with primal averaging.

    ``step=None`` picks ``1 / (G iterations^(1/4))`` where ``G`` bounds the
    subgradient entries; optimal duals of this problem lie in [0, 1]. The primal average is taken over iterations from
    ``average_from * iterations`` onwards. A :class:`ConvergenceWarning`
    is issued when the budget residual ``max_i [lambda_i - b_i]^+`` is above
    ``tol`` at the end.
    """
    return _revenue_problem(inst).solve(step, iterations, tol, average_from,
                                        record_every=record_every)


def dual_function(inst: ProblemInstance, delta) -> float:
    """Lagrangian dual of the revenue problem; an upper bound on its optimum for delta >= 0."""
    return _revenue_problem(inst).dual_value(delta)


def compute_B2(inst: ProblemInstance, offline: OfflineSolution) -> float:
    """Smallest budget slack ``min_i (b_i - lambda_i)`` of an offline solution."""
    if inst.budget is None:
        raise InstanceError(["budget is required to compute B2"])
    lam, _ = evaluate_rate_vector(inst, offline.support)
    return float(np.min(inst.budget - lam))


@dataclass(frozen=True)
class BruteForceResult:
    R_star: float
    grid_gap: float
    support: list


def _candidates(inst: ProblemInstance, q: int) -> list:
    elig = inst.eligibility[q] & (inst.pair_revenue[q] > 0)
    return [a for a in all_assignments(elig) if not a.is_empty]


def _grid(k: int, steps: int) -> np.ndarray:
    pts = [c for c in itertools.product(range(steps + 1), repeat=k) if sum(c) <= steps]
    return np.array(pts, dtype=float).reshape(len(pts), k) / steps


def brute_force_offline(inst: ProblemInstance, resolution: float = 0.05) -> BruteForceResult:
    """Grid search over per-keyword distributions for tiny revenue instances.

    Candidates for keyword ``q`` are the nonempty assignments built from
    eligible pairs with positive expected payment. Rounding an optimal point
    down onto the grid keeps it feasible, so the true optimum lies within
    ``grid_gap`` above the returned value.
    """
    if inst.budget is None:
        raise InstanceError(["budget is required for the offline revenue problem"])
    if inst.num_keywords > 2:
        raise ValueError("brute force limited to 2 keywords")
    steps = int(round(1.0 / resolution))
    if steps < 1 or abs(steps * resolution - 1.0) > 1e-9:
        raise ValueError("resolution must be 1/k for a positive integer k")
    cr = inst.pair_revenue
    rates = inst.keyword_rates
    N = inst.cycle_slots
    cands, values, usages, grids = [], [], [], []
    gap = 0.0
    for q in range(inst.num_keywords):
        c = _candidates(inst, q)
        if len(c) > 3:
            raise ValueError(f"brute force limited to 3 candidate assignments per keyword "
                             f"(keyword {q} has {len(c)})")
        vals = np.array([sum(cr[q, i, s] for i, s in a.pairs) for a in c])
        use = np.zeros((len(c), inst.num_clients))
        for j, a in enumerate(c):
            for i, s in a.pairs:
                use[j, i] = N * rates[q] * cr[q, i, s]
        g = _grid(len(c), steps)
        cands.append(c)
        grids.append(g)
        values.append(g @ (rates[q] * vals) if len(c) else np.zeros(len(g)))
        usages.append(g @ use if len(c) else np.zeros((len(g), inst.num_clients)))
        gap += resolution * rates[q] * vals.sum()
    b = inst.budget + 1e-12
    if len(grids) == 1:
        ok = np.all(usages[0] <= b, axis=1)
        v = np.where(ok, values[0], -np.inf)
        idx = (int(np.argmax(v)),)
        best = float(v[idx[0]])
    else:
        best, idx = -np.inf, (0, 0)
        chunk = max(1, 2_000_000 // max(1, len(grids[1]) * inst.num_clients))
        for lo in range(0, len(grids[0]), chunk):
            u = usages[0][lo:lo + chunk, None, :] + usages[1][None, :, :]
            ok = np.all(u <= b, axis=2)
            v = np.where(ok, values[0][lo:lo + chunk, None] + values[1][None, :], -np.inf)
            j = int(np.argmax(v))
            if v.flat[j] > best:
                best = float(v.flat[j])
                idx = (lo + j // v.shape[1], j % v.shape[1])
    support = []
    for q, j in enumerate(idx):
        support.append({a: float(grids[q][j, t]) for t, a in enumerate(cands[q]) if grids[q][j, t] > 0})
    return BruteForceResult(R_star=best, grid_gap=float(gap), support=support)


def relaxed_ctr_optimum(inst: ProblemInstance) -> OfflineSolution:
    """Click maximization without requirement constraints: best assignment per keyword."""
    support = []
    for q in range(inst.num_keywords):
        a = max_weight_assignment(inst.effective_ctr[q], inst.eligibility[q] & (inst.ctr[q] > 0))
        support.append({} if a.is_empty else {a: 1.0})
    imp, clicks = evaluate_ctr_rates(inst, support)
    return OfflineSolution(support=support, duals=np.zeros(inst.num_clients),
                           objective=clicks, rates=imp, iterations=0)


def _ctr_problem(inst: ProblemInstance, requirement) -> _DualProblem:
    m = np.asarray(inst.requirement if requirement is None else requirement, dtype=float)
    elig = inst.eligibility.astype(float)
    return _DualProblem(inst, inst.effective_ctr, -elig, -m)


def solve_offline_ctr(inst: ProblemInstance, requirement=None, step=None,
                      iterations: int = 20_000, tol: float = 1e-3) -> OfflineSolution:
    """Click maximization subject to delivering ``requirement`` impressions per cycle."""
    if requirement is None and inst.requirement is None:
        raise InstanceError(["requirement is required for the offline CTR problem"])
    sol = _ctr_problem(inst, requirement).solve(step, iterations, tol)
    sol.rates = -sol.rates
    return sol


def capacity_vector(inst: ProblemInstance, choice) -> np.ndarray:
    """Impressions per cycle for each client when keyword ``q`` always uses ``choice[q]``."""
    out = np.zeros(inst.num_clients)
    rates = inst.keyword_rates
    for q, a in enumerate(choice):
        for i, _ in a.pairs:
            out[i] += rates[q]
    return inst.cycle_slots * out


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1), 0.0)


@dataclass
class MaxMinResult:
    value: float
    upper: float
    support: list
    capacity: np.ndarray


def max_min_slack(inst: ProblemInstance, requirement, iterations: int = 4000) -> MaxMinResult:
    """Largest achievable ``min_i (capacity_i(p) - m_i)`` over relaxed-feasible ``p``.

    Solved through the dual over client weights on the simplex with
    step-weighted primal averaging. ``value`` is attained by the returned
    primal point; ``upper`` is the best dual bound seen.
    """
    m = np.asarray(requirement, dtype=float)
    n = inst.num_clients
    elig = inst.eligibility
    mu = np.full(n, 1.0 / n)
    scale = float(inst.cycle_slots) or 1.0
    counts = [Counter() for _ in range(inst.num_keywords)]
    wsum = 0.0
    upper = math.inf
    for k in range(iterations):
        choice = [max_weight_assignment(np.broadcast_to(mu[:, None], elig[q].shape), elig[q])
                  for q in range(inst.num_keywords)]
        g = (capacity_vector(inst, choice) - m) / scale
        upper = min(upper, float(mu @ g) * scale)
        step = 1.0 / math.sqrt(k + 1)
        if k >= iterations // 4:
            for q, a in enumerate(choice):
                counts[q][a] += step
            wsum += step
        mu = project_simplex(mu - step * g)
    support = [{a: c / wsum for a, c in cnt.items() if not a.is_empty} for cnt in counts]
    cap, _ = evaluate_ctr_rates(inst, support)
    return MaxMinResult(float(np.min(cap - m)), upper, support, cap)
