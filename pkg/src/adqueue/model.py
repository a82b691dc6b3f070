"""Problem instances for online ad assignment and their closed-form constants.

An instance describes keywords ``q``, clients ``i`` and webpage slots ``s``
together with click-through rates ``ctr[q, i, s]``, per-click bids
``bid[q, i]``, per-cycle budgets (revenue model) or impression requirements
(click-through model), and the Bernoulli query-arrival process.

Allowed assignments for keyword ``q`` are the one-to-one client/slot
matchings that only use pairs with ``eligibility[q, i, s]`` set.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

KEYWORD_PROB_TOL = 1e-12


class InstanceError(ValueError):
    """Raised when an instance fails validation where a valid one is required."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("invalid instance: " + "; ".join(self.violations))


class NonIntegerBidWarning(UserWarning):
    """Bids are not integers, so queues are no longer integer valued."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """Immutable description of one ad-assignment problem.

    Attributes:
        ctr: click-through rates, shape (keywords, clients, slots).
        bid: payment per click, shape (keywords, clients).
        arrival_prob: probability that a query arrives in a time slot.
        keyword_prob: distribution of the queried keyword given an arrival.
        cycle_slots: number of time slots ``N`` in a budgeting/requirement cycle.
        budget: average budget per cycle for each client (revenue model).
        requirement: average impression requirement per cycle (CTR model).
        eligibility: boolean mask of allowed (keyword, client, slot) pairs;
            defaults to all pairs allowed.
    """

    ctr: np.ndarray
    bid: np.ndarray
    arrival_prob: float
    keyword_prob: np.ndarray
    cycle_slots: int
    budget: Optional[np.ndarray] = None
    requirement: Optional[np.ndarray] = None
    eligibility: Optional[np.ndarray] = None
    keyword_names: Optional[tuple] = None
    client_names: Optional[tuple] = None
    slot_names: Optional[tuple] = None
    name: str = field(default="")

    def __post_init__(self):
        ctr = np.asarray(self.ctr, dtype=float)
        if ctr.ndim != 3:
            raise ValueError(f"ctr must have shape (keywords, clients, slots), got {ctr.shape}")
        nq, n, nl = ctr.shape
        bid = np.asarray(self.bid, dtype=float)
        if bid.shape != (nq, n):
            raise ValueError(f"bid must have shape {(nq, n)}, got {bid.shape}")
        kp = np.asarray(self.keyword_prob, dtype=float).reshape(-1)
        if kp.shape != (nq,):
            raise ValueError(f"keyword_prob must have length {nq}, got {kp.shape[0]}")
        if self.eligibility is None:
            elig = np.ones((nq, n, nl), dtype=bool)
        else:
            elig = np.asarray(self.eligibility, dtype=bool)
            if elig.shape != ctr.shape:
                raise ValueError(f"eligibility must have shape {ctr.shape}, got {elig.shape}")
        object.__setattr__(self, "ctr", _frozen(ctr))
        object.__setattr__(self, "bid", _frozen(bid))
        object.__setattr__(self, "keyword_prob", _frozen(kp))
        object.__setattr__(self, "eligibility", _frozen(elig))
        object.__setattr__(self, "arrival_prob", float(self.arrival_prob))
        if int(self.cycle_slots) != self.cycle_slots:
            raise ValueError(f"cycle_slots must be an integer, got {self.cycle_slots}")
        object.__setattr__(self, "cycle_slots", int(self.cycle_slots))
        for key in ("budget", "requirement"):
            value = getattr(self, key)
            if value is not None:
                arr = np.asarray(value, dtype=float).reshape(-1)
                if arr.shape != (n,):
                    raise ValueError(f"{key} must have length {n}, got {arr.shape[0]}")
                object.__setattr__(self, key, _frozen(arr))
        for key, size in (("keyword_names", nq), ("client_names", n), ("slot_names", nl)):
            names = getattr(self, key)
            if names is not None:
                names = tuple(str(x) for x in names)
                if len(names) != size:
                    raise ValueError(f"{key} must have {size} entries")
                object.__setattr__(self, key, names)
        if np.any(np.isfinite(bid) & (bid != np.round(bid))):
            warnings.warn(
                "non-integer bids: queue lengths will not be integer valued",
                NonIntegerBidWarning,
                stacklevel=3,
            )

    @property
    def num_keywords(self) -> int:
        return self.ctr.shape[0]

    @property
    def num_clients(self) -> int:
        return self.ctr.shape[1]

    @property
    def num_slots(self) -> int:
        return self.ctr.shape[2]

    @property
    def keyword_rates(self) -> np.ndarray:
        """Per-slot probability ``nu * theta_q`` that keyword ``q`` is queried."""
        return self.arrival_prob * self.keyword_prob

    @property
    def effective_ctr(self) -> np.ndarray:
        """Click-through rates with ineligible pairs zeroed."""
        return np.where(self.eligibility, self.ctr, 0.0)

    @property
    def pair_revenue(self) -> np.ndarray:
        """Expected payment ``c * r`` of each eligible (keyword, client, slot) pair."""
        return self.effective_ctr * self.bid[:, :, None]

    def client_label(self, i: int) -> str:
        return self.client_names[i] if self.client_names else f"c{i}"

    def with_requirement(self, requirement) -> "ProblemInstance":
        return replace(self, requirement=np.asarray(requirement, dtype=float))

    def with_budget(self, budget) -> "ProblemInstance":
        return replace(self, budget=np.asarray(budget, dtype=float))

    def with_ctr(self, ctr) -> "ProblemInstance":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NonIntegerBidWarning)
            return replace(self, ctr=np.asarray(ctr, dtype=float))


def validate_instance(inst: ProblemInstance) -> list[str]:
    """Check the value-level invariants of an instance.

    Returns a list of human-readable violations, empty when the instance is
    valid. Nothing is raised and the instance is not modified.
    """
    out: list[str] = []
    if not (0.0 < inst.arrival_prob < 1.0):
        out.append(f"arrival_prob must lie strictly in (0,1) (got {inst.arrival_prob})")
    for idx in zip(*np.nonzero(~np.isfinite(inst.ctr) | (inst.ctr < 0) | (inst.ctr > 1))):
        q, i, s = (int(x) for x in idx)
        out.append(f"ctr[{q}][{i}][{s}] must lie in [0,1] (got {inst.ctr[q, i, s]})")
    kp = inst.keyword_prob
    for q in np.nonzero(~np.isfinite(kp) | (kp < 0) | (kp > 1))[0]:
        out.append(f"keyword_prob[{q}] must lie in [0,1] (got {kp[q]})")
    if np.all(np.isfinite(kp)) and abs(kp.sum() - 1.0) > KEYWORD_PROB_TOL:
        out.append(f"keyword_prob must sum to 1 (got {kp.sum()!r})")
    for q, i in zip(*np.nonzero(~np.isfinite(inst.bid) | (inst.bid < 0))):
        out.append(f"bid[{q}][{i}] must be nonnegative (got {inst.bid[q, i]})")
    for key in ("budget", "requirement"):
        arr = getattr(inst, key)
        if arr is None:
            continue
        for i in np.nonzero(~np.isfinite(arr) | (arr < 0))[0]:
            out.append(f"{key}[{i}] must be nonnegative (got {arr[i]})")
    if inst.cycle_slots < 1:
        out.append(f"cycle_slots must be a positive integer (got {inst.cycle_slots})")
    if not inst.eligibility.any():
        out.append("eligibility mask is empty: no (keyword, client, slot) pair is allowed")
    return out


def require_valid(inst: ProblemInstance, *, need: Optional[str] = None) -> None:
    """Raise :class:`InstanceError` unless the instance is valid.

    ``need`` may be ``"budget"`` or ``"requirement"`` to also require that field.
    """
    violations = validate_instance(inst)
    if need is not None and getattr(inst, need) is None:
        violations.append(f"{need} is required for this model")
    if violations:
        raise InstanceError(violations)


def randomized_integer_second_moment(x) -> np.ndarray:
    """``E[x~^2]`` for x~ equal to ceil(x) w.p. frac(x) and floor(x) otherwise."""
    x = np.asarray(x, dtype=float)
    lo = np.floor(x)
    hi = np.ceil(x)
    return hi**2 * (x - lo) + lo**2 * (1.0 - x + lo)


def max_pair_revenue(inst: ProblemInstance) -> np.ndarray:
    """Per-client ``max_{q,s} r_{qi} c_{qis}`` over eligible pairs."""
    return inst.pair_revenue.max(axis=(0, 2))


def max_click_payment(inst: ProblemInstance) -> np.ndarray:
    """Per-client largest payment a single click can generate."""
    payable = inst.eligibility & (inst.ctr > 0)
    pay = np.where(payable, inst.bid[:, :, None], 0.0)
    return pay.max(axis=(0, 2))


@dataclass(frozen=True)
class LargeNReport:
    passed: bool
    thresholds: np.ndarray
    required: float
    unreachable: list
    messages: list


def check_large_N(inst: ProblemInstance) -> LargeNReport:
    """Check that the cycle is long enough for every budget to be reachable.

    For each client the threshold is ``b_i / sum_q nu_q r_qi max_s c_qis``;
    the check passes when ``N`` is at least the largest threshold. A client
    with positive budget and no click-generating eligible pair is reported as
    unreachable.
    """
    if inst.budget is None:
        raise InstanceError(["budget is required for the large-N check"])
    best_ctr = inst.effective_ctr.max(axis=2)  # (Q, n)
    denom = (inst.keyword_rates[:, None] * inst.bid * best_ctr).sum(axis=0)
    thresholds = np.zeros(inst.num_clients)
    unreachable = []
    messages = []
    for i in range(inst.num_clients):
        b = inst.budget[i]
        if denom[i] > 0:
            thresholds[i] = b / denom[i]
        elif b > 0:
            thresholds[i] = math.inf
            unreachable.append(i)
            messages.append(f"client unreachable: {inst.client_label(i)} has budget {b} "
                            "but no eligible pair can generate revenue")
    required = float(thresholds.max()) if thresholds.size else 0.0
    passed = not unreachable and inst.cycle_slots >= required
    if not passed and not unreachable:
        messages.append(f"cycle_slots={inst.cycle_slots} is below the required {required:.6g}")
    return LargeNReport(passed, thresholds, required, unreachable, messages)


def compute_B1(inst: ProblemInstance) -> float:
    """Drift constant of the revenue algorithm.

    ``(N(N-1)L^2 + NL) * (max c r)^2`` bounds the second moment of the total
    per-cycle charge, and the budget term is ``sum_i E[b~_i^2]``.
    """
    if inst.budget is None:
        raise InstanceError(["budget is required to compute B1"])
    N, L = inst.cycle_slots, inst.num_slots
    cr_max = float(inst.pair_revenue.max(initial=0.0))
    budget_term = float(randomized_integer_second_moment(inst.budget).sum())
    return 0.5 * ((N * (N - 1) * L**2 + N * L) * cr_max**2 + budget_term)


def compute_D1(cycle_slots: int, num_slots: int, requirement) -> float:
    N, L = cycle_slots, num_slots
    return 0.5 * (N * (N - 1) * L**2 + N * L
                  + float(randomized_integer_second_moment(requirement).sum()))


@dataclass(frozen=True)
class RevenueConstants:
    B1: float
    hard_bound: np.ndarray


@dataclass(frozen=True)
class CtrConstants:
    D1: float
    D3: float


def compute_ctr_constants(inst: ProblemInstance, offline=None) -> CtrConstants:
    """Constants of the click-through model's drift bound.

    ``offline`` is the solution of the relaxed problem (no requirement
    constraints); it is computed when omitted.
    """
    from .offline import evaluate_ctr_rates, relaxed_ctr_optimum

    if inst.requirement is None:
        raise InstanceError(["requirement is required to compute D1"])
    if offline is None:
        offline = relaxed_ctr_optimum(inst)
    _, clicks = evaluate_ctr_rates(inst, offline.support)
    D1 = compute_D1(inst.cycle_slots, inst.num_slots, inst.requirement)
    return CtrConstants(D1=D1, D3=inst.cycle_slots * clicks)


def overdraft_hard_bound(inst: ProblemInstance, epsilon: float) -> np.ndarray:
    """Per-client cap ``1/eps + N max_{q,s} r c - floor(b_i)`` on the overdraft queue.

    This uses the expected payment ``r c`` of a posting. The cap that holds
    on every sample path, where a click pays the full bid, is
    :func:`overdraft_path_bound`.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if inst.budget is None:
        raise InstanceError(["budget is required for the overdraft bound"])
    return 1.0 / epsilon + inst.cycle_slots * max_pair_revenue(inst) - np.floor(inst.budget)


def overdraft_path_bound(inst: ProblemInstance, epsilon: float, threshold=None) -> np.ndarray:
    """Sample-path cap on the overdraft queue under throttling at ``threshold``.

    A client is only posted while its queue is below the throttling threshold
    (``1/eps`` unless given), it is charged at most one bid per slot, and at
    least ``floor(b_i)`` leaves the queue per cycle.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if inst.budget is None:
        raise InstanceError(["budget is required for the overdraft bound"])
    if threshold is None:
        threshold = 1.0 / epsilon
    cap = np.asarray(threshold, dtype=float) + inst.cycle_slots * max_click_payment(inst) \
        - np.floor(inst.budget)
    return cap if np.any(np.asarray(threshold) < 0) else np.maximum(cap, 0.0)


def revenue_constants(inst: ProblemInstance, epsilon: float) -> RevenueConstants:
    return RevenueConstants(B1=compute_B1(inst), hard_bound=overdraft_hard_bound(inst, epsilon))
