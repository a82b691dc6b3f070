"""Acceptance suite: twelve end-to-end criteria at their stated tolerances.

Each test records a pass/fail line per criterion; the lines are printed in
the terminal summary. Long simulations are cached so runs shared between
criteria happen once per session.
"""

import math
import warnings
from functools import lru_cache

import numpy as np
import pytest
from conftest import record, tiny_instance

from adqueue.bounds import (LowerBoundParams, log_tightness_regression, single_queue_lower_bound,
                            threshold_for_epsilon)
from adqueue.ctr import credit_queue_bound
from adqueue.harness import ctr_setup
from adqueue.instance_io import load_bundle, load_instance
from adqueue.matching import enumerate_assignments, max_weight_assignment
from adqueue.model import ProblemInstance, compute_B1, overdraft_hard_bound
from adqueue.offline import ConvergenceWarning, brute_force_offline, solve_offline
from adqueue.revenue import RevenuePolicy, decisions_equal, simulate_revenue
from adqueue.stats import batch_means_se

pytestmark = pytest.mark.slow

K_REVENUE = 50_000
EPSILONS = (1e-2, 1e-3)
SEED = 20240


@lru_cache(maxsize=None)
def small():
    return load_instance("small_revenue")


@lru_cache(maxsize=None)
def offline_optimum():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        return solve_offline(small(), iterations=100_000)


# Every revenue trace produced here, keyed by a label; criterion 2 checks them all.
REVENUE_RUNS = {}


@lru_cache(maxsize=None)
def revenue_run(variant, eps, delta=0.0):
    inst = small()
    if variant == "standard":
        pol = RevenuePolicy.standard(inst, eps)
    elif variant == "underdraft":
        pol = RevenuePolicy.underdraft(inst, eps)
    else:
        pol = RevenuePolicy.estimated(inst, eps, delta=delta, seed=SEED)
    keep = variant != "estimated"
    tr = simulate_revenue(inst, pol, K_REVENUE, SEED, keep_decisions=keep)
    REVENUE_RUNS[(variant, eps, delta)] = (inst, pol, tr)
    return tr


SINGLE = ProblemInstance(ctr=[[[0.5]]], bid=[[4.0]], arrival_prob=0.5, keyword_prob=[1.0],
                         cycle_slots=1, budget=[0.8], name="single")


@lru_cache(maxsize=None)
def single_run(eps):
    pol = RevenuePolicy.standard(SINGLE, eps)
    tr = simulate_revenue(SINGLE, pol, K_REVENUE, SEED)
    REVENUE_RUNS[("single", eps, 0.0)] = (SINGLE, pol, tr)
    return tr


@lru_cache(maxsize=None)
def benchmark_run(policy):
    bundle = load_bundle("ctr_benchmark")
    eps = bundle.defaults["epsilon"]
    params = {"epsilon": eps, "policy": policy}
    if policy == "mwm-fast":
        params["fast_T"] = bundle.defaults["fast_T"]
    setup = ctr_setup(bundle, params)
    return setup.instance, setup.simulator.run(bundle.defaults["cycles"], SEED)


def test_criterion_01_epsilon_gap():
    inst = small()
    off = offline_optimum()
    bf = brute_force_offline(inst, resolution=0.05)
    cross = bf.R_star - 1e-3 <= off.objective <= bf.R_star + bf.grid_gap + 1e-3
    record(1, "offline vs brute force", cross,
           f"R*={off.objective:.5f} brute={bf.R_star:.5f} grid_gap={bf.grid_gap:.4f}")
    B1 = compute_B1(inst)
    ok = cross
    for eps in EPSILONS:
        per_slot = revenue_run("standard", eps).revenue / inst.cycle_slots
        R_hat, se = per_slot.mean(), batch_means_se(per_slot)
        gap, allow = off.objective - R_hat, B1 * eps / inst.cycle_slots + 3 * se
        record(1, f"eps={eps:g}", gap <= allow, f"gap={gap:.5f} <= {allow:.5f}")
        ok &= gap <= allow
    assert ok


def test_criterion_02_hard_overdraft_bound():
    for eps in EPSILONS:
        revenue_run("standard", eps)
        revenue_run("estimated", eps, delta=0.5)
        single_run(eps)
    ok = True
    for (variant, eps, delta), (inst, pol, tr) in sorted(REVENUE_RUNS.items(), key=str):
        if variant == "underdraft":
            continue
        cap = overdraft_hard_bound(inst, eps)
        viol = int((tr.Q > cap).sum())
        excess = float((tr.Q - cap).max())
        record(2, f"{variant} eps={eps:g}", viol == 0, f"{viol} violations, max excess {excess:.3g}")
        ok &= viol == 0
    assert ok


def test_criterion_03_underdraft():
    inst = small()
    ok = True
    for eps in EPSILONS:
        und = revenue_run("underdraft", eps)
        viol = int((und.Q > 0).sum())
        record(3, f"Q<=0 eps={eps:g}", viol == 0, f"{viol} violations, max Q {und.Q.max():.3g}")
        std = revenue_run("standard", eps)
        C = -RevenuePolicy.underdraft(inst, eps).floor
        same = decisions_equal(std.decisions, und.decisions) and np.array_equal(std.Q, und.Q + C)
        record(3, f"shift eps={eps:g}", same, "decisions and shifted queues identical" if same else "differ")
        ok &= viol == 0 and same
    assert ok


def test_criterion_04_estimation_robustness():
    inst = small()
    R_star = offline_optimum().objective
    B1 = compute_B1(inst)
    delta = 0.5
    ok = True
    for eps in EPSILONS:
        per_slot = revenue_run("estimated", eps, delta=delta).revenue / inst.cycle_slots
        floor = (1 - delta) / (1 + delta) * R_star - B1 * eps / inst.cycle_slots - 3 * batch_means_se(per_slot)
        record(4, f"eps={eps:g}", per_slot.mean() >= floor, f"R={per_slot.mean():.5f} >= {floor:.5f}")
        ok &= per_slot.mean() >= floor
    assert ok


def test_criterion_05_lower_bound_consistency():
    b = float(SINGLE.budget[0])
    ok = True
    for eps in EPSILONS:
        tr = single_run(eps)
        rev = tr.revenue
        premise = rev.mean() + 3 * batch_means_se(rev) >= b - eps
        Q = tr.Q[1:, 0]
        lb = single_queue_lower_bound(LowerBoundParams.from_instance(SINGLE, eps))
        holds = Q.mean() >= lb - 3 * batch_means_se(Q)
        record(5, f"eps={eps:g}", premise and holds,
               f"revenue={rev.mean():.4f} (b-eps={b - eps:.4f}), mean Q={Q.mean():.3f} >= LB {lb:.3f}")
        ok &= premise and holds
    assert ok


def test_criterion_06_threshold_tightness():
    nu, p1, p2 = 0.7, 0.5, 0.25
    eps_list = (1e-2, 1e-3, 1e-4, 1e-5)
    ok = True
    for eps in eps_list:
        ch = threshold_for_epsilon(nu, p1, p2, eps)
        br = ch.brackets(1 - eps)
        record(6, f"bracket eps={eps:g}", br,
               f"T={ch.T_int} thr[T-1,T+1]=[{ch.throughput_below:.6f}, {ch.throughput_above:.6f}]")
        ok &= br
    reg = log_tightness_regression(nu, p1, p2, eps_list)
    record(6, "log regression", reg.r2 >= 0.99, f"R^2={reg.r2:.4f} slope={reg.slope:.3f}")
    assert ok and reg.r2 >= 0.99


def test_criterion_07_credit_queue_bound():
    inst, tr = benchmark_run("mwm")
    bundle = load_bundle("ctr_benchmark")
    bound = credit_queue_bound(inst, bundle.defaults["epsilon"]).bound
    total = tr.total_queue()
    mean, se = total.mean(), batch_means_se(total)
    ok = mean - 3 * se <= bound
    record(7, "mwm", ok, f"mean sum Q={mean:.1f} (se {se:.1f}) <= bound {bound:.1f}")
    assert ok


def _spread(inst, tr):
    m = inst.requirement
    over, under = tr.normalized_over(m), tr.normalized_under(m)
    return over.mean(), over.std(), under.mean(), under.std()


def test_criterion_08a_fast_update_dominates():
    inst, slow = benchmark_run("mwm")
    _, fast = benchmark_run("mwm-fast")
    s, f = _spread(inst, slow), _spread(inst, fast)
    names = ("over mean", "over std", "under mean", "under std")
    ok = all(b < a for a, b in zip(s, f))
    record(8, "mwm-fast below mwm", ok,
           ", ".join(f"{n} {b:.4f}<{a:.4f}" for n, a, b in zip(names, s, f)))
    assert ok


def test_criterion_08b_opt_queue_ratio():
    _, mwm = benchmark_run("mwm")
    _, opt = benchmark_run("opt")
    ratio = opt.total_queue().mean() / mwm.total_queue().mean()
    record(8, "opt/mwm sum Q >= 5", ratio >= 5,
           f"opt {opt.total_queue().mean():.1f} / mwm {mwm.total_queue().mean():.1f} = {ratio:.3f}")
    assert ratio >= 5


def test_criterion_09_matching_oracle():
    rng = np.random.default_rng(SEED)
    mismatches = 0
    for _ in range(10_000):
        n, L = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        w = rng.uniform(-1, 1, (n, L))
        if max_weight_assignment(w).total != enumerate_assignments(w).total:
            mismatches += 1
    record(9, "10^4 random matrices", mismatches == 0, f"{mismatches} mismatches")
    assert mismatches == 0


def test_criterion_10_offline_oracle():
    rng = np.random.default_rng(SEED)
    res = 0.02
    worst = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        for _ in range(20):
            inst = tiny_instance(rng, max_bid=1)
            diff = abs(solve_offline(inst, iterations=20_000).objective - brute_force_offline(inst, res).R_star)
            worst = max(worst, diff)
    ok = worst <= res + 1e-3
    record(10, "20 tiny instances", ok, f"worst |diff|={worst:.5f} <= {res + 1e-3}")
    assert ok


def test_criterion_11_requirement_fulfillment():
    ok = True
    runs = [("benchmark " + p, *benchmark_run(p)) for p in ("mwm", "mwm-fast")]
    bundle = load_bundle("short_term_demo")
    setup = ctr_setup(bundle, {"epsilon": bundle.defaults["epsilon"]})
    runs.append(("short-term demo", setup.instance, setup.simulator.run(1000, SEED)))
    for label, inst, tr in runs:
        lt = np.nonzero(tr.long_term)[0]
        margins = [tr.S[:, i].mean() + 3 * batch_means_se(tr.S[:, i]) - inst.requirement[i] for i in lt]
        good = min(margins) >= 0
        record(11, label, good, f"min(S + 3se - m)={min(margins):.3f}")
        ok &= good
    assert ok


def test_criterion_12_short_term_smoke():
    bundle = load_bundle("short_term_demo")
    setup = ctr_setup(bundle, {"epsilon": bundle.defaults["epsilon"], "hours": 24})
    tr = setup.simulator.run(1000, SEED)
    alpha_ok = bool(np.all((tr.alpha >= 0) & (tr.alpha <= 1)))
    Q = tr.Q[1:]
    full, half = Q.mean(axis=0), Q[Q.shape[0] // 2:].mean(axis=0)
    rel = np.abs(half - full) / np.maximum(full, 1e-12)
    stable = bool(np.all(rel <= 0.2) and np.all(np.isfinite(Q)))
    record(12, "alpha in [0,1]", alpha_ok, f"range [{tr.alpha.min():.3f}, {tr.alpha.max():.3f}]")
    record(12, "credit queues stable", stable, f"max relative drift {rel.max():.3f}")
    assert alpha_ok and stable and math.isfinite(tr.J.mean())
