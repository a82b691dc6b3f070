import warnings

import numpy as np
import pytest
from conftest import tiny_instance
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from adqueue.matching import EMPTY, Assignment, all_assignments
from adqueue.model import InstanceError, ProblemInstance
from adqueue.offline import (ConvergenceWarning, brute_force_offline, capacity_vector, compute_B2,
                             dual_function, dual_gradient_step, evaluate_ctr_rates, evaluate_rate_vector,
                             max_min_slack, project_simplex, relaxed_ctr_optimum, solve_offline,
                             solve_offline_ctr)

pytestmark = pytest.mark.usefixtures("quiet_convergence")


def one(b, c=0.5, r=1.0, nu=0.9, N=1):
    return ProblemInstance(ctr=[[[c]]], bid=[[r]], arrival_prob=nu, keyword_prob=[1.0], cycle_slots=N, budget=[b])


def lp_oracle(inst, obj, con, rhs):
    """Exact optimum of the per-keyword distribution LP via scipy's HiGHS."""
    cols = [(q, a) for q in range(inst.num_keywords) for a in all_assignments(inst.eligibility[q])
            if not a.is_empty]
    rates, N = inst.keyword_rates, inst.cycle_slots
    c = np.array([rates[q] * sum(obj[q, i, s] for i, s in a.pairs) for q, a in cols])
    A = np.zeros((inst.num_clients, len(cols)))
    for j, (q, a) in enumerate(cols):
        for i, s in a.pairs:
            A[i, j] += N * rates[q] * con[q, i, s]
    S = np.array([[1.0 if q == k else 0.0 for q, _ in cols] for k in range(inst.num_keywords)])
    res = linprog(-c, A_ub=np.vstack([A, S]), b_ub=np.concatenate([rhs, np.ones(inst.num_keywords)]),
                  bounds=(0, None), method="highs")
    assert res.status == 0
    return -res.fun


def revenue_lp(inst):
    return lp_oracle(inst, inst.pair_revenue, inst.pair_revenue, inst.budget)


class TestDualStep:
    def test_first_step(self):
        delta, choice = dual_gradient_step(one(0.3), np.zeros(1), 0.1)
        assert choice[0].pairs == ((0, 0),)
        assert delta[0] == pytest.approx(0.15 * 0.1)

    def test_throttled_duals(self):
        inst = ProblemInstance(ctr=np.full((1, 2, 1), 0.5), bid=np.ones((1, 2)), arrival_prob=0.5,
                               keyword_prob=[1.0], cycle_slots=2, budget=[0.3, 2.0])
        delta, choice = dual_gradient_step(inst, np.ones(2), 0.2)
        assert choice[0].is_empty
        np.testing.assert_allclose(delta, np.maximum(1 - 0.2 * inst.budget, 0))

    @given(st.lists(st.floats(0, 3), min_size=3, max_size=3), st.floats(1e-4, 10))
    def test_duals_stay_nonnegative(self, d, step):
        from adqueue.instance_io import load_instance
        delta, _ = dual_gradient_step(load_instance("small_revenue"), np.array(d), step)
        assert np.all(delta >= 0)


class TestSolveOffline:
    def test_budget_binding(self):
        sol = solve_offline(one(0.3), iterations=20_000)
        assert sol.objective == pytest.approx(0.3, abs=1e-3)
        lam, R = evaluate_rate_vector(one(0.3), sol.support)
        assert lam[0] == pytest.approx(0.3, abs=1e-3)
        assert compute_B2(one(0.3), sol) == pytest.approx(0.0, abs=1e-3)

    def test_budget_slack(self):
        inst = one(10.0)
        sol = solve_offline(inst, iterations=5_000)
        assert sol.objective == pytest.approx(0.45, abs=1e-3)
        assert compute_B2(inst, sol) == pytest.approx(9.55, abs=1e-3)
        assert sol.converged

    def test_zero_ctr(self):
        sol = solve_offline(one(1.0, c=0.0), iterations=1000)
        assert sol.objective == 0.0 and np.all(sol.duals == 0)

    def test_small_instance_against_lp(self, small_revenue):
        sol = solve_offline(small_revenue, iterations=100_000)
        assert sol.objective == pytest.approx(revenue_lp(small_revenue), abs=1e-3)
        assert sol.residual <= 1e-4

    def test_random_instances_against_lp(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            inst = tiny_instance(rng, keywords=2, clients=3, slots=2)
            sol = solve_offline(inst, iterations=20_000)
            assert sol.objective == pytest.approx(revenue_lp(inst), abs=2e-3)

    def test_convergence_warning(self, small_revenue):
        with warnings.catch_warnings():
            warnings.simplefilter("error", ConvergenceWarning)
            with pytest.raises(ConvergenceWarning):
                solve_offline(small_revenue, iterations=50, tol=1e-12)

    def test_windowed_objective_settles(self, small_revenue):
        sol = solve_offline(small_revenue, iterations=20_000, record_every=1)
        windows = sol.history[-8000:].reshape(8, -1).mean(axis=1)
        assert windows.max() - windows[-1] <= 1e-3
        assert abs(windows[-1] - sol.objective) <= 1e-3

    def test_needs_budget(self):
        inst = ProblemInstance(ctr=[[[0.5]]], bid=[[1]], arrival_prob=0.5, keyword_prob=[1], cycle_slots=1)
        with pytest.raises(InstanceError):
            solve_offline(inst)

    def test_serialization(self, small_revenue):
        doc = solve_offline(small_revenue, iterations=500).to_dict()
        assert set(doc) >= {"objective", "duals", "support", "residual"}


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 2), min_size=3, max_size=3))
def test_weak_duality(d):
    from adqueue.instance_io import load_instance
    inst = load_instance("small_revenue")
    assert dual_function(inst, np.array(d)) >= revenue_lp(inst) - 1e-9


class TestRateVector:
    def test_nothing_posted(self, small_revenue):
        lam, R = evaluate_rate_vector(small_revenue, [{}, {}])
        assert np.all(lam == 0) and R == 0

    def test_deterministic_single_matrix(self):
        inst = one(1.0, c=0.5, r=2.0, nu=0.4, N=5)
        lam, R = evaluate_rate_vector(inst, [{Assignment(((0, 0),)): 1.0}])
        assert lam[0] == pytest.approx(5 * 0.4 * 0.5 * 2)
        assert R == pytest.approx(lam[0] / 5)

    def test_simplex_violation(self, small_revenue):
        a = Assignment(((0, 0),))
        with pytest.raises(ValueError):
            evaluate_rate_vector(small_revenue, [{a: 0.7, Assignment(((1, 0),)): 0.6}, {}])
        with pytest.raises(ValueError):
            evaluate_rate_vector(small_revenue, [{a: 1.0}])

    def test_B2_empty_posting(self, small_revenue):
        from adqueue.offline import OfflineSolution
        sol = OfflineSolution(support=[{}, {}], duals=np.zeros(3), objective=0.0, rates=np.zeros(3))
        assert compute_B2(small_revenue, sol) == pytest.approx(small_revenue.budget.min())


class TestBruteForce:
    def test_zero_budget(self):
        assert brute_force_offline(one(0.0)).R_star == 0.0

    def test_budget_slack_matches_unconstrained(self, small_revenue):
        rich = small_revenue.with_budget([1e3] * 3)
        best = sum(small_revenue.keyword_rates[q] * small_revenue.pair_revenue[q].max() for q in range(2))
        assert brute_force_offline(rich).R_star == pytest.approx(best)

    def test_guards(self, ctr_benchmark):
        with pytest.raises(ValueError):
            brute_force_offline(ctr_benchmark.with_budget(np.ones(10)))
        with pytest.raises(ValueError):
            brute_force_offline(one(1.0), resolution=0.3)

    def test_within_grid_gap_of_lp(self):
        rng = np.random.default_rng(11)
        for _ in range(8):
            inst = tiny_instance(rng)
            lp = revenue_lp(inst)
            bf = brute_force_offline(inst, 0.05)
            assert bf.R_star <= lp + 1e-9
            assert lp <= bf.R_star + bf.grid_gap + 1e-9
            lam, _ = evaluate_rate_vector(inst, bf.support)
            assert np.all(lam <= inst.budget + 1e-9)


class TestCtrOffline:
    def test_relaxed_optimum_single(self):
        inst = ProblemInstance(ctr=[[[0.5]]], bid=[[1]], arrival_prob=0.9, keyword_prob=[1], cycle_slots=1,
                               requirement=[0.2])
        assert relaxed_ctr_optimum(inst).objective == pytest.approx(0.45)

    def test_requirement_lp(self, ctr_benchmark):
        inst = ctr_benchmark.with_requirement(np.full(10, 60.0))
        sol = solve_offline_ctr(inst, iterations=20_000)
        elig = inst.eligibility.astype(float)
        exact = lp_oracle(inst, inst.effective_ctr, -elig, -inst.requirement)
        assert sol.objective == pytest.approx(exact, abs=2e-3)
        assert np.all(sol.rates >= inst.requirement - 0.5)

    def test_max_min_slack_lp(self, ctr_benchmark):
        m = np.full(10, 60.0)
        res = max_min_slack(ctr_benchmark, m, iterations=4000)
        # max t s.t. capacity_i(p) - m_i >= t, written with an extra variable
        cols = [(q, a) for q in range(5) for a in all_assignments(ctr_benchmark.eligibility[q]) if not a.is_empty]
        rates, N = ctr_benchmark.keyword_rates, ctr_benchmark.cycle_slots
        A = np.zeros((10, len(cols)))
        for j, (q, a) in enumerate(cols):
            for i, _ in a.pairs:
                A[i, j] = N * rates[q]
        S = np.array([[1.0 if q == k else 0.0 for q, _ in cols] for k in range(5)])
        A_ub = np.vstack([np.hstack([-A, np.ones((10, 1))]), np.hstack([S, np.zeros((5, 1))])])
        c = np.zeros(len(cols) + 1)
        c[-1] = -1
        lp = linprog(c, A_ub=A_ub, b_ub=np.concatenate([-m, np.ones(5)]),
                     bounds=[(0, None)] * len(cols) + [(None, None)], method="highs")
        exact = -lp.fun
        assert res.value <= exact + 1e-6 <= res.upper + 2e-6
        assert res.value == pytest.approx(exact, rel=1e-2)

    def test_capacity_vector(self, ctr_benchmark):
        choice = [Assignment(((0, 0),))] + [EMPTY] * 4
        cap = capacity_vector(ctr_benchmark, choice)
        assert cap[0] == pytest.approx(1440 * 0.2364) and cap[1:].sum() == 0

    def test_ctr_rates(self, ctr_benchmark):
        imp, clicks = evaluate_ctr_rates(ctr_benchmark, [{}] * 5)
        assert clicks == 0 and np.all(imp == 0)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8))
def test_project_simplex(v):
    p = project_simplex(v)
    assert np.all(p >= 0) and p.sum() == pytest.approx(1.0)
