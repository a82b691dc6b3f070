import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adqueue.matching import EMPTY, Assignment, all_assignments, enumerate_assignments, max_weight_assignment


def weights(max_clients=4, max_slots=3):
    shape = st.tuples(st.integers(1, max_clients), st.integers(1, max_slots))
    return shape.flatmap(lambda s: arrays(np.float64, s, elements=st.floats(-1, 1, width=32)))


def check_matching(a: Assignment, w):
    m = a.matrix(*w.shape)
    assert (m.sum(axis=0) <= 1).all() and (m.sum(axis=1) <= 1).all()
    assert all(w[i, s] > 0 for i, s in a.pairs)


class TestExamples:
    def test_two_by_two(self):
        a = max_weight_assignment([[3, 1], [2, 2]])
        assert a.pairs == ((0, 0), (1, 1)) and a.total == 5

    def test_all_negative(self):
        a = max_weight_assignment(-np.ones((3, 2)))
        assert a.is_empty and a.total == 0

    def test_single_edge(self):
        a = max_weight_assignment([[0.4]])
        assert a.pairs == ((0, 0),) and a.total == pytest.approx(0.4)

    def test_empty_eligibility(self):
        w = np.ones((2, 2))
        assert max_weight_assignment(w, np.zeros((2, 2), bool)) == EMPTY
        assert enumerate_assignments(w, np.zeros((2, 2), bool)) == EMPTY

    def test_single_negative_pair(self):
        elig = np.array([[True, False], [False, False]])
        assert enumerate_assignments(np.full((2, 2), -0.1), elig).is_empty

    def test_eligibility_respected(self):
        w = np.array([[5.0, 1.0], [1.0, 1.0]])
        elig = np.array([[False, True], [True, True]])
        a = max_weight_assignment(w, elig)
        assert (0, 0) not in a.pairs and a.total == 2.0

    def test_tie_break_prefers_smaller_slot_vector(self):
        # both orders give 2; client 0 in slot 0 wins
        a = max_weight_assignment(np.ones((2, 2)))
        assert a.pairs == ((0, 0), (1, 1))
        # one client, two equal slots
        assert max_weight_assignment([[1.0, 1.0]]).pairs == ((0, 0),)
        # two clients competing for one slot: client 0 wins
        assert max_weight_assignment([[1.0], [1.0]]).pairs == ((0, 0),)

    def test_zero_weight_edges_unused(self):
        assert max_weight_assignment(np.zeros((2, 2))).is_empty


class TestProperties:
    @settings(max_examples=400, deadline=None)
    @given(weights())
    def test_oracle_equivalence(self, w):
        a, b = max_weight_assignment(w), enumerate_assignments(w)
        assert a.total == b.total
        assert a == b
        check_matching(a, w)

    @settings(max_examples=200, deadline=None)
    @given(weights(), st.floats(0.01, 100))
    def test_scale_invariance(self, w, k):
        assert max_weight_assignment(w * k) == max_weight_assignment(w)

    @settings(max_examples=200, deadline=None)
    @given(weights())
    def test_raising_an_optimal_edge_keeps_it(self, w):
        a = max_weight_assignment(w)
        for i, s in a.pairs:
            w2 = w.copy()
            w2[i, s] += 1.0
            assert (i, s) in max_weight_assignment(w2).pairs

    @settings(max_examples=100, deadline=None)
    @given(weights())
    def test_total_is_value_of_pairs(self, w):
        a = max_weight_assignment(w)
        assert a.total == a.value(w)


def test_all_assignments_counts():
    # 2 clients x 2 slots: empty, 4 singles, 2 perfect matchings
    assert len(all_assignments(np.ones((2, 2), bool))) == 7
    assert all_assignments(np.zeros((2, 2), bool)) == [EMPTY]


def test_not_a_matching_rejected():
    with pytest.raises(ValueError):
        Assignment(((0, 0), (1, 0)))


def test_size_guard():
    with pytest.raises(ValueError):
        enumerate_assignments(np.ones((3, 13)))


def test_large_slot_count_fallback():
    rng = np.random.default_rng(0)
    for _ in range(20):
        w = rng.uniform(-1, 1, (2, 14))
        best = max(0.0, w.max(), max((w[0, s] + w[1, t] for s, t in itertools.permutations(range(14), 2)
                                      if w[0, s] > 0 and w[1, t] > 0), default=0.0))
        assert max_weight_assignment(w).total == pytest.approx(best)


def test_shape_validation():
    with pytest.raises(ValueError):
        max_weight_assignment(np.ones(3))
    with pytest.raises(ValueError):
        max_weight_assignment(np.ones((2, 2)), np.ones((2, 3), bool))
