import warnings

import numpy as np
import pytest

from adqueue.instance_io import load_instance
from adqueue.model import ProblemInstance
from adqueue.offline import ConvergenceWarning

# Filled by the acceptance module: criterion number -> list of (label, passed, detail).
ACCEPTANCE = {}


def record(criterion: int, label: str, passed: bool, detail: str) -> None:
    ACCEPTANCE.setdefault(criterion, []).append((label, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[c]
        ok = all(p for _, p, _ in parts)
        tr.write_line(f"criterion {c:2d}: {'PASS' if ok else 'FAIL'}")
        for label, p, detail in parts:
            tr.write_line(f"    [{'pass' if p else 'fail'}] {label}: {detail}")


@pytest.fixture
def small_revenue():
    return load_instance("small_revenue")


@pytest.fixture
def ctr_benchmark():
    return load_instance("ctr_benchmark")


@pytest.fixture
def quiet_convergence():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        yield


def tiny_instance(rng, keywords=2, clients=2, slots=1, cycle_slots=None, budget=True, max_bid=3):
    """Random small revenue instance with integer bids in ``1..max_bid`` and reachable budgets."""
    ctr = rng.uniform(0.05, 0.95, (keywords, clients, slots))
    bid = rng.integers(1, max_bid + 1, (keywords, clients)).astype(float)
    nu = float(rng.uniform(0.3, 0.9))
    kp = rng.dirichlet(np.ones(keywords))
    N = int(rng.integers(2, 8)) if cycle_slots is None else cycle_slots
    inst = ProblemInstance(ctr=ctr, bid=bid, arrival_prob=nu, keyword_prob=kp, cycle_slots=N,
                           budget=np.ones(clients))
    if budget:
        cap = N * nu * inst.pair_revenue.max(axis=(0, 2))
        inst = inst.with_budget(rng.uniform(0.2, 0.9, clients) * cap)
    return inst
