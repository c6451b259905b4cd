import itertools
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def clause_lists(draw, max_vars=8, max_clauses=12, max_len=4):
    """(num_variables, clauses) with distinct variables per clause."""
    n = draw(st.integers(1, max_vars))
    m = draw(st.integers(0, max_clauses))
    clauses = []
    for _ in range(m):
        k = draw(st.integers(1, min(max_len, n)))
        vs = draw(st.lists(st.integers(1, n), min_size=k, max_size=k, unique=True))
        signs = draw(st.lists(st.booleans(), min_size=k, max_size=k))
        clauses.append([v if s else -v for v, s in zip(vs, signs)])
    return n, clauses


def brute_force_sat(n, clauses):
    """Truth-table oracle: a satisfying assignment dict, or None."""
    if n == 0:
        return {} if all(clauses) else None
    rows = np.array(list(itertools.product([False, True], repeat=n)), dtype=bool)
    ok = np.ones(len(rows), dtype=bool)
    for clause in clauses:
        if not clause:
            return None
        sat = np.zeros(len(rows), dtype=bool)
        for lit in clause:
            col = rows[:, abs(lit) - 1]
            sat |= col if lit > 0 else ~col
        ok &= sat
    hits = np.flatnonzero(ok)
    if hits.size == 0:
        return None
    return {v + 1: bool(rows[hits[0], v]) for v in range(n)}


@pytest.fixture
def tmp_instances(tmp_path):
    def write(name, text):
        p = tmp_path / name
        p.write_text(text)
        return p

    return write


# criterion number -> (passed, description); filled by tests/test_acceptance.py
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, text = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {text}")
