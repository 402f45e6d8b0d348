import itertools

import numpy as np
import pytest


def naive_scan(t, min_len=2, max_len=None, stride=1):
    """Double loop over all (i, j), 1-based; ties keep the first (smallest i, then j)."""
    t = np.asarray(t, dtype=float)
    n = t.size
    max_len = n if max_len is None else max_len
    mean = t.sum() / n
    best = None
    for i in range(1, n + 1):
        for j in range(i + 1, n + 1):
            L = j - i + 1
            if L < min_len or L > max_len or (j - i) % stride:
                continue
            z = L * (t[i - 1 : j].mean() - mean)
            if best is None or z > best[0] + 1e-12:
                best = (z, i, j)
    return best


def brute_force_match_cost(t_scores, c_scores, k):
    """Least total |gap| over every way of giving each treated k distinct controls."""
    best = [np.inf]

    def rec(ti, used, cost):
        if cost >= best[0]:
            return
        if ti == len(t_scores):
            best[0] = cost
            return
        free = [c for c in range(len(c_scores)) if c not in used]
        for combo in itertools.combinations(free, k):
            rec(ti + 1, used | set(combo), cost + sum(abs(c_scores[c] - t_scores[ti]) for c in combo))

    rec(0, frozenset(), 0.0)
    return best[0]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" in nodeid and rep.when == "call":
                name = nodeid.split("::")[-1]
                lines.append((name, "PASS" if outcome == "passed" else "FAIL"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, verdict in sorted(lines):
            number = int(name.split("_")[2])
            terminalreporter.write_line(f"criterion {number:2d}: {verdict}  ({name})")
