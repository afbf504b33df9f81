import numpy as np
import pytest


def pairwise_variance(x, y):
    """B(x, y) through the pair-sum identity (1/(2N^2)) sum_ij <x_i - x_j, y_i - y_j>."""
    x = np.atleast_2d(np.asarray(x, dtype=float).T).T
    y = np.atleast_2d(np.asarray(y, dtype=float).T).T
    n = x.shape[0]
    total = 0.0
    for i in range(n):
        for j in range(n):
            total += float(np.dot(x[i] - x[j], y[i] - y[j]))
    return total / (2 * n * n)


def connected_components(w, tol=0.0):
    """Union-find over edges with weight > tol."""
    n = w.shape[0]
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(n):
        for j in range(i + 1, n):
            if w[i, j] > tol:
                parent[find(i)] = find(j)
    return len({find(i) for i in range(n)})


def random_weights(rng, n, density=0.4):
    w = np.where(rng.random((n, n)) < density, rng.random((n, n)), 0.0)
    w = np.triu(w, 1)
    return w + w.T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> list of (ok, message); filled by tests/test_acceptance.py
ACCEPTANCE = {}
CRITERIA = {
    1: "averaged four-agent spectrum",
    2: "PE certification of the four-agent schedule",
    3: "exponential consensus",
    4: "flocking",
    5: "dissipation-inequality monitors",
    6: "bound soundness sweep",
    7: "conservation and identity suite",
    8: "negative controls",
}


@pytest.fixture
def record():
    def _record(criterion, ok, message):
        ACCEPTANCE.setdefault(criterion, []).append((bool(ok), message))
        print(f"[#{criterion}] {'pass' if ok else 'FAIL'}: {message}")
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k, title in CRITERIA.items():
        checks = ACCEPTANCE.get(k)
        if not checks:
            tr.write_line(f"ACCEPTANCE #{k} NOT RUN  {title}")
            continue
        ok = all(c for c, _ in checks)
        failed = [m for c, m in checks if not c]
        detail = "; ".join(failed) if failed else f"{len(checks)} checks"
        tr.write_line(f"ACCEPTANCE #{k} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
