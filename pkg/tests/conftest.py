import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def brute_knn(data, queries, k):
    """Exhaustive k-NN with (squared distance, index) ordering."""
    data = np.asarray(data, dtype=np.float64)
    out = []
    for q in np.asarray(queries, dtype=np.float64):
        d = [((q[0] - p[0]) ** 2 + (q[1] - p[1]) ** 2) + (q[2] - p[2]) ** 2 for p in data]
        order = sorted(range(len(data)), key=lambda j: (d[j], j))
        out.append(order[:k])
    return np.array(out, dtype=np.int64)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS, key=str):
        terminalreporter.write_line(mod.RESULTS[key])
