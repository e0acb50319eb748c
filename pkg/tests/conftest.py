import numpy as np
import pytest

from crowdaml.graph import LabelSet, TransactionGraph


def random_graph(rng, n=8, m=14, n_feat=3, n_attr=4, self_loops=True):
    src = rng.integers(0, n, m)
    dst = rng.integers(0, n, m)
    if not self_loops:
        dst = np.where(dst == src, (dst + 1) % n, dst)
    return TransactionGraph.from_arrays(rng.normal(size=(n, n_feat)), src, dst,
                                        rng.normal(size=(m, n_attr)))


def toy_fixture(seed=0):
    """40 transactions; laundering ones run among accounts 0-4 with large amounts."""
    rng = np.random.default_rng(seed)
    n, m = 12, 40
    y = np.array([1] * 10 + [0] * 30)
    src = np.where(y == 1, rng.integers(0, 5, m), rng.integers(5, n, m))
    dst = np.where(y == 1, rng.integers(0, 5, m), rng.integers(5, n, m))
    amount = np.where(y == 1, 3.0, -1.0) + 0.1 * rng.normal(size=m)
    attrs = np.stack([amount, rng.normal(size=m), np.zeros(m), np.zeros(m)], axis=1)
    feats = np.stack([np.arange(n) < 5, np.ones(n)], axis=1).astype(float)
    g = TransactionGraph.from_arrays(feats, src, dst, attrs)
    all_train = np.ones(m, dtype=bool)
    return g, LabelSet(y, all_train, np.zeros(m, dtype=bool))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def record_acceptance(number, name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {number}. {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("]")[1].split(".")[0])):
            terminalreporter.write_line(line)
