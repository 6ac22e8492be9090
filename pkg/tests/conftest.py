import numpy as np
import pytest

from metadiag.data import Dataset


def make_dataset(n=60, p=3, seed=0, name="rand"):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = (X[:, 0] + 0.5 * rng.normal(size=n) > 0).astype(int)
    return Dataset(X, y, np.arange(n), tuple(f"x{i}" for i in range(p)), name)


@pytest.fixture
def rand_dataset():
    return make_dataset()


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
