import sys

import numpy as np
import pytest

from fedsim import ClientUpdate


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_updates(rng, n_clients, length, max_samples=50):
    ids = rng.permutation(1000)[:n_clients]
    return [ClientUpdate(int(i), rng.normal(size=length), int(rng.integers(1, max_samples + 1)))
            for i in ids]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
