import numpy as np
import pytest

from recal.data import LogitsTable

# filled by tests/test_acceptance.py, printed once the session ends
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_table(rng, n=50, k=10, scale=3.0, labeled=True):
    logits = rng.normal(0.0, scale, size=(n, k))
    labels = rng.integers(0, k, size=n) if labeled else None
    return LogitsTable(logits, labels)


@pytest.fixture
def small_table(rng):
    return random_table(rng)
