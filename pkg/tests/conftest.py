import os

# keep BLAS single-threaded inside tests: the heavy suites parallelize
# across processes instead, and aggregates must not depend on threading
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance pass/fail lines after the test summary."""
    try:
        from test_acceptance import _LINES
    except ImportError:
        return
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)


def make_regression(rng, n=60, p=8, s=3, noise=1.0, intercept=1.0):
    """Small dense regression instance with an intercept column."""
    Xc = rng.standard_normal((n, p))
    X = np.column_stack([np.ones(n), Xc])
    s = min(s, p)
    beta = np.zeros(p + 1)
    beta[0] = intercept
    beta[1 : s + 1] = rng.uniform(0.5, 2.0, s) * rng.choice([-1.0, 1.0], s)
    y = X @ beta + noise * rng.standard_normal(n)
    return X, y, beta
