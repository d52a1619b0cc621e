import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rocsurv.survival_data import CovariatePath, Dataset, transform, uncensored_quantile_grid

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance_line():
    """Record one PASS/FAIL line for the terminal summary."""

    def record(number, ok, text):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {text}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def make_data(n=120, p=3, seed=0, censor=0.3, signal=3.0):
    """Exponential times with hazard ``1 + signal * Z_1``, uniform covariates."""
    rng = np.random.default_rng(seed)
    Z = rng.uniform(size=(n, p))
    T = rng.exponential(1.0 / (1.0 + signal * Z[:, 0]))
    if censor:
        C = rng.exponential(np.mean(T) / censor, size=n)
        Y, delta = np.minimum(T, C), (T <= C).astype(int)
    else:
        Y, delta = T, np.ones(n, int)
    return Dataset.from_arrays(Y, delta, Z)


def make_tdc_data(n=100, seed=0):
    """One covariate that jumps at a subject-specific time, one static covariate."""
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(n):
        jump = rng.uniform(0.1, 1.0)
        a, b = rng.uniform(size=2)
        after = a + rng.uniform(-0.5, 0.5)
        rate = 1.0 + 2.0 * a
        T = rng.exponential(1.0 / rate)
        C = rng.exponential(3.0)
        Y, d = min(T, C), int(T <= C)
        if Y > jump:
            paths.append(CovariatePath(i, [0.0, jump], [jump, Y], [[a, b], [after, b]], d))
        else:
            paths.append(CovariatePath(i, [0.0], [Y], [[a, b]], d))
    return Dataset(paths)


@pytest.fixture
def data():
    return make_data()


@pytest.fixture
def tdata(data):
    return transform(data, uncensored_quantile_grid(data, 20))
