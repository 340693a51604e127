import math

import numpy as np
import pytest
from scipy.signal import lfilter

from kmregime.ingest import ReturnSeries
from kmregime.langevin import LangevinModel, euler_maruyama, rng


@pytest.fixture(scope="session")
def ou_path():
    """dX = -X dt + 0.5 dW, dt = 0.01, 5e5 steps, seed 42."""
    model = LangevinModel.ornstein_uhlenbeck(theta=1.0, noise=0.5, dt=0.01)
    return euler_maruyama(model, 500_000, seed=42)


@pytest.fixture(scope="session")
def ou_returns(ou_path):
    return ou_path.as_returns()


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


def series(values, step=1.0):
    return ReturnSeries.from_values(np.asarray(values, dtype=float), step=step)


def piecewise_signal(seed, n=None, k=None):
    """Random piecewise-constant signal with unit noise and jumps of 5 to 10.

    Returns the signal and its true break indices (all >= 10 apart).
    """
    g = rng(seed)
    n = n or int(g.integers(60, 201))
    k = k or int(g.integers(1, 4))
    while True:
        breaks = np.sort(g.choice(np.arange(10, n - 9), size=k, replace=False))
        if np.all(np.diff(breaks) >= 10):
            break
    levels = [0.0]
    for _ in range(k):
        levels.append(levels[-1] + g.choice([-1, 1]) * g.uniform(5, 10))
    x = np.repeat(levels, np.diff([0, *breaks, n]))
    return x + g.standard_normal(n), breaks.tolist()


def two_state_chain(n, seed, p=((0.9, 0.1), (0.3, 0.7))):
    """First-order chain on {-1, +1}; exact CK identity holds."""
    u = rng(seed).random(n)
    s = np.empty(n, dtype=np.int8)
    s[0] = 0
    stay = (p[0][0], p[1][1])
    for i in range(1, n):
        prev = s[i - 1]
        s[i] = prev if u[i] < stay[prev] else 1 - prev
    return np.where(s == 0, -1.0, 1.0)


def ma2_and_ar1(n, seed, theta=(0.3, 0.9)):
    """MA(2) and the AR(1) with the same variance and lag-1 autocorrelation."""
    e = rng(seed).standard_normal(n + 2)
    ma = e[2:] + theta[0] * e[1:-1] + theta[1] * e[:-2]
    var = 1 + theta[0] ** 2 + theta[1] ** 2
    rho1 = (theta[0] + theta[0] * theta[1]) / var
    z = rng(seed + 1000).standard_normal(n)
    ar = lfilter([math.sqrt(var * (1 - rho1**2))], [1, -rho1], z)
    return ma, ar
