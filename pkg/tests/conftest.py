"""Shared problem bundles; session-scoped since table construction is the
expensive part and every object is immutable or append-only."""
import math

import numpy as np
import pytest

from harvestopt import (
    capped_linear_a,
    capped_linear_b,
    exp_capped,
    fundamental_solutions,
    gbm,
    mean_rev_sqrt,
    piecewise_a,
    piecewise_b,
    power_payoff,
    theta_from_payoffs,
)


class Bundle:
    def __init__(self, d, p):
        self.d = d
        self.p = p
        self.pair = fundamental_solutions(d)
        self.theta = theta_from_payoffs(d, p)


@pytest.fixture(scope="session")
def power_gbm():
    """Power running payoff, unit harvest rate, driftless unit-vol GBM."""
    return Bundle(gbm(b=0.0, sigma=1.0, r=1.0), power_payoff(alpha=0.5, c=0.1))


@pytest.fixture(scope="session")
def capped_a_gbm():
    """Linear-capped payoff pair on a supercritical GBM (b > r)."""
    return Bundle(gbm(b=0.5, sigma=0.5, r=0.25), capped_linear_a(alpha=0.5, c=1.0))


@pytest.fixture(scope="session")
def capped_b_gbm():
    """Concave-capped pair on the b = r GBM (linear increasing solution)."""
    return Bundle(gbm(b=0.5, sigma=0.5, r=0.5), capped_linear_b(a=0.5, alpha=1.5, c=0.5))


@pytest.fixture(scope="session")
def sqrt_model():
    """Square-root mean reversion with exponential-capped utility."""
    return Bundle(mean_rev_sqrt(alpha=1.0), exp_capped(gamma=0.5, kappa=0.3, c=1.0))


@pytest.fixture(scope="session")
def quartic_a():
    """First quartic-tail pair on the benchmark GBM (m, n) = (-2, 2)."""
    return Bundle(gbm(b=0.25, sigma=1.0 / math.sqrt(2.0), r=1.0), piecewise_a(c=0.1))


@pytest.fixture(scope="session")
def quartic_b():
    """Second quartic-tail pair on the same GBM."""
    return Bundle(gbm(b=0.25, sigma=1.0 / math.sqrt(2.0), r=1.0), piecewise_b(c=0.1))


def loggrid(lo, hi, n):
    return np.geomspace(lo, hi, n)
