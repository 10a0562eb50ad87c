"""Declared failure modes must surface as their named exceptions."""
import numpy as np
import pytest

from harvestopt import custom, custom_payoff, resolvent, simulate_path, StrategyBG
from harvestopt.errors import (
    DiscountFloorViolated,
    IntegrabilityCheckFailed,
    StateEscapedDomain,
    StencilTooCoarse,
    TailBoundUnattainable,
)


def _ones(x):
    return np.ones_like(np.asarray(x, dtype=float))


def _zeros(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def test_discount_floor_violated():
    with pytest.raises(DiscountFloorViolated):
        custom(drift=_zeros, volatility=_ones,
               discount=lambda x: 0.5 * _ones(x),      # below the declared floor
               r_floor=1.0, r_cap=1.0)
    with pytest.raises(DiscountFloorViolated):
        custom(drift=_zeros, volatility=_ones, discount=_ones,
               r_floor=0.0, r_cap=1.0)                  # floor must be positive


def test_integrability_check_failed(quartic_a):
    # F ~ s^-2 against the linear lower density gives a 1/s integrand at 0
    with pytest.raises(IntegrabilityCheckFailed):
        resolvent(quartic_a.d, quartic_a.pair,
                  lambda x: np.asarray(x, dtype=float) ** -2.0, label="bad")


def test_tail_bound_unattainable(quartic_a):
    # cubic growth cancels the upper density decay: the tail never certifies
    with pytest.raises(TailBoundUnattainable):
        resolvent(quartic_a.d, quartic_a.pair,
                  lambda x: np.asarray(x, dtype=float) ** 3.0, label="grow")


def test_stencil_too_coarse(power_gbm):
    from harvestopt import hjb_residuals, solve_boundaries
    from harvestopt.valuefn import build_value_function
    b = power_gbm
    sol = solve_boundaries(b.d, b.pair, b.theta, b.p)
    w = build_value_function(b.d, b.pair, b.p, b.theta, sol)
    with pytest.raises(StencilTooCoarse):
        hjb_residuals(w, b.d, b.p, b.theta, sol.beta_star * (1.0 + 1e-14))


def test_state_escaped_domain():
    # overwhelming inward drift drives the Euler step nonpositive even after
    # twenty halvings of the increment
    d = custom(drift=lambda x: -1e9 * _ones(x), volatility=_ones,
               discount=_ones, r_floor=1.0, r_cap=1.0)
    p = custom_payoff(h=_zeros, k=_ones, k_prime=_zeros,
                      cum_k=lambda x: np.asarray(x, dtype=float),
                      c=1.0, h_over_r_zero_limit=0.0)
    with pytest.raises(StateEscapedDomain):
        simulate_path(d, StrategyBG(beta=2.0, gamma=1.0), 1.0, 1e-2, 0, 0, p)
