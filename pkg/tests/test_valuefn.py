import math

import numpy as np
import pytest

from harvestopt import (
    capped_linear_a,
    capped_linear_b,
    exp_capped,
    hjb_residuals,
    smooth_fit_report,
    solve_boundaries,
    theta_from_payoffs,
)
from harvestopt.valuefn import (
    build_value_function,
    c1_gap,
    entrance_boundary_diagnostic,
    intervention_residual,
    ode_residual,
    verify_value_function,
)


@pytest.fixture(scope="module")
def solved_power(power_gbm):
    b = power_gbm
    sol = solve_boundaries(b.d, b.pair, b.theta, b.p)
    w = build_value_function(b.d, b.pair, b.p, b.theta, sol)
    return b, sol, w


def test_case_one_certificates(solved_power):
    b, sol, w = solved_power
    report = verify_value_function(w, sol)
    assert report["ode_residual_max"] <= 1e-6
    assert report["intervention_residual_max"] <= 1e-6
    assert report["intervention_active_min"] >= -1e-6
    assert report["c1_gap"] <= 1e-7
    assert report["c0_gap"] <= 1e-7
    assert report["smooth_fit"]["beta_gap"] <= 1e-6
    assert report["smooth_fit"]["gamma_gap"] <= 1e-6
    assert report["bounded_below"]
    assert report["growth_surrogate_ok"]


def test_case_one_value_identities(solved_power):
    b, sol, w = solved_power
    lhs = float(w(np.asarray(sol.beta_star))) - float(w(np.asarray(sol.gamma_star)))
    rhs = float(b.p.cum_k(sol.beta_star) - b.p.cum_k(sol.gamma_star)) - b.p.c
    assert lhs == pytest.approx(rhs, abs=1e-10)

    # strict improvement over the never-intervene candidate inside the band
    xs = np.geomspace(sol.gamma_star, sol.beta_star * 0.999, 9)
    floor = w.r_h.value(xs) + sol.k_infinity * b.pair.psi(xs)
    assert np.all(w(xs) > floor)


def test_hjb_residual_operator(solved_power):
    b, sol, w = solved_power
    ode, inter = hjb_residuals(w, b.d, b.p, b.theta, sol.beta_star * 0.5)
    assert ode == 0.0                                 # construction below switch
    assert inter <= 1e-6
    ode_hi, inter_hi = hjb_residuals(w, b.d, b.p, b.theta, sol.beta_star + 1.0)
    assert ode_hi < 0.0                               # strict inequality region
    assert abs(inter_hi) <= 1e-6                      # active side
    # the intervention maximiser at the switch point is the full jump to gamma*
    assert intervention_residual(w, sol.beta_star) == pytest.approx(0.0, abs=1e-8)


def test_case_three_is_plain_resolvent(quartic_a):
    b = quartic_a
    sol = solve_boundaries(b.d, b.pair, b.theta, b.p)
    w = build_value_function(b.d, b.pair, b.p, b.theta, sol)
    assert sol.case_tag == "III"
    x = np.geomspace(1e-3, 1e3, 60)
    assert np.max(np.abs(w(x) - w.r_h.value(x))) <= 1e-8 * np.max(np.abs(w(x)))
    report = verify_value_function(w, sol)
    assert report["ode_residual_max"] <= 1e-6
    assert report["intervention_residual_max"] <= 1e-6
    assert report["case_iii_equals_r_h_gap"] <= 1e-8
    assert smooth_fit_report(w, b.p, sol) == {}
    assert c1_gap(w) == 0.0


def test_case_two_certificates(capped_a_gbm):
    b = capped_a_gbm
    p = capped_linear_a(alpha=0.5, c=1.0)
    theta = theta_from_payoffs(b.d, p)
    sol = solve_boundaries(b.d, b.pair, theta, p)
    assert sol.case_tag == "II"
    assert abs(sol.residuals[0]) < 1e-7
    w = build_value_function(b.d, b.pair, p, theta, sol)
    assert w.psi_zero == 0.0                          # natural lower boundary
    report = verify_value_function(w, sol)
    assert report["ode_residual_max"] <= 1e-6
    assert report["intervention_residual_max"] <= 1e-6
    assert report["intervention_active_min"] >= -1e-6
    assert report["c1_gap"] <= 1e-7
    assert report["c0_gap"] <= 1e-7
    assert "gamma_gap" not in report["smooth_fit"]


def test_case_four_certificates(capped_b_gbm):
    b = capped_b_gbm
    p = capped_linear_b(a=0.5, alpha=1.5, c=2.5)
    theta = theta_from_payoffs(b.d, p)
    sol = solve_boundaries(b.d, b.pair, theta, p)
    assert sol.case_tag == "IV" and sol.k_infinity == pytest.approx(1.0, abs=1e-8)
    w = build_value_function(b.d, b.pair, p, theta, sol)
    report = verify_value_function(w, sol)
    assert report["ode_residual_max"] <= 1e-6
    assert report["intervention_residual_max"] <= 1e-6
    assert report["growth_surrogate"] <= 10.0 * sol.k_infinity + 1e-3


def test_entrance_advisory_regimes(sqrt_model):
    d = sqrt_model.d
    pair = sqrt_model.pair

    # small harvest-threshold parameter: boundary absorption sub-optimal
    p_a = exp_capped(gamma=0.5, kappa=0.3, c=1.0)
    th_a = theta_from_payoffs(d, p_a)
    sol_a = solve_boundaries(d, pair, th_a, p_a)
    w_a = build_value_function(d, pair, p_a, th_a, sol_a)
    adv_a = entrance_boundary_diagnostic(w_a, d, p_a)
    assert adv_a["at_zero"] == "entrance"
    assert adv_a["w_at_zero"] > 0.0
    assert not adv_a["switch_off_may_dominate"]

    # steep cap with a large fixed cost: absorption would dominate
    p_b = exp_capped(gamma=0.8, kappa=0.3, c=20.0)
    th_b = theta_from_payoffs(d, p_b)
    sol_b = solve_boundaries(d, pair, th_b, p_b)
    assert sol_b.case_tag == "II"
    w_b = build_value_function(d, pair, p_b, th_b, sol_b)
    adv_b = entrance_boundary_diagnostic(w_b, d, p_b)
    assert adv_b["w_at_zero"] < 0.0
    assert adv_b["switch_off_may_dominate"]
    # the solver still returns its candidate, flagged advisory
    report = verify_value_function(w_b, sol_b)
    assert report["advisory"]["switch_off_may_dominate"]


def test_natural_boundary_advisory_suppressed(solved_power):
    b, sol, w = solved_power
    adv = entrance_boundary_diagnostic(w, b.d, b.p)
    assert adv["at_zero"] == "natural"
    assert not adv["switch_off_may_dominate"]
    assert adv["identity_gap"] <= 1e-6                # w(0) = lim h/r


def test_ode_residual_vectorised(solved_power):
    b, sol, w = solved_power
    xs = np.array([0.5 * sol.beta_star, 2.0 * sol.beta_star])
    vals = ode_residual(w, xs)
    assert vals[0] == 0.0 and vals[1] < 0.0
