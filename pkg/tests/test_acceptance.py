"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines as they complete.  Tolerances are pinned here and nowhere else.
"""
import math
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from harvestopt import (
    StrategyBG,
    capped_linear_a,
    capped_linear_b,
    classify_boundaries,
    exp_capped,
    fundamental_solutions,
    gbm,
    mean_rev_sqrt,
    piecewise_a,
    piecewise_b,
    power_payoff,
    q_theta,
    refinement_bias_check,
    resolvent,
    run_simulation,
    solve_boundaries,
    sweep_c,
    theta_from_payoffs,
)
from harvestopt.boundary import analysis
from harvestopt.diffusion import gbm_exponents
from harvestopt.resolvent import theta_table
from harvestopt.valuefn import build_value_function, verify_value_function

MC_SEEDS = (11, 12, 13, 14, 15)      # frozen fixtures for criterion 6


def _report(criterion, ok, detail, elapsed, budget):
    status = "PASS" if ok and elapsed < budget else "FAIL"
    print(f"\nACCEPTANCE {criterion}: {status} ({elapsed:.1f}s/{budget:.0f}s) {detail}")
    assert ok, detail
    assert elapsed < budget, f"runtime {elapsed:.1f}s over budget {budget}s"


def test_criterion_1_quartic_structure():
    """Exponent pair exact, Q limits at 1e4 within 1e-3, threshold-existence
    split between the two quartic payoffs."""
    t0 = time.time()
    d = gbm(b=0.25, sigma=1.0 / math.sqrt(2.0), r=1.0)
    assert gbm_exponents(d) == (-2.0, 2.0)
    pair = fundamental_solutions(d)
    th_a = theta_from_payoffs(d, piecewise_a(c=0.1))
    th_b = theta_from_payoffs(d, piecewise_b(c=0.1))
    q_a = q_theta(d, pair, th_a, 1e4)
    q_b = q_theta(d, pair, th_b, 1e4)
    ok = abs(q_a + 1.0 / 6.0) < 1e-3 and abs(q_b - 1.0 / 6.0) < 1e-3
    x_lo_a = analysis(d, pair, th_a).x_lower()
    x_lo_b = analysis(d, pair, th_b).x_lower()
    ok &= (x_lo_a == math.inf) and math.isfinite(x_lo_b)
    _report(1, ok,
            f"m,n exact; Q(1e4) = {q_a:+.6f}/{q_b:+.6f}; "
            f"x_lower = {x_lo_a}/{x_lo_b:.4f}",
            time.time() - t0, 10.0)


def test_criterion_2_power_resolvent_closed_form():
    """Numerical R_Theta vs (8/9) sqrt(x) - x at 1e-6 relative error."""
    t0 = time.time()
    d = gbm(b=0.0, sigma=1.0, r=1.0)
    pair = fundamental_solutions(d)
    theta = theta_from_payoffs(d, power_payoff(alpha=0.5, c=0.1))
    table = theta_table(d, pair, theta)
    x = np.geomspace(0.01, 100.0, 50)
    exact = (8.0 / 9.0) * np.sqrt(x) - x
    rel = float(np.max(np.abs(table.value(x) - exact) / np.abs(exact)))
    _report(2, rel <= 1e-6, f"max rel err {rel:.2e} over 50 points",
            time.time() - t0, 10.0)


def test_criterion_3_sqrt_model_numeric_pair():
    """Numerical fundamental pair vs 1/x and (e^x - 1)/x at 1e-5 after
    normalisation; entrance classification at 0."""
    t0 = time.time()
    d = mean_rev_sqrt(alpha=1.0)
    closed = fundamental_solutions(d, method="closed")
    numeric = fundamental_solutions(d, method="numeric")
    x = np.geomspace(0.05, 20.0, 60)
    scale = float(closed.psi(1.0))
    rel_psi = float(np.max(np.abs(numeric.psi(x) * scale / closed.psi(x) - 1.0)))
    rel_phi = float(np.max(np.abs(numeric.phi(x) / closed.phi(x) - 1.0)))
    rep = classify_boundaries(d, numeric)
    ok = rel_psi <= 1e-5 and rel_phi <= 1e-5 and rep.at_zero == "entrance"
    _report(3, ok, f"psi {rel_psi:.2e}, phi {rel_phi:.2e}, zero = {rep.at_zero}",
            time.time() - t0, 30.0)


def _case_sequence(rows):
    return [r.case_tag or "err" for r in rows]


def test_criterion_4_case_transition_sweeps():
    """Case sequences I->II->III and I->II->IV with the upper threshold at
    its closed-form location within 1e-3."""
    t0 = time.time()
    d6 = gbm(b=0.5, sigma=0.5, r=0.25)
    pair6 = fundamental_solutions(d6)
    p6 = capped_linear_a(alpha=0.5, c=1.0)
    th6 = theta_from_payoffs(d6, p6)
    rows6 = sweep_c(d6, pair6, th6, p6, np.geomspace(0.05, 8.0, 12))
    seq6 = _case_sequence(rows6)
    c_circ_6 = analysis(d6, pair6, th6).c_circ()
    closed6 = 3.0 + 0.5 / 0.25
    ok6 = (seq6 == sorted(seq6, key=("I", "II", "III").index)
           and {"I", "II", "III"} == set(seq6)
           and abs(c_circ_6 - closed6) < 1e-3)
    # rows straddling the threshold flip cases exactly there
    below = [r for r in rows6 if r.c < closed6]
    above = [r for r in rows6 if r.c > closed6]
    ok6 &= all(r.case_tag in ("I", "II") for r in below)
    ok6 &= all(r.case_tag == "III" for r in above)

    d7 = gbm(b=0.5, sigma=0.5, r=0.5)
    pair7 = fundamental_solutions(d7)
    p7 = capped_linear_b(a=0.5, alpha=1.5, c=1.0)
    th7 = theta_from_payoffs(d7, p7)
    rows7 = sweep_c(d7, pair7, th7, p7, np.geomspace(0.05, 8.0, 12))
    seq7 = _case_sequence(rows7)
    c_circ_7 = analysis(d7, pair7, th7).c_circ()
    closed7 = 3.0 - 0.5 / 0.5
    ok7 = (seq7 == sorted(seq7, key=("I", "II", "IV").index)
           and {"I", "II", "IV"} == set(seq7)
           and abs(c_circ_7 - closed7) < 1e-3)
    ok7 &= all(r.case_tag in ("I", "II") for r in rows7 if r.c < closed7)
    ok7 &= all(r.case_tag == "IV" for r in rows7 if r.c > closed7)

    _report(4, ok6 and ok7,
            f"sequences {seq6} / {seq7}; c_circ {c_circ_6:.6f} vs {closed6} "
            f"and {c_circ_7:.6f} vs {closed7}",
            time.time() - t0, 240.0)


def test_criterion_5_hjb_certificates():
    """Every interior-pair solve: residual maxima and smooth fit at 1e-6,
    plus a two-stage 500x500 grid-search oracle within 1e-3."""
    t0 = time.time()
    problems = [
        ("power-gbm", gbm(b=0.0, sigma=1.0, r=1.0), power_payoff(alpha=0.5, c=0.1)),
        ("capped-a", gbm(b=0.5, sigma=0.5, r=0.25), capped_linear_a(alpha=0.5, c=0.05)),
        ("capped-b", gbm(b=0.5, sigma=0.5, r=0.5),
         capped_linear_b(a=0.5, alpha=1.5, c=0.05)),
        ("sqrt-exp", mean_rev_sqrt(alpha=1.0), exp_capped(gamma=0.5, kappa=0.3, c=1.0)),
    ]
    details = []
    ok = True
    for name, d, p in problems:
        t_problem = time.time()
        pair = fundamental_solutions(d)
        theta = theta_from_payoffs(d, p)
        sol = solve_boundaries(d, pair, theta, p)
        assert sol.case_tag == "I", name
        w = build_value_function(d, pair, p, theta, sol)
        rep = verify_value_function(w, sol)
        good = (rep["ode_residual_max"] <= 1e-6
                and rep["intervention_residual_max"] <= 1e-6
                and all(g <= 1e-6 for g in rep["smooth_fit"].values()))

        ws = analysis(d, pair, theta)
        g_bf, b_bf = _grid_search(ws, p.c, sol)
        good &= abs(g_bf - sol.gamma_star) < 1e-3 and abs(b_bf - sol.beta_star) < 1e-3
        ok &= good
        details.append(f"{name}: res {max(rep['ode_residual_max'], rep['intervention_residual_max']):.1e}, "
                       f"oracle gap {max(abs(g_bf - sol.gamma_star), abs(b_bf - sol.beta_star)):.1e}, "
                       f"{time.time() - t_problem:.0f}s")
        assert time.time() - t_problem < 60.0, f"{name} over the 1-minute budget"
    _report(5, ok, "; ".join(details), time.time() - t0, 240.0)


def _grid_search(ws, c, sol):
    """Coarse-plus-refine 500x500 search minimising the boundary-system
    residuals; independent of the solver's bisection path."""
    xl = ws.x_lower()
    rho = lambda v: np.array([float(ws.table.rho(float(x))) for x in np.atleast_1d(v)])
    G = lambda v: np.array([float(ws.table.g(float(x))) for x in np.atleast_1d(v)])

    def stage(g_lo, g_hi, b_lo, b_hi, n=500):
        gs = np.geomspace(g_lo, g_hi, n)
        bs = np.geomspace(b_lo, b_hi, n)
        rg, rb = rho(gs), rho(bs)
        gg, gb = G(gs), G(bs)
        r1 = np.abs(rg[:, None] - rb[None, :])
        r2 = np.abs(gb[None, :] - gg[:, None] + c)
        i, j = np.unravel_index(np.argmin(np.maximum(r1, r2)), r1.shape)
        return gs[i], bs[j]

    xu = ws.x_upper()
    b_hi = min(xu * 0.999, 50.0 * xl) if math.isfinite(xu) else 50.0 * xl
    g1, b1 = stage(xl * 1e-2, xl, xl, b_hi, n=120)
    g2, b2 = stage(0.8 * g1, min(1.25 * g1, xl), max(0.8 * b1, xl), 1.25 * b1, n=120)
    return stage(0.98 * g2, min(1.02 * g2, xl), max(0.98 * b2, xl), 1.02 * b2)


def test_criterion_6_monte_carlo_agreement():
    """Discounted intervention sum, first-cycle discount and performance vs
    their closed forms at n = 10^4 paths, dt = 1e-4, five frozen seeds;
    quartering dt shows the half-order bias ratio."""
    t0 = time.time()
    d = gbm(b=0.25, sigma=1.0 / math.sqrt(2.0), r=1.0)
    pair = fundamental_solutions(d)
    p = piecewise_a(c=0.1)
    strat = StrategyBG(beta=2.0, gamma=1.0)

    def one(seed):
        ests = run_simulation(d, p, strat, 1.5, 10000, 1e-4, seed, pair=pair)
        return seed, ests

    with ThreadPoolExecutor(max_workers=2) as pool:
        results = list(pool.map(one, MC_SEEDS))

    ok = True
    worst = 0.0
    for seed, ests in results:
        for key in ("performance", "intervention_discount_sum",
                    "first_intervention_discount"):
            z = ests[key].z_score
            worst = max(worst, abs(z))
            ok &= abs(z) <= 3.0

    oracle_sum = results[0][1]["intervention_discount_sum"].analytic_oracle
    oracle_first = results[0][1]["first_intervention_discount"].analytic_oracle
    ok &= abs(oracle_sum - 0.75) < 1e-12
    ok &= abs(oracle_first - 0.5625) < 1e-12

    bias = refinement_bias_check(d, p, strat, 1.5, pair, dt=0.01,
                                 n_paths=20000, seed=5)
    ratio = bias["bias_ratio_dt_vs_quarter"]
    ok &= 1.5 <= ratio <= 3.0
    _report(6, ok, f"worst |z| = {worst:.2f} over {len(MC_SEEDS)} seeds; "
                   f"bias ratio {ratio:.2f}", time.time() - t0, 300.0)


def test_criterion_7_property_suite():
    """Identity and monotonicity battery with pinned tolerances."""
    t0 = time.time()
    details = []

    d9 = gbm(b=0.25, sigma=1.0 / math.sqrt(2.0), r=1.0)
    pair9 = fundamental_solutions(d9)
    d5 = gbm(b=0.0, sigma=1.0, r=1.0)
    pair5 = fundamental_solutions(d5)
    d8 = mean_rev_sqrt(alpha=1.0)
    pair8 = fundamental_solutions(d8)

    grid = np.geomspace(1e-4, 1e4, 120)
    wron = max(pair9.wronskian_residual(grid).max(),
               pair5.wronskian_residual(grid).max(),
               pair8.wronskian_residual(grid).max(),
               fundamental_solutions(d9, method="numeric").wronskian_residual(grid).max(),
               fundamental_solutions(d8, method="numeric").wronskian_residual(grid).max())
    ok = wron <= 1e-8
    details.append(f"wronskian {wron:.1e}")

    xs = np.geomspace(1e-3, 1e3, 25)
    r_unit = max(np.max(np.abs(resolvent(d, pr, d.discount, label="r").value(xs) - 1.0))
                 for d, pr in ((d9, pair9), (d5, pair5)))
    ok &= r_unit <= 1e-9
    g_const = max(np.max(np.abs(resolvent(d, pr, lambda x: 2.5 * d.discount(x),
                                          label="Kr").g(xs) - 2.5))
                  for d, pr in ((d9, pair9), (d5, pair5)))
    ok &= g_const <= 1e-9
    details.append(f"R_r {r_unit:.1e}, G_const {g_const:.1e}")

    th9 = theta_from_payoffs(d9, piecewise_a(c=0.1))
    qs = np.array([q_theta(d9, pair9, th9, float(x))
                   for x in np.geomspace(th9.xi, 50.0, 15)])
    ok &= bool(np.all(np.diff(qs) > 0.0))
    details.append("Q strictly increasing past the mode")

    p5 = power_payoff(alpha=0.5, c=0.1)
    th5 = theta_from_payoffs(d5, p5)
    rows = sweep_c(d5, pair5, th5, p5, np.geomspace(0.01, 5.0, 8))
    betas = [r.beta for r in rows]
    gammas = [r.gamma for r in rows]
    ok &= all(b2 > b1 for b1, b2 in zip(betas, betas[1:]))
    ok &= all(g2 < g1 for g1, g2 in zip(gammas, gammas[1:]))
    details.append("sweep monotone")

    # sharply curved problem resolves the vanishing-cost limit at 1e-3
    p_sharp = power_payoff(alpha=0.01, c=1e-6)
    th_sharp = theta_from_payoffs(d5, p_sharp)
    sol_sharp = solve_boundaries(d5, pair5, th_sharp, p_sharp)
    xl = sol_sharp.structural.x_lower
    gap = max(abs(sol_sharp.beta_star - xl), abs(sol_sharp.gamma_star - xl))
    ok &= gap <= 1e-3
    details.append(f"c->0 gap {gap:.1e}")

    # classification invariant under a discount-proportional payoff shift
    from harvestopt import custom_payoff
    K_shift = 1.7
    p_shift = custom_payoff(
        h=lambda x: p5.h(x) + K_shift * d5.discount(np.asarray(x, dtype=float)),
        k=p5.k, k_prime=p5.k_prime, cum_k=p5.cum_k, c=p5.c,
        h_over_r_zero_limit=K_shift)
    th_shift = theta_from_payoffs(d5, p_shift)
    sol0 = solve_boundaries(d5, pair5, th5, p5)
    sol1 = solve_boundaries(d5, pair5, th_shift, p_shift)
    inv = max(abs(sol1.beta_star - sol0.beta_star),
              abs(sol1.gamma_star - sol0.gamma_star),
              abs(sol1.structural.x_lower - sol0.structural.x_lower))
    ok &= inv <= 1e-6
    details.append(f"shift invariance {inv:.1e}")

    _report(7, ok, "; ".join(details), time.time() - t0, 120.0)
