"""Monte Carlo validation of the threshold strategy against closed forms.

Simulates the controlled state under a (beta, gamma) policy — push the
state to gamma whenever it reaches beta from below — and estimates the
discounted performance criterion and intervention counts.  The analytic
counterparts (expected payoff, discounted intervention sum, per-cycle
discount factors) come from the resolvent module, so agreement within
sampling error certifies both sides.

Two engines share one set of semantics: a compiled kernel covering the
model/payoff catalogue (selected at import when available) and the numpy
fallback in mc_fallback, which also handles custom coefficients and full
path recording.  Paths draw from counter-based Philox streams keyed
(seed, path_index), so enlarging a run never reshuffles existing paths,
and estimates aggregate with exact summation so thread scheduling cannot
change results.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import mc_fallback
from .diffusion import DiffusionSpec, FundamentalPair
from .options import DEFAULT_OPTIONS, SolverOptions
from .payoffs import PayoffSpec
from .resolvent import ResolventTable, resolvent

try:
    from . import _simkernel
    HAVE_COMPILED_KERNEL = True
except ImportError:                 # pragma: no cover - build-dependent
    _simkernel = None
    HAVE_COMPILED_KERNEL = False

_MODEL_CODES = {"gbm": 0, "logistic": 1, "log-ou": 2, "mean-rev-sqrt": 3}
_PAYOFF_CODES = {"power": 0, "capped-linear-a": 1, "capped-linear-b": 2,
                 "exp-capped": 3, "piecewise-a": 4, "piecewise-b": 5}


@dataclass(frozen=True)
class StrategyBG:
    beta: float
    gamma: float

    def __post_init__(self):
        if not 0.0 < self.gamma < self.beta < math.inf:
            raise ValueError("strategy requires 0 < gamma < beta < inf")


@dataclass
class PathRecord:
    times: np.ndarray
    states: np.ndarray
    intervention_times: list
    discounted_running: float
    discounted_harvest: float
    discount_at_end: float
    horizon: float


@dataclass
class SimulationEstimate:
    mean: float
    std_error: float
    n_paths: int
    analytic_oracle: Optional[float] = None
    z_score: Optional[float] = None

    def attach_oracle(self, oracle: float):
        self.analytic_oracle = float(oracle)
        if self.std_error > 0.0:
            self.z_score = (self.mean - self.analytic_oracle) / self.std_error
        else:
            self.z_score = 0.0 if self.mean == self.analytic_oracle else math.inf
        return self


def horizon_steps(d: DiffusionSpec, dt: float, discount_eps: float = 1e-6):
    """Truncation horizon with e^{-r0 T} <= discount_eps, in grid steps."""
    T = math.log(1.0 / discount_eps) / d.r_floor
    return int(math.ceil(T / dt)), T


def kernel_codes(d: DiffusionSpec, p: PayoffSpec):
    """(model_id, mp, payoff_id, pp) for the compiled kernel, or None."""
    if d.model_tag not in _MODEL_CODES or p.tag not in _PAYOFF_CODES:
        return None
    q = d.params
    if d.model_tag == "gbm":
        mp = [q["b"], q["sigma"]]
    elif d.model_tag == "logistic":
        mp = [q["kappa"], q["gamma"], q["sigma"], q["ell"]]
    elif d.model_tag == "log-ou":
        a0 = q["kappa"] * q["gamma"] + 0.5 * q["sigma"] ** 2
        mp = [a0, q["kappa"], q["sigma"]]
    else:
        mp = [q["alpha"]]
    s = p.params
    if p.tag == "power":
        pp = [s["alpha"]]
    elif p.tag == "capped-linear-a":
        pp = [s["alpha"]]
    elif p.tag == "capped-linear-b":
        pp = [s["a"], s["alpha"]]
    elif p.tag == "exp-capped":
        cap = math.e + math.exp(s["gamma"]) - 1.0
        pp = [s["gamma"], s["kappa"], cap]
    else:
        pp = [0.0]
    return (_MODEL_CODES[d.model_tag], np.asarray(mp, dtype=float),
            _PAYOFF_CODES[p.tag], np.asarray(pp, dtype=float))


def _simulate(d, p, strat, x0, dt, n_steps, seed, path_start, n_paths,
              backend=None, record=False):
    codes = kernel_codes(d, p)
    use_compiled = (HAVE_COMPILED_KERNEL and codes is not None and not record
                    and backend != "numpy")
    if backend == "compiled" and not use_compiled:
        raise RuntimeError("compiled kernel unavailable for this configuration")
    if use_compiled:
        model, mp, payoff, pp = codes
        r0 = float(np.asarray(d.discount(np.array([x0]))).ravel()[0])
        return _simkernel.simulate_batch(model, mp, payoff, pp, strat.beta,
                                         strat.gamma, x0, r0, p.c, dt, n_steps,
                                         seed, path_start, n_paths)
    return mc_fallback.simulate_batch(d, p, strat.beta, strat.gamma, x0, dt,
                                      n_steps, seed, path_start, n_paths,
                                      record=record)


def simulate_paths(d, p, strat: StrategyBG, x0, dt, n_paths, seed,
                   threads: int = 1, backend=None, discount_eps: float = 1e-6):
    """Per-path summaries for n_paths paths, optionally thread-parallel.

    Results are index-stitched, so the output is identical for any thread
    count.
    """
    n_steps, T = horizon_steps(d, dt, discount_eps)
    if threads <= 1 or n_paths < 2 * threads:
        out = _simulate(d, p, strat, x0, dt, n_steps, seed, 0, n_paths,
                        backend=backend)
        out["horizon"] = T
        return out
    bounds = np.linspace(0, n_paths, threads + 1, dtype=int)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(
            lambda se: _simulate(d, p, strat, x0, dt, n_steps, seed,
                                 int(se[0]), int(se[1] - se[0]), backend=backend),
            zip(bounds[:-1], bounds[1:])))
    out = {k: np.concatenate([part[k] for part in parts])
           for k in parts[0] if isinstance(parts[0][k], np.ndarray)}
    out["horizon"] = T
    return out


def simulate_path(d: DiffusionSpec, strat: StrategyBG, x0, dt, seed, path_index,
                  p: PayoffSpec, discount_eps: float = 1e-6) -> PathRecord:
    """Full record of a single path (grid trace plus intervention times)."""
    n_steps, T = horizon_steps(d, dt, discount_eps)
    out = mc_fallback.simulate_batch(d, p, strat.beta, strat.gamma, x0, dt,
                                     n_steps, seed, path_index, 1, record=True)
    return PathRecord(
        times=out["times"],
        states=out["states"][0],
        intervention_times=list(out["intervention_times"][0]),
        discounted_running=float(out["running"][0]),
        discounted_harvest=float(out["harvest"][0]),
        discount_at_end=float(out["discount_at_end"][0]),
        horizon=T,
    )


def _estimate(values) -> SimulationEstimate:
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return SimulationEstimate(mean=mean, std_error=math.sqrt(var / n), n_paths=n)


def estimate_performance(d, p, strat: StrategyBG, x0, n_paths, dt, seed,
                         pair: Optional[FundamentalPair] = None,
                         threads: int = 1, backend=None) -> SimulationEstimate:
    """Mean discounted payoff across paths; oracle attached when a
    fundamental pair is supplied."""
    if n_paths < 100:
        raise ValueError("need n_paths >= 100")
    out = simulate_paths(d, p, strat, x0, dt, n_paths, seed,
                         threads=threads, backend=backend)
    est = _estimate(out["value"])
    if pair is not None:
        est.attach_oracle(analytic_performance(d, pair, p, strat, x0))
    return est


def run_simulation(d, p, strat: StrategyBG, x0, n_paths, dt, seed,
                   pair: Optional[FundamentalPair] = None,
                   threads: int = 1, backend=None):
    """One simulation pass with every estimator and its oracle."""
    if n_paths < 100:
        raise ValueError("need n_paths >= 100")
    out = simulate_paths(d, p, strat, x0, dt, n_paths, seed,
                         threads=threads, backend=backend)
    ests = {
        "performance": _estimate(out["value"]),
        "intervention_discount_sum": _estimate(out["disc_sum"]),
        "first_intervention_discount": _estimate(out["disc3"][:, 0]),
        "second_intervention_discount": _estimate(out["disc3"][:, 1]),
        "third_intervention_discount": _estimate(out["disc3"][:, 2]),
    }
    if pair is not None:
        ests["performance"].attach_oracle(analytic_performance(d, pair, p, strat, x0))
        ests["intervention_discount_sum"].attach_oracle(
            intervention_discount_sum(d, pair, strat, x0))
        for ell in range(3):
            key = ("first", "second", "third")[ell] + "_intervention_discount"
            ests[key].attach_oracle(cycle_discount(d, pair, strat, x0, ell))
    ests["mean_interventions"] = _estimate(out["n_interventions"].astype(float))
    return ests


# ---------------------------------------------------------------------------
# analytic oracles
# ---------------------------------------------------------------------------

def analytic_performance(d: DiffusionSpec, pair: FundamentalPair, p: PayoffSpec,
                         strat: StrategyBG, x0,
                         options: SolverOptions = DEFAULT_OPTIONS,
                         r_h: Optional[ResolventTable] = None) -> float:
    """Expected discounted payoff of the (beta, gamma) policy.

    For x0 >= beta the time-0 harvest is added and the process restarts
    at gamma.
    """
    beta, gamma = strat.beta, strat.gamma
    if r_h is None:
        r_h = resolvent(d, pair, p.h, kinks=p.kinks, options=options, label="h")
    if x0 >= beta:
        head = float(p.cum_k(np.asarray(x0)) - p.cum_k(np.asarray(gamma))) - p.c
        return head + analytic_performance(d, pair, p, strat, gamma,
                                           options=options, r_h=r_h)
    cycle = (float(r_h.value(gamma)) - float(r_h.value(beta))
             + float(p.cum_k(np.asarray(beta)) - p.cum_k(np.asarray(gamma))) - p.c)
    weight = float(pair.psi(x0)) / (float(pair.psi(beta)) - float(pair.psi(gamma)))
    return float(r_h.value(x0)) + weight * cycle


def intervention_discount_sum(d: DiffusionSpec, pair: FundamentalPair,
                              strat: StrategyBG, x0) -> float:
    """E sum of e^{-Lambda} over interventions = psi(x)/(psi(beta)-psi(gamma))."""
    if x0 >= strat.beta:
        return 1.0 + intervention_discount_sum(d, pair, strat, strat.gamma)
    return float(pair.psi(x0)) / (float(pair.psi(strat.beta))
                                  - float(pair.psi(strat.gamma)))


def cycle_discount(d: DiffusionSpec, pair: FundamentalPair, strat: StrategyBG,
                   x0, ell: int) -> float:
    """E e^{-Lambda at the (ell+1)-th intervention}
    = (psi(x)/psi(beta)) (psi(gamma)/psi(beta))^ell."""
    if x0 >= strat.beta:
        return 1.0 if ell == 0 else cycle_discount(d, pair, strat, strat.gamma,
                                                   ell - 1)
    head = float(pair.psi(x0)) / float(pair.psi(strat.beta))
    ratio = float(pair.psi(strat.gamma)) / float(pair.psi(strat.beta))
    return head * ratio ** ell


# ---------------------------------------------------------------------------
# discretisation-bias certificate
# ---------------------------------------------------------------------------

def refinement_bias_check(d, p, strat: StrategyBG, x0, pair: FundamentalPair,
                          dt: float = 0.01, n_paths: int = 20000, seed: int = 2024,
                          discount_eps: float = 1e-6):
    """Coupled runs at dt, dt/2, dt/4 against the analytic intervention sum.

    The observed bias of the discounted intervention sum must shrink when
    dt is quartered; the expected ratio for the half-order threshold
    crossing bias is 2.
    """
    n_coarse = int(math.ceil(math.log(1.0 / discount_eps) / d.r_floor / dt))
    out = mc_fallback.simulate_coupled(d, p, strat.beta, strat.gamma, x0, dt,
                                       n_coarse, seed, 0, n_paths)
    oracle = intervention_discount_sum(d, pair, strat, x0)
    bias = {m: math.fsum(out[m]["disc_sum"]) / n_paths - oracle for m in out}
    return {
        "oracle": oracle,
        "dt_levels": {m: dt / m for m in out},
        "bias": bias,
        "bias_ratio_dt_vs_quarter": abs(bias[1]) / abs(bias[4]),
    }
