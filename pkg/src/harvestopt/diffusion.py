"""Uncontrolled diffusion: coefficients, scale function, fundamental pair.

The state process lives on (0, inf) and follows dX = b(X) dt + sigma(X) dW
with a state-dependent discount rate r(X) >= r0 > 0.  Everything downstream
is built from the two positive solutions phi (decreasing) and psi
(increasing) of (1/2) sigma^2 w'' + b w' - r w = 0, the scale derivative
p'(x) = exp(-2 int_1^x b/sigma^2), and the densities

    Psi = 2 psi / (C sigma^2 p'),    Phi = 2 phi / (C sigma^2 p'),

where C p' is the (constant-normalised) Wronskian phi psi' - phi' psi.

phi/psi can span hundreds of orders of magnitude, so the pair is represented
in log space: log phi, log psi, and the logarithmic slopes s = x w'/w.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional

import numpy as np
from scipy.integrate import quad, solve_ivp

from .errors import (
    DiscountFloorViolated,
    InconclusiveClassification,
    NaturalBoundaryViolated,
    NonFiniteCoefficient,
    NonPositiveVolatility,
    QuadratureFailure,
    SolutionBranchAmbiguous,
)
from .options import DEFAULT_OPTIONS, SolverOptions

LN2 = math.log(2.0)

CATALOGUE_MODELS = {
    "gbm": ("b", "sigma", "r"),
    "logistic": ("kappa", "gamma", "sigma", "ell", "r"),
    "log-ou": ("kappa", "gamma", "sigma", "r"),
    "mean-rev-sqrt": ("alpha",),
}


@dataclass(frozen=True)
class DiffusionSpec:
    """Coefficients of the uncontrolled SDE plus declared discount bounds."""

    drift: Callable
    volatility: Callable
    discount: Callable
    r_floor: float
    r_cap: float
    model_tag: str = "custom"
    params: Mapping[str, float] = field(default_factory=dict)
    log_scale_prime_closed: Optional[Callable] = None
    validated: bool = False


def _as_array(x):
    return np.asarray(x, dtype=float)


def make_diffusion(spec: DiffusionSpec, options: SolverOptions = DEFAULT_OPTIONS) -> DiffusionSpec:
    """Validate a diffusion spec on a log-spaced probe grid.

    Checks sigma > 0, finiteness of b and sigma, and that the declared
    discount floor/cap actually bound r on the grid.  Returns the spec with
    ``validated=True``; raises otherwise.
    """
    if not (spec.r_floor > 0.0):
        raise DiscountFloorViolated(None, spec.r_floor, "positive")
    grid = np.geomspace(options.probe_lo, options.probe_hi, 121)
    b = _as_array(spec.drift(grid))
    s = _as_array(spec.volatility(grid))
    r = _as_array(spec.discount(grid))
    for name, vals in (("drift", b), ("volatility", s), ("discount", r)):
        bad = ~np.isfinite(vals)
        if bad.any():
            raise NonFiniteCoefficient(name, float(grid[bad][0]))
    nonpos = s <= 0.0
    if nonpos.any():
        raise NonPositiveVolatility(float(grid[nonpos][0]))
    tol = 1e-12 * max(1.0, spec.r_cap)
    low = r < spec.r_floor - tol
    if low.any():
        raise DiscountFloorViolated(float(grid[low][0]), float(r[low][0]), spec.r_floor)
    high = r > spec.r_cap + tol
    if high.any():
        raise DiscountFloorViolated(float(grid[high][0]), float(r[high][0]), spec.r_cap)
    return replace(spec, validated=True)


# ---------------------------------------------------------------------------
# model catalogue
# ---------------------------------------------------------------------------

def gbm(b: float, sigma: float, r: float, options: SolverOptions = DEFAULT_OPTIONS) -> DiffusionSpec:
    """Geometric Brownian motion dX = b X dt + sigma X dW, constant discount r."""
    two_b_over_s2 = 2.0 * b / sigma**2
    spec = DiffusionSpec(
        drift=lambda x: b * _as_array(x),
        volatility=lambda x: sigma * _as_array(x),
        discount=lambda x: np.full_like(_as_array(x), r, dtype=float),
        r_floor=r,
        r_cap=r,
        model_tag="gbm",
        params={"b": b, "sigma": sigma, "r": r},
        log_scale_prime_closed=lambda x: -two_b_over_s2 * np.log(_as_array(x)),
    )
    return make_diffusion(spec, options)


def logistic(kappa: float, gamma: float, sigma: float, ell: float, r: float,
             options: SolverOptions = DEFAULT_OPTIONS) -> DiffusionSpec:
    """Stochastic logistic growth dX = kappa (gamma - X) X dt + sigma X^ell dW."""
    if not 1.0 <= ell <= 1.5:
        raise ValueError("logistic model requires ell in [1, 3/2]")
    c = 2.0 * kappa / sigma**2

    def log_p_prime(x):
        x = _as_array(x)
        if ell == 1.0:
            i1 = np.log(x)
        else:
            i1 = (x ** (2.0 - 2.0 * ell) - 1.0) / (2.0 - 2.0 * ell)
        if ell == 1.5:
            i2 = np.log(x)
        else:
            i2 = (x ** (3.0 - 2.0 * ell) - 1.0) / (3.0 - 2.0 * ell)
        return -c * (gamma * i1 - i2)

    spec = DiffusionSpec(
        drift=lambda x: kappa * (gamma - _as_array(x)) * _as_array(x),
        volatility=lambda x: sigma * _as_array(x) ** ell,
        discount=lambda x: np.full_like(_as_array(x), r, dtype=float),
        r_floor=r,
        r_cap=r,
        model_tag="logistic",
        params={"kappa": kappa, "gamma": gamma, "sigma": sigma, "ell": ell, "r": r},
        log_scale_prime_closed=log_p_prime,
    )
    return make_diffusion(spec, options)


def log_ou(kappa: float, gamma: float, sigma: float, r: float,
           options: SolverOptions = DEFAULT_OPTIONS) -> DiffusionSpec:
    """Exponential Ornstein-Uhlenbeck: ln X mean-reverts to gamma at rate kappa."""
    a0 = kappa * gamma + 0.5 * sigma**2

    def drift(x):
        x = _as_array(x)
        return (a0 - kappa * np.log(x)) * x

    def log_p_prime(x):
        lx = np.log(_as_array(x))
        return -(2.0 / sigma**2) * (a0 * lx - 0.5 * kappa * lx**2)

    spec = DiffusionSpec(
        drift=drift,
        volatility=lambda x: sigma * _as_array(x),
        discount=lambda x: np.full_like(_as_array(x), r, dtype=float),
        r_floor=r,
        r_cap=r,
        model_tag="log-ou",
        params={"kappa": kappa, "gamma": gamma, "sigma": sigma, "r": r},
        log_scale_prime_closed=log_p_prime,
    )
    return make_diffusion(spec, options)


def mean_rev_sqrt(alpha: float, options: SolverOptions = DEFAULT_OPTIONS) -> DiffusionSpec:
    """Square-root mean reversion dX = alpha (2 - X) dt + sqrt(2 alpha X) dW, r = alpha.

    The single catalogue model whose lower boundary is an entrance point.
    """
    if alpha <= 0.0:
        raise ValueError("mean-rev-sqrt model requires alpha > 0")
    spec = DiffusionSpec(
        drift=lambda x: alpha * (2.0 - _as_array(x)),
        volatility=lambda x: np.sqrt(2.0 * alpha * _as_array(x)),
        discount=lambda x: np.full_like(_as_array(x), alpha, dtype=float),
        r_floor=alpha,
        r_cap=alpha,
        model_tag="mean-rev-sqrt",
        params={"alpha": alpha},
        log_scale_prime_closed=lambda x: (_as_array(x) - 1.0) - 2.0 * np.log(_as_array(x)),
    )
    return make_diffusion(spec, options)


def custom(drift, volatility, discount, r_floor, r_cap,
           options: SolverOptions = DEFAULT_OPTIONS) -> DiffusionSpec:
    """User-supplied coefficients; callables must accept numpy arrays."""
    spec = DiffusionSpec(
        drift=_vectorized(drift),
        volatility=_vectorized(volatility),
        discount=_vectorized(discount),
        r_floor=r_floor,
        r_cap=r_cap,
        model_tag="custom",
        params={},
    )
    return make_diffusion(spec, options)


def _vectorized(f):
    probe = np.array([0.5, 2.0])
    try:
        out = np.asarray(f(probe), dtype=float)
        if out.shape == probe.shape:
            return f
    except Exception:
        pass
    vf = np.vectorize(f, otypes=[float])
    return lambda x: vf(_as_array(x))


# ---------------------------------------------------------------------------
# scale function
# ---------------------------------------------------------------------------

def log_scale_prime(d: DiffusionSpec, x):
    """ln p'(x) with p'(x) = exp(-2 int_1^x b/sigma^2); p'(1) = 1 exactly."""
    if d.log_scale_prime_closed is not None:
        return d.log_scale_prime_closed(x)
    x_arr = np.atleast_1d(_as_array(x))
    out = np.empty_like(x_arr)

    def integrand(s):
        return d.drift(s) / d.volatility(s) ** 2

    for i, xi in enumerate(x_arr):
        val, err = quad(integrand, 1.0, xi, epsabs=1e-12, epsrel=1e-11, limit=400)
        if not np.isfinite(val) or err > 1e-7 * (1.0 + abs(val)):
            raise QuadratureFailure(f"scale integral did not converge at x={xi!r}")
        out[i] = -2.0 * val
    return out if np.ndim(x) else float(out[0])


def scale_derivative(d: DiffusionSpec, x):
    """p'(x), strictly positive; computed through the log form."""
    return np.exp(log_scale_prime(d, x))


# ---------------------------------------------------------------------------
# fundamental pair
# ---------------------------------------------------------------------------

class FundamentalPair:
    """Log-space representation of the fundamental solutions phi and psi.

    ``log_phi``/``log_psi`` return ln phi / ln psi; ``s_phi``/``s_psi`` the
    logarithmic slopes x w'/w (s_phi < 0 < s_psi).  All derived quantities
    (Wronskian density, big Phi/Psi, psi'/(C p')) are assembled in log space
    so that extreme state values do not overflow.  Instances are immutable
    and safe to share across threads.
    """

    def __init__(self, d, log_phi, s_phi, log_psi, s_psi, C, normalization):
        self.diffusion = d
        self.log_phi = log_phi
        self.s_phi = s_phi
        self.log_psi = log_psi
        self.s_psi = s_psi
        self.wronskian_c = float(C)
        self.normalization = normalization

    # plain-scale accessors -------------------------------------------------
    def phi(self, x):
        with np.errstate(over="ignore"):
            return np.exp(self.log_phi(x))

    def psi(self, x):
        with np.errstate(over="ignore"):
            return np.exp(self.log_psi(x))

    def phi_prime(self, x):
        x = _as_array(x)
        return self.phi(x) * self.s_phi(x) / x

    def psi_prime(self, x):
        x = _as_array(x)
        return self.psi(x) * self.s_psi(x) / x

    # log-space composites ----------------------------------------------------
    def _log_density_denominator(self, x):
        # ln(C sigma^2 p')
        d = self.diffusion
        return (math.log(self.wronskian_c) + 2.0 * np.log(d.volatility(x))
                + log_scale_prime(d, x))

    def log_big_psi(self, x):
        return LN2 + self.log_psi(x) - self._log_density_denominator(x)

    def log_big_phi(self, x):
        return LN2 + self.log_phi(x) - self._log_density_denominator(x)

    def big_psi(self, x):
        return np.exp(self.log_big_psi(x))

    def big_phi(self, x):
        return np.exp(self.log_big_phi(x))

    def log_psi_prime_over_cp(self, x):
        # ln( psi'/(C p') ), finite wherever psi' > 0
        x = _as_array(x)
        d = self.diffusion
        return (self.log_psi(x) + np.log(self.s_psi(x)) - np.log(x)
                - math.log(self.wronskian_c) - log_scale_prime(d, x))

    def psi_prime_over_cp(self, x):
        return np.exp(self.log_psi_prime_over_cp(x))

    def phi_prime_over_cp(self, x):
        # phi'/(C p'), negative
        x = _as_array(x)
        d = self.diffusion
        return -np.exp(self.log_phi(x) + np.log(-self.s_phi(x)) - np.log(x)
                       - math.log(self.wronskian_c) - log_scale_prime(d, x))

    def wronskian_residual(self, x):
        """Relative defect of phi psi' - phi' psi = C p' at x."""
        x = _as_array(x)
        lhs = (self.log_phi(x) + self.log_psi(x)
               + np.log(self.s_psi(x) - self.s_phi(x)) - np.log(x))
        rhs = math.log(self.wronskian_c) + log_scale_prime(self.diffusion, x)
        return np.abs(np.expm1(lhs - rhs))


def _gbm_pair(d: DiffusionSpec) -> FundamentalPair:
    b, sigma, r = d.params["b"], d.params["sigma"], d.params["r"]
    half_shift = 0.5 - b / sigma**2
    root = math.sqrt(half_shift**2 + 2.0 * r / sigma**2)
    m, n = half_shift - root, half_shift + root
    return FundamentalPair(
        d,
        log_phi=lambda x: m * np.log(_as_array(x)),
        s_phi=lambda x: np.full_like(_as_array(x), m, dtype=float),
        log_psi=lambda x: n * np.log(_as_array(x)),
        s_psi=lambda x: np.full_like(_as_array(x), n, dtype=float),
        C=n - m,
        normalization="textbook powers x^m, x^n (equal to 1 at x=1)",
    )


def gbm_exponents(d: DiffusionSpec):
    """The negative/positive roots m < 0 < n of the GBM characteristic equation."""
    if d.model_tag != "gbm":
        raise ValueError("gbm_exponents requires a gbm-tagged spec")
    pair = _gbm_pair(d)
    return float(pair.s_phi(1.0)), float(pair.s_psi(1.0))


def _mean_rev_sqrt_pair(d: DiffusionSpec) -> FundamentalPair:
    # phi = 1/x, psi = (e^x - 1)/x, C = e

    def log_psi(x):
        x = _as_array(x)
        small = x < 30.0
        out = np.where(
            small,
            np.log(np.expm1(np.minimum(x, 30.0))),
            x + np.log1p(-np.exp(-np.maximum(x, 1.0))),
        )
        return out - np.log(x)

    def s_psi(x):
        # x psi'/psi = (x - 1) + x/(e^x - 1); the two pieces cancel to O(x)
        # near 0, so switch to the Bernoulli series there
        x = _as_array(x)
        direct = (x - 1.0) + x / np.expm1(np.minimum(np.maximum(x, 1e-3), 700.0))
        series = 0.5 * x + x * x / 12.0 - x ** 4 / 720.0
        return np.where(x < 1e-3, series, direct)

    return FundamentalPair(
        d,
        log_phi=lambda x: -np.log(_as_array(x)),
        s_phi=lambda x: np.full_like(_as_array(x), -1.0, dtype=float),
        log_psi=log_psi,
        s_psi=s_psi,
        C=math.e,
        normalization="textbook forms 1/x and (e^x - 1)/x",
    )


def _frozen_roots(d: DiffusionSpec, x):
    """Roots of the frozen-coefficient slope equation s^2 - (1-B)s - A = 0."""
    x = _as_array(x)
    sig2 = d.volatility(x) ** 2
    A = 2.0 * x * x * d.discount(x) / sig2
    B = 2.0 * x * d.drift(x) / sig2
    disc = np.sqrt((1.0 - B) ** 2 + 4.0 * A)
    return 0.5 * ((1.0 - B) - disc), 0.5 * ((1.0 - B) + disc)


def _numeric_pair(d: DiffusionSpec, options: SolverOptions) -> FundamentalPair:
    """Construct phi/psi by integrating the slope (Riccati) equation.

    On the log axis u = ln x, s(u) = x w'/w obeys

        s' = A(u) - s^2 + (1 - B(u)) s,
        A = 2 x^2 r / sigma^2,  B = 2 x b / sigma^2.

    Integrating rightward the increasing branch is the attractor, leftward the
    decreasing one, so shooting from the far ends with the frozen-coefficient
    root as initial slope converges onto psi and phi respectively; any
    contamination by the other branch decays like phi/psi between the start
    point and the evaluation point.  Both are normalised to 1 at x = 1.

    psi can grow as fast as the scale derivative (ln psi ~ x for square-root
    mean reversion), which would let the integrator's relative tolerance leak
    absolute error into ln psi.  The second component for psi is therefore
    Y = ln psi - ln p', whose slope s_psi + B stays moderate; ln p' is
    restored analytically at evaluation time and cancels exactly in the
    Wronskian identity.  phi is slowly varying toward infinity and only
    power-like toward 0, so its log is integrated directly.
    """
    u_lo, u_hi = math.log(options.ode_lo), math.log(options.ode_hi)

    def _ab(u):
        x = math.exp(u)
        sig2 = d.volatility(x) ** 2
        A = 2.0 * x * x * d.discount(x) / sig2
        B = 2.0 * x * d.drift(x) / sig2
        return float(A), float(B)

    def rhs_psi(u, y):
        A, B = _ab(u)
        s = y[0]
        return (A - s * s + (1.0 - B) * s, s + B)

    def rhs_phi(u, y):
        A, B = _ab(u)
        s = y[0]
        return (A - s * s + (1.0 - B) * s, s)

    def jac(u, y):
        _, B = _ab(u)
        return np.array([[-2.0 * y[0] + 1.0 - B, 0.0], [1.0, 0.0]])

    m_lo, n_lo = _frozen_roots(d, math.exp(u_lo))
    m_hi, n_hi = _frozen_roots(d, math.exp(u_hi))

    # LSODA because the attractor stiffens wherever the frozen roots grow
    # (e.g. square-root mean reversion at large x, where s_psi ~ x).
    kw = dict(method="LSODA", dense_output=True, jac=jac,
              rtol=options.ode_rtol, atol=options.ode_atol)
    psi_sol = solve_ivp(rhs_psi, (u_lo, u_hi), [float(n_lo), 0.0], **kw)
    phi_sol = solve_ivp(rhs_phi, (u_hi, u_lo), [float(m_hi), 0.0], **kw)
    if not (psi_sol.success and phi_sol.success):
        raise SolutionBranchAmbiguous(
            f"slope integration failed: {psi_sol.message} / {phi_sol.message}")

    u_check = np.linspace(u_lo, u_hi, 400)
    s_psi_chk = psi_sol.sol(u_check)[0]
    s_phi_chk = phi_sol.sol(u_check)[0]
    if s_psi_chk.min() < -1e-9 or s_phi_chk.max() > 1e-9:
        raise SolutionBranchAmbiguous(
            "monotone solution branches not separated on the solve range")

    y_psi_1 = float(psi_sol.sol(0.0)[1])
    ln_phi_1 = float(phi_sol.sol(0.0)[1])
    C = float(psi_sol.sol(0.0)[0] - phi_sol.sol(0.0)[0])
    if C <= 0.0:
        raise SolutionBranchAmbiguous("nonpositive Wronskian constant")

    def _dense(sol, offset, comp):
        def f(x):
            u = np.log(_as_array(x))
            u_clip = np.clip(u, u_lo, u_hi)
            if np.any(np.abs(u - u_clip) > 1e-9):
                raise ValueError("fundamental pair evaluated outside solve range")
            vals = sol.sol(np.atleast_1d(u_clip))[comp]
            out = vals - offset if comp == 1 else vals
            return out.reshape(np.shape(u)) if np.ndim(x) else float(out[0])
        return f

    y_psi = _dense(psi_sol, y_psi_1, 1)

    def log_psi(x):
        return y_psi(x) + log_scale_prime(d, x)

    return FundamentalPair(
        d,
        log_phi=_dense(phi_sol, ln_phi_1, 1),
        s_phi=_dense(phi_sol, 0.0, 0),
        log_psi=log_psi,
        s_psi=_dense(psi_sol, 0.0, 0),
        C=C,
        normalization="numerical, phi(1) = psi(1) = 1",
    )


def fundamental_solutions(d: DiffusionSpec, options: SolverOptions = DEFAULT_OPTIONS,
                          method: str = "auto") -> FundamentalPair:
    """Closed-form pair for catalogue models, numerical construction otherwise.

    method: "auto" (catalogue if available), "closed", or "numeric".
    """
    if not d.validated:
        d = make_diffusion(d, options)
    if method not in ("auto", "closed", "numeric"):
        raise ValueError(f"unknown method {method!r}")
    if method != "numeric":
        if d.model_tag == "gbm":
            return _gbm_pair(d)
        if d.model_tag == "mean-rev-sqrt":
            return _mean_rev_sqrt_pair(d)
        if method == "closed":
            raise ValueError(f"no closed-form pair for model {d.model_tag!r}")
    return _numeric_pair(d, options)


# ---------------------------------------------------------------------------
# boundary classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundaryReport:
    at_zero: str                 # "natural" | "entrance"
    at_infinity: str
    diagnostics: dict


def _aitken(seq):
    """Aitken delta-squared extrapolation of the last three terms."""
    a0, a1, a2 = seq[-3], seq[-2], seq[-1]
    denom = (a2 - a1) - (a1 - a0)
    if denom == 0.0 or not np.isfinite(denom):
        return a2
    return a2 - (a2 - a1) ** 2 / denom


def classify_boundaries(d: DiffusionSpec, pair: FundamentalPair,
                        options: SolverOptions = DEFAULT_OPTIONS) -> BoundaryReport:
    """Classify 0 and infinity as natural or entrance from probe limits.

    Near 0 the primary diagnostic is lim psi (0 for natural, positive for
    entrance); phi'/p' corroborates (divergent vs stabilised).  Near infinity
    the mirrored quantities are phi and psi'/p'.  Problems whose upper
    boundary is not natural are rejected.
    """
    ks = np.arange(2, 9)
    x0 = 10.0 ** (-ks.astype(float))
    xi = 10.0 ** (ks.astype(float))

    psi0 = pair.psi(x0)
    log_phi_sl0 = (pair.log_phi(x0) + np.log(-pair.s_phi(x0)) - np.log(x0)
                   - log_scale_prime(d, x0))
    phi_sl0 = -np.exp(log_phi_sl0)                      # phi'/p' near 0
    psi_sl0 = np.exp(pair.log_psi(x0) + np.log(pair.s_psi(x0)) - np.log(x0)
                     - log_scale_prime(d, x0))          # psi'/p' near 0

    phi_inf = pair.phi(xi)
    psi_sl_inf = np.exp(pair.log_psi(xi) + np.log(pair.s_psi(xi)) - np.log(xi)
                        - log_scale_prime(d, xi))
    phi_sl_inf = -np.exp(pair.log_phi(xi) + np.log(-pair.s_phi(xi)) - np.log(xi)
                         - log_scale_prime(d, xi))

    at_zero = _classify_end(
        primary=psi0, reference=float(pair.psi(1.0)),
        corroborate=np.abs(phi_sl0), options=options, end="zero",
    )
    at_inf = _classify_end(
        primary=phi_inf, reference=float(pair.phi(1.0)),
        corroborate=np.abs(psi_sl_inf), options=options, end="infinity",
    )

    # psi must diverge at a natural upper boundary
    if at_inf == "natural" and not (pair.psi(1e8) > 1e3 * pair.psi(1.0)):
        raise NaturalBoundaryViolated("lim psi at infinity appears finite")
    if at_inf != "natural":
        raise NaturalBoundaryViolated(
            "upper boundary classified as entrance; the solver requires it natural")

    diagnostics = {
        "probe_zero": x0.tolist(),
        "psi_near_zero": psi0.tolist(),
        "phi_prime_over_p_prime_near_zero": phi_sl0.tolist(),
        "psi_prime_over_p_prime_near_zero": psi_sl0.tolist(),
        "probe_infinity": xi.tolist(),
        "phi_near_infinity": phi_inf.tolist(),
        "psi_prime_over_p_prime_near_infinity": psi_sl_inf.tolist(),
        "phi_prime_over_p_prime_near_infinity": phi_sl_inf.tolist(),
    }
    return BoundaryReport(at_zero=at_zero, at_infinity=at_inf, diagnostics=diagnostics)


def _classify_end(primary, reference, corroborate, options, end):
    """Shared natural/entrance decision for one boundary.

    ``primary`` is psi toward 0 (phi toward infinity) sampled over decades
    moving toward the boundary; it vanishes at a natural boundary and
    stabilises at a positive value at an entrance one.  The corroborating
    derivative ratio diverges at a natural boundary and stabilises at an
    entrance one; it breaks the tie when the primary decays too slowly for
    the threshold test (logarithmic decay does occur, e.g. for the
    exponential-OU model toward infinity).
    """
    v = np.asarray(primary, dtype=float)
    lim = _aitken(v)
    decreasing = bool(np.all(np.diff(v) < 0.0))
    prim_stable = bool(
        np.all(np.abs(np.diff(v[-3:])) <= options.entrance_stabil_rtol * np.abs(v[-1])))
    prim_vanishes = abs(lim) < options.natural_zero_factor * reference

    c = np.asarray(corroborate, dtype=float)
    ratios = c[1:] / c[:-1]
    corr_grows = bool(np.all(ratios[-3:] >= 1.0 + 5.0 * options.entrance_stabil_rtol))
    corr_stable = bool(np.all(np.abs(ratios[-3:] - 1.0) <= 2.0 * options.entrance_stabil_rtol))

    if (prim_vanishes or (decreasing and not prim_stable)) and corr_grows:
        return "natural"
    if prim_stable and not prim_vanishes and corr_stable:
        return "entrance"
    raise InconclusiveClassification(
        f"{end}: probes neither vanish nor stabilise consistently across decades "
        f"(primary limit estimate {lim!r}, corroborating ratios {ratios[-3:].tolist()!r})")
