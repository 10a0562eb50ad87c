"""Resolvent machinery: Theta, R_F tables, G_F, Q_F and limit probes.

For an integrable payoff-like function F the discounted-expectation operator
has the two-integral presentation

    R_F(x) = phi(x) * int_0^x F Psi  +  psi(x) * int_x^inf F Phi,

with derivative phi' L + psi' U (the cross terms cancel against the
Wronskian).  Everything the free-boundary analysis needs reduces to the two
cumulatives L and U together with the ratio rho = R_F'/psi':

    G_F(x) = R_F - rho psi = C p'/psi' * L(x)
    Q_F(x) = L(x) - (F/r)(x) * psi'/(C p')

Both integrals run over panels of a log-spaced grid (split at payoff kinks)
with nested Gauss-Legendre rules and recursive subdivision; the open ends
are closed with locally fitted power tails whose post-fit uncertainty must
drop below ``tail_rtol`` of the running scale.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .diffusion import DiffusionSpec, FundamentalPair
from .errors import (
    IntegrabilityCheckFailed,
    LimitNotStabilized,
    TailBoundUnattainable,
    UnimodalityViolated,
)
from .options import DEFAULT_OPTIONS, SolverOptions
from .payoffs import PayoffSpec

_GL16 = np.polynomial.legendre.leggauss(16)
_GL32 = np.polynomial.legendre.leggauss(32)


def prod_exp(log_a, b):
    """sign(b) * exp(log_a + ln|b|), safe against overflow of exp(log_a)."""
    log_a = np.asarray(log_a, dtype=float)
    b = np.asarray(b, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        out = np.sign(b) * np.exp(log_a + np.log(np.abs(b)))
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Theta
# ---------------------------------------------------------------------------

@dataclass
class ThetaFunction:
    """Effective running payoff h + L(int k) with certified unimodal ratio."""

    fn: Callable
    ratio: Callable                  # Theta / r
    xi: float
    certificate: dict
    kinks: tuple

    _table: Optional["ResolventTable"] = None   # memoised Theta resolvent


def theta_from_payoffs(d: DiffusionSpec, p: PayoffSpec,
                       options: SolverOptions = DEFAULT_OPTIONS) -> ThetaFunction:
    """Assemble Theta = h + (1/2) sigma^2 k' + b k - r K and locate its mode.

    The ratio Theta/r must rise strictly to a single interior mode xi and
    fall strictly beyond it; the scan grid certifies exactly one sign change
    of its successive differences, then golden-section search refines xi.
    """

    def theta(x):
        x = np.asarray(x, dtype=float)
        return (p.h(x) + 0.5 * d.volatility(x) ** 2 * p.k_prime(x)
                + d.drift(x) * p.k(x) - d.discount(x) * p.cum_k(x))

    def ratio(x):
        return theta(x) / d.discount(np.asarray(x, dtype=float))

    grid = np.geomspace(options.probe_lo, options.probe_hi, options.certificate_points)
    vals = ratio(grid)
    diffs = np.diff(vals)
    # differences at rounding level carry no monotonicity information
    noise = 1e-12 * (np.abs(vals[1:]) + np.abs(vals[:-1]) + 1.0)
    signs = np.where(np.abs(diffs) <= noise, 0.0, np.sign(diffs))
    nonzero = signs[signs != 0.0]
    if nonzero.size == 0:
        raise UnimodalityViolated("Theta/r is constant on the certificate grid")
    flips = int(np.count_nonzero(nonzero[1:] != nonzero[:-1]))
    if not (flips == 1 and nonzero[0] > 0 and nonzero[-1] < 0):
        raise UnimodalityViolated(
            f"Theta/r is not strictly unimodal on the certificate grid "
            f"({flips} sign changes, first {nonzero[0]}, last {nonzero[-1]})")

    i = int(np.argmax(vals))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, grid.size - 1)]
    xi = _golden_max(ratio, lo, hi, options.xi_rtol)

    certificate = {
        "grid_points": int(grid.size),
        "grid_span": [float(grid[0]), float(grid[-1])],
        "sign_changes": flips,
        "mode_bracket": [float(lo), float(hi)],
    }
    return ThetaFunction(fn=theta, ratio=ratio, xi=xi,
                         certificate=certificate, kinks=tuple(p.kinks))


def _golden_max(f, a, b, rtol):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    e = a + invphi * (b - a)
    fc, fe = f(c), f(e)
    while (b - a) > rtol * max(abs(a), abs(b)):
        if fc >= fe:
            b, e, fe = e, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, e, fe
            e = a + invphi * (b - a)
            fe = f(e)
    return 0.5 * (a + b)


# ---------------------------------------------------------------------------
# panel quadrature
# ---------------------------------------------------------------------------

def _gauss_panel(g, a, b, epsabs, epsrel, depth=0):
    """Nested 16/32-point Gauss-Legendre with recursive bisection."""
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    x32 = mid + half * _GL32[0]
    v32 = half * float(np.dot(_GL32[1], g(x32)))
    x16 = mid + half * _GL16[0]
    v16 = half * float(np.dot(_GL16[1], g(x16)))
    err = abs(v32 - v16)
    if err <= max(epsabs, epsrel * abs(v32)) or depth >= 12:
        return v32
    return (_gauss_panel(g, a, mid, 0.5 * epsabs, epsrel, depth + 1)
            + _gauss_panel(g, mid, b, 0.5 * epsabs, epsrel, depth + 1))


class _CumulativeTable:
    """Prefix sums of one integrand over a log-spaced panel grid.

    Panels can be appended on the right when a query or a tail criterion
    needs them; kink locations are always panel edges.
    """

    def __init__(self, integrand, lo, hi, kinks, options):
        self.g = integrand
        self.options = options
        self.kinks = tuple(sorted(k for k in kinks if lo < k < hi))
        self.edges = self._edge_array(lo, hi)
        self.panel_vals = np.array([
            _gauss_panel(self.g, self.edges[i], self.edges[i + 1],
                         options.quad_epsabs, options.quad_epsrel)
            for i in range(len(self.edges) - 1)
        ])
        self._rebuild_sums()

    def _rebuild_sums(self):
        # prefix for int_lo^x, an independent suffix for int_x^hi: forming one
        # as the difference of the other cancels catastrophically whenever a
        # far region dominates the total
        self.prefix = np.concatenate([[0.0], np.cumsum(self.panel_vals)])
        self.suffix = np.concatenate([np.cumsum(self.panel_vals[::-1])[::-1], [0.0]])

    def _edge_array(self, lo, hi):
        n = max(2, int(math.ceil(self.options.panels_per_decade * math.log10(hi / lo))))
        edges = np.geomspace(lo, hi, n + 1)
        extra = [k for k in self.kinks if lo < k < hi]
        if 1.0 > lo and 1.0 < hi:
            extra.append(1.0)
        return np.unique(np.concatenate([edges, np.asarray(extra, dtype=float)]))

    @property
    def lo(self):
        return float(self.edges[0])

    @property
    def hi(self):
        return float(self.edges[-1])

    def extend_to(self, new_hi):
        if new_hi <= self.hi:
            return
        old_hi = self.hi
        new_edges = self._edge_array(old_hi, new_hi)[1:]
        new_vals = []
        prev = old_hi
        for e in new_edges:
            new_vals.append(_gauss_panel(self.g, prev, e,
                                         self.options.quad_epsabs,
                                         self.options.quad_epsrel))
            prev = e
        self.edges = np.concatenate([self.edges, new_edges])
        self.panel_vals = np.concatenate([self.panel_vals, new_vals])
        self._rebuild_sums()

    def _locate(self, x):
        i = int(np.searchsorted(self.edges, x, side="right")) - 1
        return min(max(i, 0), len(self.edges) - 2)

    def cum_from_lo(self, x):
        """int_{lo}^{x} g, extending the grid if x lies beyond it."""
        if x <= self.lo:
            return 0.0
        if x > self.hi:
            self.extend_to(2.0 * x)
        i = self._locate(x)
        base = self.prefix[i]
        if x <= self.edges[i]:
            return float(base)
        return float(base + _gauss_panel(self.g, self.edges[i], x,
                                         self.options.quad_epsabs,
                                         self.options.quad_epsrel))

    def cum_to_hi(self, x):
        """int_{x}^{hi} g, accumulated from the right."""
        if x >= self.hi:
            return 0.0
        if x <= self.lo:
            return float(self.suffix[0])
        i = self._locate(x)
        base = self.suffix[i + 1]
        if x >= self.edges[i + 1]:
            return float(base)
        return float(base + _gauss_panel(self.g, x, self.edges[i + 1],
                                         self.options.quad_epsabs,
                                         self.options.quad_epsrel))

    @property
    def total(self):
        return float(self.prefix[-1])

    def running_scale(self, suffix=False):
        sums = self.suffix if suffix else self.prefix
        return float(np.max(np.abs(sums)))


def _power_tail(g, anchor, inward_factor, options, scale, toward_zero):
    """Fit |g| ~ C s^q near an open end and integrate the fitted tail.

    Returns (tail_value, converged).  ``anchor`` is the truncation point,
    samples step inward by ``inward_factor``.  A crude bound
    4 |g(anchor)| anchor below tolerance also counts as converged (covers
    super-polynomial decay and compact support).
    """
    ss = [anchor * inward_factor**k for k in range(4)]
    gs = [float(np.asarray(g(np.array([s])))[0]) for s in ss]
    tol = options.tail_rtol * scale + 1e-300

    crude_ok = 4.0 * abs(gs[0]) * ss[0] <= tol
    if any(v == 0.0 for v in gs) or len({np.sign(v) for v in gs}) > 1:
        # not fittable (sign changes or exact zeros); acceptable only when
        # the crude bound already certifies the tail negligible
        return 0.0, crude_ok

    qs = [math.log(abs(gs[k] / gs[k + 1])) / math.log(ss[k] / ss[k + 1])
          for k in range(3)]
    q = qs[0]
    spread = max(qs) - min(qs)
    if toward_zero:
        if q <= -0.98:
            return 0.0, crude_ok
        tail = gs[0] * ss[0] / (q + 1.0)
    else:
        if q >= -1.02:
            return 0.0, crude_ok
        tail = gs[0] * ss[0] / (-1.0 - q)
    # consecutive local exponents agreeing to `spread` bound the curvature of
    # the fitted power, hence the relative defect of the extrapolated tail
    post_err = abs(tail) * (spread + 1e-5) * 2.0 * abs(math.log(inward_factor))
    return tail, (post_err <= tol) or crude_ok


# ---------------------------------------------------------------------------
# resolvent table
# ---------------------------------------------------------------------------

class ResolventTable:
    """R_F with its two cumulatives, derivative ratio, G_F and Q_F.

    Immutable once constructed apart from lazy rightward panel extension,
    which preserves all previously returned values.
    """

    def __init__(self, d: DiffusionSpec, pair: FundamentalPair, F: Callable,
                 kinks: Sequence[float] = (), options: SolverOptions = DEFAULT_OPTIONS,
                 label: str = "F"):
        self.diffusion = d
        self.pair = pair
        self.F = F
        self.label = label
        self.options = options

        def g_lower(s):
            s = np.asarray(s, dtype=float)
            with np.errstate(over="ignore", under="ignore"):
                return F(s) * np.exp(pair.log_big_psi(s))

        def g_upper(s):
            s = np.asarray(s, dtype=float)
            with np.errstate(over="ignore", under="ignore"):
                return F(s) * np.exp(pair.log_big_phi(s))

        lo = options.quad_floor
        hi = options.x_max_init
        self._lower = _CumulativeTable(g_lower, lo, hi, kinks, options)
        self._upper = _CumulativeTable(g_upper, lo, hi, kinks, options)

        # close the lower end: the integrand must be power-integrable at 0
        scale0 = max(self._lower.running_scale(), 1e-30)
        tail0, ok0 = _power_tail(g_lower, lo, 2.0, options, scale0, toward_zero=True)
        if not ok0:
            raise IntegrabilityCheckFailed(
                f"int_0 {label} Psi does not converge fast enough below {lo}")
        self._tail0 = tail0

        # close the upper end: double X_max until the fitted tail is certified.
        # The scale is the running value around x = 1 and near the truncation
        # point; the suffix maximum sits at the integrable blow-up near 0 and
        # would make the criterion vacuous.
        while True:
            scale_inf = max(abs(self._upper.cum_to_hi(1.0)),
                            abs(self._upper.cum_to_hi(self._upper.hi / 16.0)),
                            1e-30)
            tail_inf, ok = _power_tail(g_upper, self._upper.hi, 0.5, options,
                                       scale_inf, toward_zero=False)
            if ok:
                break
            if self._upper.hi >= options.x_max_cap:
                raise TailBoundUnattainable(
                    f"tail of int {label} Phi not below {options.tail_rtol} of the "
                    f"running value at the {options.x_max_cap} cap")
            self._upper.extend_to(min(2.0 * self._upper.hi, options.x_max_cap))
        self._tail_inf = tail_inf

    # -- spec surface -------------------------------------------------------
    def lower_integral(self, x):
        """int_0^x F Psi."""
        if np.ndim(x):
            return np.array([self.lower_integral(float(v)) for v in np.asarray(x).ravel()]
                            ).reshape(np.shape(x))
        return self._tail0 + self._lower.cum_from_lo(float(x))

    def upper_integral(self, x):
        """int_x^inf F Phi."""
        if np.ndim(x):
            return np.array([self.upper_integral(float(v)) for v in np.asarray(x).ravel()]
                            ).reshape(np.shape(x))
        x = float(x)
        if x > self._upper.hi:
            self._upper.extend_to(2.0 * x)
            scale_inf = max(self._upper.running_scale(suffix=True), 1e-30)
            self._tail_inf, _ = _power_tail(self._upper.g, self._upper.hi, 0.5,
                                            self.options, scale_inf, toward_zero=False)
        return self._upper.cum_to_hi(x) + self._tail_inf

    def value(self, x):
        """R_F(x) = phi L + psi U, assembled in log space."""
        L = self.lower_integral(x)
        U = self.upper_integral(x)
        return (prod_exp(self.pair.log_phi(x), L)
                + prod_exp(self.pair.log_psi(x), U))

    def derivative(self, x):
        L = self.lower_integral(x)
        U = self.upper_integral(x)
        x_arr = np.asarray(x, dtype=float)
        lphi_p = self.pair.log_phi(x_arr) + np.log(-self.pair.s_phi(x_arr)) - np.log(x_arr)
        lpsi_p = self.pair.log_psi(x_arr) + np.log(self.pair.s_psi(x_arr)) - np.log(x_arr)
        return -prod_exp(lphi_p, L) + prod_exp(lpsi_p, U)

    @property
    def tail_truncation(self):
        return {"x_max": self._upper.hi, "tail_estimate": self._tail_inf,
                "lower_floor": self._lower.lo, "lower_tail_estimate": self._tail0}

    # -- derived analytic objects --------------------------------------------
    def rho(self, x):
        """R_F'(x)/psi'(x) = U(x) + (phi'/psi')(x) L(x)."""
        L = self.lower_integral(x)
        U = self.upper_integral(x)
        x_arr = np.asarray(x, dtype=float)
        log_ratio = (self.pair.log_phi(x_arr) - self.pair.log_psi(x_arr)
                     + np.log(-self.pair.s_phi(x_arr)) - np.log(self.pair.s_psi(x_arr)))
        return U - prod_exp(log_ratio, L)

    def g(self, x):
        """G_F(x) = C p'/psi' * int_0^x F Psi."""
        L = self.lower_integral(x)
        return prod_exp(-self.pair.log_psi_prime_over_cp(np.asarray(x, dtype=float)), L)

    def q(self, x, F_over_r: Callable):
        """Q_F(x) = int_0^x F Psi - (F/r)(x) psi'/(C p')."""
        L = self.lower_integral(x)
        x_arr = np.asarray(x, dtype=float)
        return L - prod_exp(self.pair.log_psi_prime_over_cp(x_arr), F_over_r(x_arr))


def resolvent(d: DiffusionSpec, pair: FundamentalPair, F: Callable,
              kinks: Sequence[float] = (), options: SolverOptions = DEFAULT_OPTIONS,
              label: str = "F") -> ResolventTable:
    """Build the R_F table; raises if the integrability check (both
    cumulatives convergent with certified tails) fails."""
    return ResolventTable(d, pair, F, kinks=kinks, options=options, label=label)


def theta_table(d: DiffusionSpec, pair: FundamentalPair, theta: ThetaFunction,
                options: SolverOptions = DEFAULT_OPTIONS) -> ResolventTable:
    """Memoised resolvent table for Theta on the theta object."""
    if theta._table is None:
        theta._table = resolvent(d, pair, theta.fn, kinks=theta.kinks,
                                 options=options, label="Theta")
    return theta._table


def g_function(d: DiffusionSpec, pair: FundamentalPair, table: ResolventTable, x):
    """G_F(x); must agree with R_F - (R_F'/psi') psi."""
    return table.g(x)


def q_theta(d: DiffusionSpec, pair: FundamentalPair, theta: ThetaFunction, x,
            options: SolverOptions = DEFAULT_OPTIONS):
    """Q_Theta(x) = int_0^x Theta Psi - (Theta/r)(x) psi'/(C p')."""
    return theta_table(d, pair, theta, options).q(x, theta.ratio)


# ---------------------------------------------------------------------------
# limit probes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LimitEstimate:
    value: float            # extrapolated limit; +-inf when diverging
    stabilized: bool
    trend: int              # +1 / -1 monotone divergence, 0 otherwise
    samples: tuple


def _aitken3(v):
    a0, a1, a2 = v[-3], v[-2], v[-1]
    den = (a2 - a1) - (a1 - a0)
    if den == 0.0 or not np.isfinite(den):
        return a2
    return a2 - (a2 - a1) ** 2 / den


def decade_limit(f, xs, rtol, snap=0.0) -> LimitEstimate:
    """Estimate lim f along the probe sequence xs (toward 0 or infinity).

    Divergence is reported as a trend when |f| grows monotonically and at
    least geometrically over the last probes; otherwise the Aitken
    extrapolation of the last three values is returned, flagged as
    stabilized when consecutive extrapolations agree to ``rtol``.
    """
    xs = [float(v) for v in xs]
    vals = np.array([float(np.asarray(f(np.array([x]))).ravel()[0]) for x in xs])
    absv = np.abs(vals)
    if absv[-1] > 1e300:
        # saturating the float range counts as divergence when the sign holds
        tail_signs = np.sign(vals[absv > 1e300])
        if np.all(tail_signs == tail_signs[0]):
            s = int(tail_signs[0])
            return LimitEstimate(value=s * math.inf, stabilized=True, trend=s,
                                 samples=tuple(vals))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = absv[1:] / absv[:-1]
    # a convergent sequence has magnitude ratios falling toward 1; ratios
    # staying geometric mark divergence (Aitken would alias it to junk)
    growing = bool(np.all(np.diff(absv) > 0.0)) and bool(np.all(ratios[-2:] >= 1.25))
    if growing:
        sign = 1.0 if vals[-1] > 0 else -1.0
        return LimitEstimate(value=sign * math.inf, stabilized=True,
                             trend=int(sign), samples=tuple(vals))
    # geometric shrinkage with a vanishing extrapolation resolves to 0; the
    # raw ratios never stabilise and one Aitken level only cancels the
    # leading decay, so extrapolate the window-wise Aitken values once more
    shrinking = bool(np.all(absv[1:] < (1.0 - 1e-3) * absv[:-1]))
    zero_scale = max(snap, 1e-6 * max(absv[0], 1e-30))
    if shrinking:
        exts = np.array([_aitken3(vals[i:i + 3]) for i in range(vals.size - 2)])
        ext2 = _aitken3(exts) if exts.size >= 3 else exts[-1]
        if abs(_aitken3(vals)) < zero_scale or abs(ext2) < zero_scale:
            return LimitEstimate(value=0.0, stabilized=True, trend=0,
                                 samples=tuple(vals))

    # iterated Aitken ladder: each level cancels one power of the approach
    levels = [vals[-1]]
    seq = vals
    while seq.size >= 3:
        seq = np.array([_aitken3(seq[i:i + 3]) for i in range(seq.size - 2)])
        levels.append(seq[-1])
    value = levels[-1]
    prev = levels[-2] if len(levels) >= 2 else vals[-1]
    scale = max(abs(value), snap, 1e-30)
    stable = abs(value - prev) <= max(rtol * scale, 1e-14)
    if snap > 0.0 and abs(value) < snap:
        value = 0.0
    return LimitEstimate(value=float(value), stabilized=bool(stable),
                         trend=0, samples=tuple(vals))


def k_infinity(d: DiffusionSpec, pair: FundamentalPair, p: PayoffSpec,
               options: SolverOptions = DEFAULT_OPTIONS) -> float:
    """K_infinity = lim K(x)/psi(x) >= 0, by decade probes with extrapolation."""

    def ratio(x):
        x = np.asarray(x, dtype=float)
        K = p.cum_k(x)
        return prod_exp(-pair.log_psi(x), K)

    xs = [1e3, 1e4, 1e5, 1e6]
    vals = np.array([float(np.asarray(ratio(np.array([x])))[0]) for x in xs])
    if np.all(np.abs(vals[-2:]) < options.zero_snap):
        return 0.0
    ext_last = _aitken3(vals)
    ext_prev = _aitken3(vals[:-1])
    # geometric shrinkage with a vanishing extrapolated limit means 0 even
    # when a subdominant decay keeps the raw ratios from stabilising
    shrinking = bool(np.all(np.abs(vals[1:]) < 0.95 * np.abs(vals[:-1])))
    zero_scale = max(options.zero_snap, 1e-6 * max(1.0, abs(vals[0])))
    if shrinking and abs(ext_last) < zero_scale and abs(ext_prev) < 10.0 * zero_scale:
        return 0.0
    rel = abs(ext_last - ext_prev) / max(abs(ext_last), 1e-30)
    if rel > options.k_inf_rtol:
        raise LimitNotStabilized(
            f"extrapolated K/psi probes {vals.tolist()} not within {options.k_inf_rtol}")
    if ext_last < 0.0:
        raise LimitNotStabilized(f"K/psi extrapolated to a negative value {ext_last}")
    return float(ext_last)
