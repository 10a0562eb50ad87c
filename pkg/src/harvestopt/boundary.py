"""Free-boundary analysis: structural points, thresholds and case taxonomy.

The derivative ratio rho = R_Theta'/psi' falls strictly until x_lower and
rises back to 0 beyond it.  Everything else follows from that shape:

    x_lower  unique zero of Q_Theta past the mode xi (infinite iff
             lim Q_Theta <= 0),
    l0       lim rho at 0,
    x_upper  where rho climbs back to l0 (infinite iff l0 >= 0),
    Gamma    the matching point on the falling branch with rho(Gamma(beta))
             = rho(beta),
    F        F(gamma, beta) = G_Theta(beta) - G_Theta(gamma); the pair
             (gamma*, beta*) solves rho-match plus F = -c.

Four regimes result: an interior pair (case I), a boundary pair with
gamma at 0 reachable only in the limit (case II), no intervention (III),
and ever-larger thresholds with no optimum (IV).  All scalar inversions are
bracketed bisection; every monotonicity used is certified by the shape
above, so no derivatives are needed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .diffusion import DiffusionSpec, FundamentalPair
from .errors import (
    BracketNotFound,
    LimitNotStabilized,
    RootNotBracketed,
    ThresholdAmbiguity,
    WrongCase,
)
from .options import DEFAULT_OPTIONS, SolverOptions
from .payoffs import PayoffSpec
from .resolvent import (
    LimitEstimate,
    ResolventTable,
    ThetaFunction,
    decade_limit,
    k_infinity,
    theta_table,
)

INF = math.inf


@dataclass(frozen=True)
class StructuralPoints:
    xi: float
    x_lower: float                  # may be inf
    x_upper: float                  # may be inf; nan when x_lower is inf
    l0: float                       # lim rho at 0, may be +-inf
    q_infinity: float               # lim Q_Theta, may be +-inf
    theta_ratio_zero: float         # lim Theta/r at 0, may be -inf
    theta_ratio_inf: float          # lim Theta/r at inf, may be -inf


@dataclass(frozen=True)
class FreeBoundarySolution:
    case_tag: str                   # "I" | "II" | "III" | "IV"
    gamma_star: Optional[float]
    beta_star: Optional[float]
    beta_circ: Optional[float]
    c_star: float                   # inf allowed
    c_circ: float                   # inf allowed; nan when x_upper = inf
    k_infinity: float
    structural: StructuralPoints
    residuals: tuple                # (rho-match, F + c) where applicable
    fixed_cost: float


def bisect(f, a, b, rtol, fa=None, fb=None):
    """Bracketed bisection to relative width rtol; signs must differ."""
    fa = f(a) if fa is None else fa
    fb = f(b) if fb is None else fb
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    if np.sign(fa) == np.sign(fb):
        raise RootNotBracketed(f"no sign change on [{a}, {b}]: f={fa}, {fb}")
    while (b - a) > rtol * max(abs(a), abs(b)):
        mid = 0.5 * (a + b)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if np.sign(fm) == np.sign(fa):
            a, fa = mid, fm
        else:
            b, fb = mid, fm
    return 0.5 * (a + b)


class _Analysis:
    """Lazy structural quantities for one (diffusion, pair, theta) triple."""

    def __init__(self, d, pair, theta, options):
        self.d = d
        self.pair = pair
        self.theta = theta
        self.options = options
        self.table = theta_table(d, pair, theta, options)
        self._cache = {}

    def _memo(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    # -- limits ---------------------------------------------------------------
    def t_zero(self):
        def probe():
            est = decade_limit(self.theta.ratio, [10.0 ** -k for k in range(3, 11)],
                               rtol=self.options.limit_rtol)
            if est.trend < 0:
                return -INF
            if est.trend > 0 or not est.stabilized:
                raise LimitNotStabilized(f"Theta/r at 0: {est.samples}")
            return est.value
        return self._memo("t0", probe)

    def t_inf(self):
        def probe():
            est = decade_limit(self.theta.ratio, [10.0 ** k for k in range(2, 7)],
                               rtol=self.options.limit_rtol)
            if est.trend < 0:
                return -INF
            if est.trend > 0 or not est.stabilized:
                raise LimitNotStabilized(f"Theta/r at inf: {est.samples}")
            return est.value
        return self._memo("tinf", probe)

    def l0(self):
        def probe():
            est = decade_limit(self.table.rho, [10.0 ** -k for k in range(3, 11)],
                               rtol=self.options.limit_rtol)
            if est.trend != 0:
                return est.trend * INF
            if not est.stabilized:
                raise LimitNotStabilized(f"rho at 0: {est.samples}")
            return est.value
        return self._memo("l0", probe)

    def g_zero(self):
        def probe():
            est = decade_limit(self.table.g, [10.0 ** -k for k in range(3, 11)],
                               rtol=self.options.limit_rtol)
            if not est.stabilized or est.trend != 0:
                raise LimitNotStabilized(f"G_Theta at 0: {est.samples}")
            return est.value
        return self._memo("g0", probe)

    def r_theta_zero(self):
        def probe():
            est = decade_limit(self.table.value, [10.0 ** -k for k in range(3, 11)],
                               rtol=self.options.limit_rtol)
            if not est.stabilized or est.trend != 0:
                raise LimitNotStabilized(f"R_Theta at 0: {est.samples}")
            return est.value
        return self._memo("rtheta0", probe)

    def psi_zero(self):
        def probe():
            est = decade_limit(
                self.pair.psi, [10.0 ** -k for k in range(3, 10)],
                rtol=self.options.limit_rtol,
                snap=self.options.natural_zero_factor * float(self.pair.psi(1.0)))
            if not est.stabilized or est.trend != 0:
                raise LimitNotStabilized(f"psi at 0: {est.samples}")
            return est.value
        return self._memo("psi0", probe)

    # -- structural points ----------------------------------------------------
    def q_direct(self, x):
        """Q_Theta(x) through the difference form of its integrand,

            int_0^x (Theta/r (s) - Theta/r (x)) r(s) Psi(s) ds,

        which avoids the x^2-scale cancellation of the two-term formula at
        large x.  One fresh panel sweep per evaluation."""
        from .resolvent import _gauss_panel
        x = float(np.asarray(x).ravel()[0])
        ratio_x = float(np.asarray(self.theta.ratio(np.array([x])))[0])
        pair, d = self.pair, self.d

        def integrand(s):
            s = np.asarray(s, dtype=float)
            with np.errstate(over="ignore", under="ignore"):
                w = d.discount(s) * np.exp(pair.log_big_psi(s))
            return (self.theta.ratio(s) - ratio_x) * w

        lo = self.options.quad_floor
        edges = np.geomspace(lo, x, max(2, int(8 * math.log10(x / lo))) + 1)
        edges = np.unique(np.concatenate([edges, [k for k in self.theta.kinks if lo < k < x]]))
        total = 0.0
        # limit probing needs ~1e-8 absolute accuracy; the integrand passes
        # through zero near s = x, so a tight relative panel test would force
        # full-depth subdivision for nothing
        for a, b in zip(edges[:-1], edges[1:]):
            total += _gauss_panel(integrand, a, b, 1e-11, 1e-9)
        return total

    def q_eval(self, x):
        """Table-based Q for moderate x, difference form beyond it (the
        two-term formula loses the limit to cancellation at large x)."""
        x = float(np.asarray(x).ravel()[0])
        if x <= 1e4:
            return float(self.table.q(x, self.theta.ratio))
        return self.q_direct(x)

    def q_infinity(self):
        def probe():
            est = decade_limit(self.q_eval, [1e3 * 2.0 ** k for k in range(5)],
                               rtol=max(self.options.limit_rtol, 1e-6))
            if est.trend != 0:
                return est.trend * INF
            if not est.stabilized:
                raise LimitNotStabilized(f"Q_Theta toward inf: {est.samples}")
            return est.value
        return self._memo("qinf", probe)

    def x_lower(self):
        return self._memo("x_lower", self._find_x_lower)

    def _find_x_lower(self):
        opts = self.options
        q = lambda x: float(self.q_eval(float(x)))
        xi = self.theta.xi
        a, fa = xi, q(xi)
        if fa > 0.0:
            raise BracketNotFound(f"Q_Theta({xi}) = {fa} > 0 at the mode")
        b = 2.0 * xi
        while b <= opts.x_inf:
            fb = q(b)
            if fb > 0.0:
                return bisect(q, a, b, opts.root_rtol, fa=fa, fb=fb)
            a, fa = b, fb
            b *= 2.0
        qinf = self.q_infinity()
        if qinf > 0.0:
            # sign change exists beyond x_inf; chase it to the cap
            while b <= opts.x_max_cap:
                fb = q(b)
                if fb > 0.0:
                    return bisect(q, a, b, opts.root_rtol, fa=fa, fb=fb)
                a, fa = b, fb
                b *= 2.0
            raise BracketNotFound("lim Q_Theta > 0 but no sign change below the cap")
        # flagging infinity requires the finiteness criterion to corroborate
        finite_sufficient = (self.t_inf() == -INF) or (self.t_zero() > self.t_inf())
        if qinf == 0.0 or abs(qinf) < 1e-12 * max(1.0, abs(q(opts.x_inf))):
            raise BracketNotFound(
                f"lim Q_Theta = {qinf} numerically indistinguishable from 0")
        if finite_sufficient:
            raise LimitNotStabilized(
                f"Q_Theta stabilised at {qinf} <= 0 but Theta/r limits "
                f"({self.t_zero()}, {self.t_inf()}) force a finite x_lower")
        return INF

    def x_upper(self):
        return self._memo("x_upper", self._find_x_upper)

    def _find_x_upper(self):
        xl = self.x_lower()
        if not math.isfinite(xl):
            return math.nan
        l0 = self.l0()
        if l0 >= -1e-8:
            return INF
        f = lambda x: float(self.table.rho(x)) - l0
        a, fa = xl, f(xl)
        if fa >= 0.0:
            raise RootNotBracketed(f"rho(x_lower) - l0 = {fa} >= 0")
        b = 2.0 * xl
        fb = f(b)
        while fb <= 0.0:
            a, fa = b, fb
            b *= 2.0
            if b > self.options.x_max_cap:
                raise RootNotBracketed("rho never recrosses l0 below the cap")
            fb = f(b)
        return bisect(f, a, b, self.options.root_rtol, fa=fa, fb=fb)

    def gamma_bar(self):
        """Zero of rho on the falling branch; exists iff l0 > 0 (or +inf)."""
        def probe():
            xl = self.x_lower()
            f = lambda x: float(self.table.rho(x))
            b, fb = xl, f(xl)
            if fb >= 0.0:
                raise RootNotBracketed("rho(x_lower) >= 0")
            a = 0.5 * xl
            fa = f(a)
            while fa <= 0.0:
                a *= 0.25
                if a < 1e-13:
                    raise RootNotBracketed("rho has no zero on the falling branch")
                fa = f(a)
            return bisect(f, a, b, self.options.root_rtol, fa=fa, fb=fb)
        return self._memo("gamma_bar", probe)

    def gamma_of_beta(self, beta):
        xl = self.x_lower()
        xu = self.x_upper()
        if not (xl < beta and (math.isnan(xu) or beta < xu)):
            raise RootNotBracketed(
                f"beta = {beta} outside the admissible band ({xl}, {xu})")
        target = float(self.table.rho(beta))
        f = lambda x: float(self.table.rho(x)) - target
        b, fb = xl, float(self.table.rho(xl)) - target
        if fb >= 0.0:
            # beta numerically at x_lower; the match point collapses there
            return xl
        a = 0.5 * xl
        fa = f(a)
        while fa <= 0.0:
            a *= 0.25
            if a < 1e-13:
                # the matching point sits below state-space resolution, which
                # happens exactly when rho(beta) ~ l0 (beta near x_upper)
                l0 = self.l0()
                if math.isfinite(l0) and target <= l0 + 1e-7 * max(1.0, abs(l0)):
                    return 0.0
                raise RootNotBracketed(f"rho never exceeds rho({beta}) toward 0")
            fa = f(a)
        return bisect(f, a, b, self.options.root_rtol, fa=fa, fb=fb)

    def f_pair(self, gamma, beta):
        """F(gamma, beta); gamma = 0 takes the limit consistent with the
        value-function gluing (integral form; identical to the G-difference
        at a natural 0 where psi(0) = 0)."""
        if gamma < 0.0 or gamma >= beta:
            raise ValueError("need 0 <= gamma < beta")
        g_beta = float(self.table.g(beta))
        if gamma > 0.0:
            return g_beta - float(self.table.g(gamma))
        anchor = self.r_theta_zero() - float(self.table.rho(beta)) * self.psi_zero()
        return g_beta - anchor

    # -- thresholds -----------------------------------------------------------
    def c_star(self):
        def probe():
            xl = self.x_lower()
            if not math.isfinite(xl):
                return math.nan
            xu = self.x_upper()
            if math.isfinite(xu):
                return self.g_zero() - float(self.table.g(xu))
            tinf = self.t_inf()
            if tinf == -INF:
                return INF
            l0 = self.l0()
            if l0 > 1e-8:
                return float(self.table.g(self.gamma_bar())) - tinf
            return self.g_zero() - tinf
        return self._memo("c_star", probe)

    def c_circ(self):
        def probe():
            xu = self.x_upper()
            if not math.isfinite(xu):
                return math.nan
            tinf = self.t_inf()
            if tinf == -INF:
                return INF
            return self.r_theta_zero() - tinf
        return self._memo("c_circ", probe)

    def structural(self) -> StructuralPoints:
        return StructuralPoints(
            xi=self.theta.xi,
            x_lower=self.x_lower(),
            x_upper=self.x_upper(),
            l0=self.l0(),
            q_infinity=self.q_infinity(),
            theta_ratio_zero=self.t_zero(),
            theta_ratio_inf=self.t_inf(),
        )


def analysis(d: DiffusionSpec, pair: FundamentalPair, theta: ThetaFunction,
             options: SolverOptions = DEFAULT_OPTIONS) -> _Analysis:
    if getattr(theta, "_fb_analysis", None) is None:
        theta._fb_analysis = _Analysis(d, pair, theta, options)
    return theta._fb_analysis


# ---------------------------------------------------------------------------
# spec operations
# ---------------------------------------------------------------------------

def find_x_lower(d, pair, theta, options=DEFAULT_OPTIONS):
    """Unique zero of Q_Theta past the mode, or inf when its limit is <= 0."""
    return analysis(d, pair, theta, options).x_lower()


def find_x_upper(d, pair, theta, x_lower, options=DEFAULT_OPTIONS):
    """Point where rho returns to its level at 0; inf when l0 >= 0."""
    ws = analysis(d, pair, theta, options)
    if math.isfinite(x_lower) and not math.isfinite(ws.x_lower()):
        raise RootNotBracketed("inconsistent x_lower supplied")
    return ws.x_upper()


def gamma_of_beta(d, pair, theta, beta, options=DEFAULT_OPTIONS):
    """Gamma(beta): the rho-matching point on the falling branch."""
    return analysis(d, pair, theta, options).gamma_of_beta(beta)


def f_gamma_beta(d, pair, theta, gamma, beta, options=DEFAULT_OPTIONS):
    """F(gamma, beta) = G_Theta(beta) - G_Theta(gamma) (limit form at 0)."""
    return analysis(d, pair, theta, options).f_pair(gamma, beta)


def c_thresholds(d, pair, theta, structural=None, options=DEFAULT_OPTIONS):
    ws = analysis(d, pair, theta, options)
    return ws.c_star(), ws.c_circ()


def solve_boundaries(d: DiffusionSpec, pair: FundamentalPair, theta: ThetaFunction,
                     p: PayoffSpec, options: SolverOptions = DEFAULT_OPTIONS
                     ) -> FreeBoundarySolution:
    """Classify the problem for fixed cost c and solve its boundary system."""
    ws = analysis(d, pair, theta, options)
    c = p.c
    k_inf = k_infinity(d, pair, p, options)
    xl = ws.x_lower()

    if not math.isfinite(xl):
        case = "III" if k_inf == 0.0 else "IV"
        return FreeBoundarySolution(
            case_tag=case, gamma_star=None, beta_star=None, beta_circ=None,
            c_star=math.nan, c_circ=math.nan, k_infinity=k_inf,
            structural=ws.structural(), residuals=(), fixed_cost=c)

    xu = ws.x_upper()
    c_star = ws.c_star()
    c_circ = ws.c_circ()
    guard = 1e-9 * max(1.0, c)
    if math.isfinite(c_star) and abs(c - c_star) < guard:
        raise ThresholdAmbiguity(
            f"fixed cost {c} within {guard} of c_star = {c_star}; perturb c")
    if math.isfinite(c_circ) and abs(c - c_circ) < guard:
        raise ThresholdAmbiguity(
            f"fixed cost {c} within {guard} of c_circ = {c_circ}; perturb c")

    if c < c_star:
        beta_star, gamma_star, residuals = _solve_case_one(ws, c)
        return FreeBoundarySolution(
            case_tag="I", gamma_star=gamma_star, beta_star=beta_star,
            beta_circ=None, c_star=c_star, c_circ=c_circ, k_infinity=k_inf,
            structural=ws.structural(), residuals=residuals, fixed_cost=c)

    if math.isfinite(xu) and c < c_circ:
        beta_circ, residual = _solve_case_two(ws, c)
        return FreeBoundarySolution(
            case_tag="II", gamma_star=None, beta_star=None, beta_circ=beta_circ,
            c_star=c_star, c_circ=c_circ, k_infinity=k_inf,
            structural=ws.structural(), residuals=(residual,), fixed_cost=c)

    case = "III" if k_inf == 0.0 else "IV"
    return FreeBoundarySolution(
        case_tag=case, gamma_star=None, beta_star=None, beta_circ=None,
        c_star=c_star, c_circ=c_circ, k_infinity=k_inf,
        structural=ws.structural(), residuals=(), fixed_cost=c)


def _solve_case_one(ws, c):
    xl = ws.x_lower()
    xu = ws.x_upper()

    def fc(beta):
        return ws.f_pair(ws.gamma_of_beta(beta), beta) + c

    a = xl * (1.0 + 1e-10)
    fa = fc(a)
    if math.isfinite(xu):
        # the right endpoint value is the threshold identity c - c_star < 0
        b, fb = xu, c - ws.c_star()
    else:
        b = 2.0 * xl
        fb = fc(b)
        while fb > 0.0:
            a, fa = b, fb
            b *= 2.0
            if b > ws.options.x_max_cap:
                raise RootNotBracketed("F(Gamma(beta), beta) never reaches -c")
            fb = fc(b)
    beta_star = bisect(fc, a, b, ws.options.root_rtol, fa=fa, fb=fb)
    gamma_star = ws.gamma_of_beta(beta_star)
    rho_gamma = ws.l0() if gamma_star == 0.0 else float(ws.table.rho(gamma_star))
    r1 = abs(rho_gamma - float(ws.table.rho(beta_star)))
    r2 = abs(ws.f_pair(gamma_star, beta_star) + c)
    return beta_star, gamma_star, (r1, r2)


def _solve_case_two(ws, c):
    xu = ws.x_upper()

    def fc(beta):
        return ws.f_pair(0.0, beta) + c

    a, fa = xu, fc(xu)
    if fa < 0.0:
        raise RootNotBracketed(f"F(0, x_upper) + c = {fa} < 0")
    b = 2.0 * xu
    fb = fc(b)
    while fb > 0.0:
        a, fa = b, fb
        b *= 2.0
        if b > ws.options.x_max_cap:
            raise RootNotBracketed("F(0, beta) never reaches -c below the cap")
        fb = fc(b)
    beta_circ = bisect(fc, a, b, ws.options.root_rtol, fa=fa, fb=fb)
    return beta_circ, abs(fc(beta_circ))


def epsilon_sequence(sol: FreeBoundarySolution, n: int, gamma: Optional[float] = None):
    """Geometric epsilon-optimal schedules for the no-optimum cases.

    Case II: (beta_circ, beta_circ 2^{-i-1}), i = 1..n.
    Case IV: (gamma 2^{i+1}, gamma), i = 1..n, gamma defaulting to 1.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    if sol.case_tag == "II":
        b = sol.beta_circ
        return [(b, b * 2.0 ** (-i - 1)) for i in range(1, n + 1)]
    if sol.case_tag == "IV":
        g = 1.0 if gamma is None else gamma
        return [(g * 2.0 ** (i + 1), g) for i in range(1, n + 1)]
    raise WrongCase(f"epsilon sequences exist only in cases II and IV, not {sol.case_tag}")


@dataclass(frozen=True)
class SweepRow:
    c: float
    case_tag: str = ""
    gamma: float = math.nan          # gamma_star or epsilon-schedule head
    beta: float = math.nan           # beta_star or beta_circ
    c_star: float = math.nan
    c_circ: float = math.nan
    residual_1: float = math.nan
    residual_2: float = math.nan
    error: str = ""


def sweep_c(d, pair, theta, p: PayoffSpec, c_grid, options=DEFAULT_OPTIONS,
            threads: int = 1):
    """Solve per fixed cost along an increasing grid; errors are recorded
    per row and the sweep continues.  Within case I the boundaries must be
    monotone in c; a violation marks the offending row.

    With threads > 1 the grid is split into contiguous chunks, each worker
    operating on its own theta workspace (the shared one memoises lazily and
    is not safe for concurrent construction); rows merge back in c order, so
    the output is identical to a serial run.
    """
    c_grid = [float(c) for c in c_grid]
    if any(c2 <= c1 for c1, c2 in zip(c_grid, c_grid[1:])):
        raise ValueError("c grid must be strictly increasing")

    if threads > 1 and len(c_grid) >= 2 * threads:
        from concurrent.futures import ThreadPoolExecutor
        from .resolvent import theta_from_payoffs
        chunks = np.array_split(np.asarray(c_grid), threads)

        def work(chunk):
            th_local = theta_from_payoffs(d, p, options)
            return _sweep_rows(d, pair, th_local, p, [float(c) for c in chunk],
                               options)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
        rows = [row for part in parts for row in part]
        return _mark_monotonicity(rows)
    return _mark_monotonicity(_sweep_rows(d, pair, theta, p, c_grid, options))


def _sweep_rows(d, pair, theta, p, c_grid, options):
    rows = []
    for c in c_grid:
        try:
            sol = solve_boundaries(d, pair, theta, replace(p, c=c), options)
        except Exception as exc:                      # per-row error column
            rows.append(SweepRow(c=c, error=f"{type(exc).__name__}: {exc}"))
            continue
        if sol.case_tag == "I":
            row = SweepRow(c=c, case_tag="I", gamma=sol.gamma_star,
                           beta=sol.beta_star, c_star=sol.c_star,
                           c_circ=sol.c_circ, residual_1=sol.residuals[0],
                           residual_2=sol.residuals[1])
        elif sol.case_tag == "II":
            eps_head = epsilon_sequence(sol, 1)[0][1]
            row = SweepRow(c=c, case_tag="II", gamma=eps_head, beta=sol.beta_circ,
                           c_star=sol.c_star, c_circ=sol.c_circ,
                           residual_2=sol.residuals[0])
        else:
            row = SweepRow(c=c, case_tag=sol.case_tag, c_star=sol.c_star,
                           c_circ=sol.c_circ)
        rows.append(row)
    return rows


def _mark_monotonicity(rows):
    prev_beta = prev_gamma = None
    out = []
    for row in rows:
        if row.case_tag == "I":
            if prev_beta is not None and (row.beta < prev_beta - 1e-9
                                          or row.gamma > prev_gamma + 1e-9):
                row = replace(row, error="monotonicity violation along sweep")
            prev_beta, prev_gamma = row.beta, row.gamma
        out.append(row)
    return out
