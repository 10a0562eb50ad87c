"""Numerical knobs shared across the solver pipeline.

Defaults cover every catalogue problem with margin; override through the CLI
config ``[numerics]`` section or by passing an instance explicitly.
"""
from dataclasses import dataclass, replace


@dataclass(frozen=True)
class SolverOptions:
    # validation / evaluation range for coefficient probing
    probe_lo: float = 1e-6
    probe_hi: float = 1e6

    # numerical fundamental-pair construction (log-state axis)
    ode_lo: float = 1e-14
    ode_hi: float = 1e9
    ode_rtol: float = 2.5e-14
    ode_atol: float = 1e-14

    # quadrature engine
    quad_floor: float = 1e-13        # lower truncation of integrals against big-Psi
    x_max_init: float = 1e4          # initial upper truncation, doubled as needed
    x_max_cap: float = 1e8           # hard cap before TailBoundUnattainable
    tail_rtol: float = 1e-9          # estimated tail must drop below this (relative)
    quad_epsabs: float = 1e-13
    quad_epsrel: float = 1e-11
    panels_per_decade: int = 8

    # root finding (bracketed bisection throughout)
    root_rtol: float = 1e-10

    # limits and infinity handling
    x_inf: float = 1e6               # quantities not stabilized past this are flagged infinite
    limit_rtol: float = 1e-8         # stabilization tolerance for extrapolated limits
    k_inf_rtol: float = 1e-4         # stabilization tolerance for the K/psi limit probes
    zero_snap: float = 1e-10         # absolute snap-to-zero for vanishing limits

    # unimodality certificate / mode search
    certificate_points: int = 1000
    xi_rtol: float = 1e-8

    # boundary classification
    natural_zero_factor: float = 1e-6    # lim psi below this multiple of psi(1) => natural
    entrance_stabil_rtol: float = 1e-2   # decade-to-decade stabilization => entrance

    # verification grids
    verify_points: int = 500
    z_grid_points: int = 2000

    def with_updates(self, **kw):
        return replace(self, **kw)


DEFAULT_OPTIONS = SolverOptions()
