"""Problem configuration: one TOML file fully specifies a run.

Sections: [model], [payoff], top-level fixed cost and evaluation state,
[numerics] (solver tolerances, grids, Monte Carlo controls), [outputs],
optional [simulate] (explicit strategy) and [sweep].
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, fields
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .diffusion import CATALOGUE_MODELS, DiffusionSpec, gbm, log_ou, logistic, mean_rev_sqrt
from .errors import ConfigError
from .options import DEFAULT_OPTIONS, SolverOptions
from .payoffs import CATALOGUE_PAYOFFS, PayoffSpec, check_catalogue_compatibility, make_payoff

_MODEL_FACTORIES = {"gbm": gbm, "logistic": logistic, "log-ou": log_ou,
                    "mean-rev-sqrt": mean_rev_sqrt}

_NUMERIC_OPTION_KEYS = tuple(f.name for f in fields(SolverOptions))


@dataclass
class ProblemConfig:
    model_tag: str
    model_params: dict
    payoff_tag: str
    payoff_params: dict
    fixed_cost: float
    x0: float
    dt: float = 1e-4
    n_paths: int = 10000
    seed: int = 1
    threads: int = 1
    trace_paths: int = 0
    out_dir: str = "out"
    out_format: str = "both"            # json | csv | both
    options: SolverOptions = field(default_factory=lambda: DEFAULT_OPTIONS)
    simulate_beta: Optional[float] = None
    simulate_gamma: Optional[float] = None
    sweep_c_min: Optional[float] = None
    sweep_c_max: Optional[float] = None
    sweep_steps: Optional[int] = None


def load_config(path: str) -> ProblemConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    return parse_config(raw)


def parse_config(raw: dict) -> ProblemConfig:
    try:
        model = dict(raw["model"])
        payoff = dict(raw["payoff"])
        problem = dict(raw["problem"])
        c = float(problem["c"])
        x0 = float(problem["x0"])
    except KeyError as exc:
        raise ConfigError(f"missing required config entry: {exc}") from exc
    model_tag = model.pop("tag", None)
    payoff_tag = payoff.pop("tag", None)
    if model_tag not in CATALOGUE_MODELS:
        raise ConfigError(f"unknown model tag {model_tag!r}; known: "
                          f"{sorted(CATALOGUE_MODELS)}")
    if payoff_tag not in CATALOGUE_PAYOFFS:
        raise ConfigError(f"unknown payoff tag {payoff_tag!r}; known: "
                          f"{sorted(CATALOGUE_PAYOFFS)}")
    if not c > 0.0:
        raise ConfigError("fixed cost c must be positive")
    if not x0 > 0.0:
        raise ConfigError("evaluation state x0 must be positive")

    num = dict(raw.get("numerics", {}))
    dt = float(num.pop("dt", 1e-4))
    n_paths = int(num.pop("n_paths", 10000))
    seed = int(num.pop("seed", 1))
    threads = int(num.pop("threads", 1))
    if dt <= 0.0 or n_paths <= 0 or threads <= 0:
        raise ConfigError("dt, n_paths and threads must be positive")
    opt_kw = {}
    for key, val in num.items():
        if key not in _NUMERIC_OPTION_KEYS:
            raise ConfigError(f"unknown numerics option {key!r}")
        opt_kw[key] = type(getattr(DEFAULT_OPTIONS, key))(val)
    options = DEFAULT_OPTIONS.with_updates(**opt_kw) if opt_kw else DEFAULT_OPTIONS

    outputs = dict(raw.get("outputs", {}))
    out_dir = str(outputs.get("dir", "out"))
    out_format = str(outputs.get("format", "both"))
    if out_format not in ("json", "csv", "both"):
        raise ConfigError("outputs.format must be json, csv or both")
    trace_paths = int(outputs.get("trace_paths", 0))

    sim = dict(raw.get("simulate", {}))
    swp = dict(raw.get("sweep", {}))
    cfg = ProblemConfig(
        model_tag=model_tag, model_params=model,
        payoff_tag=payoff_tag, payoff_params=payoff,
        fixed_cost=c, x0=x0, dt=dt, n_paths=n_paths, seed=seed,
        threads=threads, trace_paths=trace_paths,
        out_dir=out_dir, out_format=out_format, options=options,
        simulate_beta=sim.get("beta"), simulate_gamma=sim.get("gamma"),
        sweep_c_min=swp.get("c_min"), sweep_c_max=swp.get("c_max"),
        sweep_steps=swp.get("steps"),
    )
    return cfg


def build_problem(cfg: ProblemConfig):
    """(diffusion, payoff) from the catalogue sections; coupled-range checks."""
    factory = _MODEL_FACTORIES[cfg.model_tag]
    try:
        d = factory(**cfg.model_params, options=cfg.options)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for model {cfg.model_tag!r}: {exc}") from exc
    try:
        p = make_payoff(cfg.payoff_tag, c=cfg.fixed_cost, **cfg.payoff_params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad parameters for payoff {cfg.payoff_tag!r}: {exc}") from exc
    try:
        check_catalogue_compatibility(d, p)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return d, p


DEFAULT_CONFIG_TOML = """\
# harvestopt problem configuration (all values shown are the defaults the
# `defaults` subcommand prints; model/payoff sections show an example pairing)

[model]
tag = "gbm"            # gbm | logistic | log-ou | mean-rev-sqrt
b = 0.25
sigma = 0.7071067811865476
r = 1.0

[payoff]
tag = "piecewise-a"    # power | capped-linear-a | capped-linear-b | exp-capped | piecewise-a | piecewise-b

[problem]
c = 0.1                # fixed intervention cost
x0 = 1.5               # evaluation / simulation start state

[numerics]
dt = 0.0001
n_paths = 10000
seed = 1
threads = 1
# solver tolerances (see harvestopt.options.SolverOptions)
probe_lo = 1e-6
probe_hi = 1e6
quad_floor = 1e-13
x_max_init = 1e4
x_max_cap = 1e8
tail_rtol = 1e-9
root_rtol = 1e-10
x_inf = 1e6
limit_rtol = 1e-8
verify_points = 500
z_grid_points = 2000

[outputs]
dir = "out"
format = "both"        # json | csv | both
trace_paths = 0        # write full traces for this many leading paths

[simulate]
# beta = 2.0           # explicit strategy; defaults to the solved boundaries
# gamma = 1.0

[sweep]
c_min = 0.01
c_max = 10.0
steps = 25
"""
