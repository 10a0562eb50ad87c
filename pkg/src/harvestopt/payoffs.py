"""Payoff data: running utility h, marginal harvest payoff k, fixed cost c.

The catalogue mirrors the worked model families used throughout the tests:

    power          h = x^alpha, k = 1
    capped-linear-a  h linear then flat (negative), k = 3-2x then x^-2
    capped-linear-b  h = a x^alpha then flat, k = 4-2x then x^-2 + 1
    exp-capped     exponential utility capped past x = 1, constant k
    piecewise-a/-b   the two quartic-tail pairs on the GBM test model

k may have kinks; their locations are declared so quadrature panels can be
split there.  K(x) = int_0^x k is supplied in closed form for every
catalogue payoff.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Tuple

import numpy as np

CATALOGUE_PAYOFFS = {
    "power": ("alpha", "c"),
    "capped-linear-a": ("alpha", "c"),
    "capped-linear-b": ("a", "alpha", "c"),
    "exp-capped": ("gamma", "kappa", "c"),
    "piecewise-a": ("c",),
    "piecewise-b": ("c",),
}


@dataclass(frozen=True)
class PayoffSpec:
    h: Callable
    k: Callable
    k_prime: Callable                    # a.e. derivative of k
    cum_k: Callable                      # K(x) = int_0^x k(s) ds
    c: float
    h_over_r_zero_limit: float           # declared lim_{x->0} h/r
    kinks: Tuple[float, ...] = ()
    h_lower_bound: float = 0.0
    cum_k_lower_bound: float = 0.0
    tag: str = "custom"
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.c > 0.0:
            raise ValueError("fixed cost c must be strictly positive")


def _arr(x):
    return np.asarray(x, dtype=float)


def _pw(x, below, above, cut=1.0):
    """Piecewise glue at a single cut point, evaluated without branch warnings."""
    x = _arr(x)
    xs = np.where(x <= cut, x, cut)
    xl = np.where(x > cut, x, cut)
    return np.where(x <= cut, below(xs), above(xl))


def power_payoff(alpha: float, c: float) -> PayoffSpec:
    if not 0.0 < alpha < 1.0:
        raise ValueError("power payoff requires alpha in (0, 1)")
    return PayoffSpec(
        h=lambda x: _arr(x) ** alpha,
        k=lambda x: np.ones_like(_arr(x)),
        k_prime=lambda x: np.zeros_like(_arr(x)),
        cum_k=lambda x: _arr(x),
        c=c,
        h_over_r_zero_limit=0.0,
        kinks=(),
        h_lower_bound=0.0,
        cum_k_lower_bound=0.0,
        tag="power",
        params={"alpha": alpha, "c": c},
    )


def capped_linear_a(alpha: float, c: float) -> PayoffSpec:
    """Decreasing linear-then-flat h with alpha slope; k = 3-2x then x^-2."""
    return PayoffSpec(
        h=lambda x: _pw(x, lambda y: -alpha * y, lambda y: np.full_like(y, -alpha)),
        k=lambda x: _pw(x, lambda y: 3.0 - 2.0 * y, lambda y: y ** -2),
        k_prime=lambda x: _pw(x, lambda y: np.full_like(y, -2.0), lambda y: -2.0 * y ** -3),
        cum_k=lambda x: _pw(x, lambda y: 3.0 * y - y**2, lambda y: 3.0 - 1.0 / y),
        c=c,
        h_over_r_zero_limit=0.0,
        kinks=(1.0,),
        h_lower_bound=-abs(alpha),
        cum_k_lower_bound=0.0,
        tag="capped-linear-a",
        params={"alpha": alpha, "c": c},
    )


def capped_linear_b(a: float, alpha: float, c: float) -> PayoffSpec:
    """Concave power-then-flat h; k = 4-2x then x^-2 + 1 (K grows linearly)."""
    if not 1.0 < alpha <= 2.0:
        raise ValueError("capped-linear-b requires alpha in (1, 2]")
    if not a > 0.0:
        raise ValueError("capped-linear-b requires a > 0")
    return PayoffSpec(
        h=lambda x: _pw(x, lambda y: a * y ** alpha, lambda y: np.full_like(y, a)),
        k=lambda x: _pw(x, lambda y: 4.0 - 2.0 * y, lambda y: y ** -2 + 1.0),
        k_prime=lambda x: _pw(x, lambda y: np.full_like(y, -2.0), lambda y: -2.0 * y ** -3),
        cum_k=lambda x: _pw(x, lambda y: 4.0 * y - y**2, lambda y: 3.0 + y - 1.0 / y),
        c=c,
        h_over_r_zero_limit=0.0,
        kinks=(1.0,),
        h_lower_bound=0.0,
        cum_k_lower_bound=0.0,
        tag="capped-linear-b",
        params={"a": a, "alpha": alpha, "c": c},
    )


def exp_capped(gamma: float, kappa: float, c: float) -> PayoffSpec:
    """Exponential utility switching to a decaying cap at x = 1, constant k.

    Designed for the mean-rev-sqrt model with rate alpha; the admissible
    range kappa < 1/(2 alpha) is checked at problem assembly.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("exp-capped requires gamma in (0, 1)")
    if not kappa > 0.0:
        raise ValueError("exp-capped requires kappa > 0")
    cap = math.e + math.exp(gamma) - 1.0
    # exponent clamp keeps far-field probes finite; the tail is never needed
    # beyond the point where it already dwarfs every other scale
    return PayoffSpec(
        h=lambda x: _pw(x, lambda y: np.expm1(y),
                        lambda y: cap - np.exp(np.minimum(gamma * y, 700.0))),
        k=lambda x: np.full_like(_arr(x), kappa),
        k_prime=lambda x: np.zeros_like(_arr(x)),
        cum_k=lambda x: kappa * _arr(x),
        c=c,
        h_over_r_zero_limit=0.0,
        kinks=(1.0,),
        h_lower_bound=-1e30,             # h -> -inf; bounded below only on compacts
        cum_k_lower_bound=0.0,
        tag="exp-capped",
        params={"gamma": gamma, "kappa": kappa, "c": c},
    )


def _quartic_tail_k():
    k = lambda x: _pw(x, lambda y: 6.0 - 5.0 * y, lambda y: y ** -5)
    k_prime = lambda x: _pw(x, lambda y: np.full_like(y, -5.0), lambda y: -5.0 * y ** -6)
    cum_k = lambda x: _pw(x, lambda y: 6.0 * y - 2.5 * y**2,
                          lambda y: 3.75 - 0.25 * y ** -4)
    return k, k_prime, cum_k


def piecewise_a(c: float) -> PayoffSpec:
    """First quartic-tail pair: h = 7x then 6 + x^-4."""
    k, k_prime, cum_k = _quartic_tail_k()
    return PayoffSpec(
        h=lambda x: _pw(x, lambda y: 7.0 * y, lambda y: 6.0 + y ** -4),
        k=k, k_prime=k_prime, cum_k=cum_k,
        c=c,
        h_over_r_zero_limit=0.0,
        kinks=(1.0,),
        h_lower_bound=0.0,
        cum_k_lower_bound=0.0,
        tag="piecewise-a",
        params={"c": c},
    )


def piecewise_b(c: float) -> PayoffSpec:
    """Second quartic-tail pair: h = 5x then 4 + x^-4."""
    k, k_prime, cum_k = _quartic_tail_k()
    return PayoffSpec(
        h=lambda x: _pw(x, lambda y: 5.0 * y, lambda y: 4.0 + y ** -4),
        k=k, k_prime=k_prime, cum_k=cum_k,
        c=c,
        h_over_r_zero_limit=0.0,
        kinks=(1.0,),
        h_lower_bound=0.0,
        cum_k_lower_bound=0.0,
        tag="piecewise-b",
        params={"c": c},
    )


def custom_payoff(h, k, k_prime, cum_k, c, h_over_r_zero_limit,
                  kinks=(), h_lower_bound=0.0, cum_k_lower_bound=0.0) -> PayoffSpec:
    return PayoffSpec(
        h=h, k=k, k_prime=k_prime, cum_k=cum_k, c=c,
        h_over_r_zero_limit=h_over_r_zero_limit,
        kinks=tuple(kinks),
        h_lower_bound=h_lower_bound,
        cum_k_lower_bound=cum_k_lower_bound,
        tag="custom",
        params={"c": c},
    )


def make_payoff(tag: str, **params) -> PayoffSpec:
    """Catalogue dispatch used by the CLI config layer."""
    factories = {
        "power": power_payoff,
        "capped-linear-a": capped_linear_a,
        "capped-linear-b": capped_linear_b,
        "exp-capped": exp_capped,
        "piecewise-a": piecewise_a,
        "piecewise-b": piecewise_b,
    }
    if tag not in factories:
        raise ValueError(f"unknown payoff tag {tag!r}; known: {sorted(factories)}")
    return factories[tag](**params)


def check_catalogue_compatibility(d, p) -> None:
    """Model-coupled parameter ranges for the catalogue pairings.

    Raises ValueError when a known (model, payoff) combination sits outside
    the range in which the standing assumptions are guaranteed.  Unknown
    combinations pass here and are policed by the unimodality certificate.
    """
    if p.tag == "power" and d.model_tag == "gbm":
        if not d.params["r"] > d.params["b"]:
            raise ValueError("power payoff on gbm requires r > b")
    if p.tag == "capped-linear-a" and d.model_tag == "gbm":
        b, sigma, r = d.params["b"], d.params["sigma"], d.params["r"]
        if not (b > r and r + b - sigma**2 > 0.0):
            raise ValueError("capped-linear-a on gbm requires b > r and r + b - sigma^2 > 0")
        if not p.params["alpha"] < 3.0 * (b - r):
            raise ValueError("capped-linear-a requires alpha < 3 (b - r)")
    if p.tag == "capped-linear-b" and d.model_tag == "gbm":
        b, sigma, r = d.params["b"], d.params["sigma"], d.params["r"]
        if not (b == r and b > 0.5 * sigma**2):
            raise ValueError("capped-linear-b on gbm requires b = r > sigma^2 / 2")
        bound = 1.5 * (2.0 * b + sigma**2) * (p.params["alpha"] - 1.0)
        if not p.params["a"] < bound:
            raise ValueError(f"capped-linear-b requires a < {bound}")
    if p.tag == "exp-capped":
        if d.model_tag != "mean-rev-sqrt":
            raise ValueError("exp-capped payoff is designed for the mean-rev-sqrt model")
        if not p.params["kappa"] < 0.5 / d.params["alpha"]:
            raise ValueError("exp-capped requires kappa < 1/(2 alpha)")
