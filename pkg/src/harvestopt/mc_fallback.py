"""Pure-numpy Monte Carlo backend, vectorised across paths.

Semantics are pinned to the compiled kernel: one standard normal per grid
step per path from a Philox stream keyed (seed, path_index); a step landing
at a non-positive state is retried as two half steps sharing the Brownian
increment split in half (up to 20 levels, then the path errors out); the
discount factor multiplies by exp(-r dt) per step for constant discount
rates and by the trapezoid rule on r otherwise; the running payoff uses the
trapezoid with the pre-jump right endpoint; interventions trigger at the
first grid time with state >= beta, harvesting K(state) - K(gamma) - c.

Per-path streams make results independent of the path count and identical
across backends.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.random import Generator, Philox

from .errors import StateEscapedDomain

MAX_HALVINGS = 20


def path_generators(seed, indices):
    return [Generator(Philox(key=np.array([seed, i], dtype=np.uint64)))
            for i in indices]


def is_constant_discount(r):
    probe = np.geomspace(1e-3, 1e3, 13)
    vals = np.asarray(r(probe), dtype=float)
    return bool(np.all(vals == vals[0]))


def _advance(drift, vol, X, dt, dW, depth, path_ids, t):
    """One Euler step with deterministic increment-splitting on rejection.

    Also accumulates the per-path discount exponent increment for the
    trapezoid rule; returned as (X_new, dLam) with dLam = None left to the
    caller for constant rates.
    """
    Xn = X + drift(X) * dt + vol(X) * dW
    bad = Xn <= 0.0
    if not bad.any():
        return Xn
    if depth >= MAX_HALVINGS:
        raise StateEscapedDomain(int(path_ids[bad][0]), t)
    half_dt = dt * 0.5
    sub = _advance(drift, vol, X[bad], half_dt, dW[bad] * 0.5, depth + 1,
                   path_ids[bad], t)
    sub = _advance(drift, vol, sub, half_dt, dW[bad] * 0.5, depth + 1,
                   path_ids[bad], t)
    Xn[bad] = sub
    return Xn


def simulate_batch(d, p, beta, gamma, x0, dt, n_steps, seed, path_start, n_paths,
                   time_chunk=4096, record=False):
    """Simulate paths path_start .. path_start+n_paths-1.

    Returns a dict of per-path arrays: value, running, harvest, disc_sum,
    n_interventions, disc3 (first three intervention discounts) and
    discount_at_end; with record=True (single-path inspection) also the
    state trace and intervention times.
    """
    drift, vol, r = d.drift, d.volatility, d.discount
    r_const = is_constant_discount(r)
    r0 = float(np.asarray(r(np.array([x0]))).ravel()[0])
    decay = math.exp(-r0 * dt)
    half_dt = 0.5 * dt
    sqdt = math.sqrt(dt)
    k_gamma = float(p.cum_k(np.asarray(gamma)))
    h_gamma = float(p.h(np.asarray(gamma)))
    c = p.c

    ids = np.arange(path_start, path_start + n_paths)
    gens = path_generators(seed, ids)

    X = np.full(n_paths, float(x0))
    D = np.ones(n_paths)
    J_run = np.zeros(n_paths)
    J_harv = np.zeros(n_paths)
    disc_sum = np.zeros(n_paths)
    n_int = np.zeros(n_paths, dtype=np.int64)
    disc3 = np.zeros((n_paths, 3))

    trace_states = trace_times = int_times = None
    if record:
        trace_states = np.empty((n_paths, n_steps + 1))
        trace_times = dt * np.arange(n_steps + 1)
        int_times = [[] for _ in range(n_paths)]

    # intervention at time 0- when starting at or above beta
    hit0 = X >= beta
    if hit0.any():
        J_harv[hit0] += p.cum_k(X[hit0]) - k_gamma - c
        disc_sum[hit0] += 1.0
        disc3[hit0, 0] = 1.0
        n_int[hit0] += 1
        X[hit0] = gamma
        if record:
            for j in np.flatnonzero(hit0):
                int_times[j].append(0.0)
    if record:
        trace_states[:, 0] = X                 # cadlag state at t = 0

    h_prev = np.asarray(p.h(X), dtype=float)
    buf = np.empty((n_paths, min(time_chunk, n_steps)))

    step = 0
    while step < n_steps:
        clen = min(time_chunk, n_steps - step)
        for j, g in enumerate(gens):
            g.standard_normal(out=buf[j, :clen])
        for s in range(clen):
            z = buf[:, s]
            X_pre = _advance(drift, vol, X, dt, sqdt * z, 0, ids, (step + s) * dt)
            D_prev = D
            if r_const:
                D = D * decay
            else:
                D = D * np.exp(-half_dt * (r(X) + r(X_pre)))
            h_pre = np.asarray(p.h(X_pre), dtype=float)
            J_run += half_dt * (D_prev * h_prev + D * h_pre)
            hit = X_pre >= beta
            if hit.any():
                J_harv[hit] += D[hit] * (p.cum_k(X_pre[hit]) - k_gamma - c)
                disc_sum[hit] += D[hit]
                which = n_int[hit]
                store = which < 3
                rows = np.flatnonzero(hit)[store]
                disc3[rows, which[store]] = D[hit][store]
                n_int[hit] += 1
                X_pre = np.where(hit, gamma, X_pre)
                h_pre = np.where(hit, h_gamma, h_pre)
                if record:
                    for j in np.flatnonzero(hit):
                        int_times[j].append((step + s + 1) * dt)
            X = X_pre
            h_prev = h_pre
            if record:
                trace_states[:, step + s + 1] = X
        step += clen

    out = {
        "value": J_run + J_harv,
        "running": J_run,
        "harvest": J_harv,
        "disc_sum": disc_sum,
        "n_interventions": n_int,
        "disc3": disc3,
        "discount_at_end": D,
    }
    if record:
        out["times"] = trace_times
        out["states"] = trace_states
        out["intervention_times"] = int_times
    return out


def simulate_coupled(d, p, beta, gamma, x0, dt_coarse, n_coarse, seed,
                     path_start, n_paths, subdivisions=(1, 2, 4)):
    """Common-random-number runs at dt, dt/2, dt/4 from one fine noise set.

    Normals are drawn once per path on the finest grid; coarser levels use
    the aggregated Brownian increments, so the three discretisations follow
    the same Brownian path and discretisation biases can be compared without
    the Monte Carlo noise dominating.
    """
    drift, vol, r = d.drift, d.volatility, d.discount
    if not is_constant_discount(r):
        raise ValueError("coupled refinement runs require a constant discount rate")
    r0 = float(np.asarray(r(np.array([x0]))).ravel()[0])
    k_gamma = float(p.cum_k(np.asarray(gamma)))
    h_gamma = float(p.h(np.asarray(gamma)))
    c = p.c
    m_fine = max(subdivisions)
    n_fine = n_coarse * m_fine
    sq_fine = math.sqrt(dt_coarse / m_fine)

    ids = np.arange(path_start, path_start + n_paths)
    gens = path_generators(seed, ids)
    out = {m: {"value": np.zeros(n_paths), "disc_sum": np.zeros(n_paths),
               "disc1": np.zeros(n_paths)} for m in subdivisions}

    chunk = 512
    for lo in range(0, n_paths, chunk):
        hi = min(lo + chunk, n_paths)
        nc = hi - lo
        zs = np.empty((nc, n_fine))
        for j in range(nc):
            gens[lo + j].standard_normal(out=zs[j])
        dW_fine = sq_fine * zs
        for m in subdivisions:
            agg = dW_fine.reshape(nc, n_coarse * m, m_fine // m).sum(axis=2)
            dt = dt_coarse / m
            res = _run_increments(drift, vol, p, beta, gamma, x0, r0, dt,
                                  agg, ids[lo:hi], k_gamma, h_gamma, c)
            for key in out[m]:
                out[m][key][lo:hi] = res[key]
    return out


def _run_increments(drift, vol, p, beta, gamma, x0, r0, dt, dW, ids,
                    k_gamma, h_gamma, c):
    n_paths, n_steps = dW.shape
    decay = math.exp(-r0 * dt)
    half_dt = 0.5 * dt
    X = np.full(n_paths, float(x0))
    D = np.ones(n_paths)
    J_run = np.zeros(n_paths)
    J_harv = np.zeros(n_paths)
    disc_sum = np.zeros(n_paths)
    disc1 = np.zeros(n_paths)
    seen = np.zeros(n_paths, dtype=bool)

    hit0 = X >= beta
    if hit0.any():
        J_harv[hit0] += p.cum_k(X[hit0]) - k_gamma - c
        disc_sum[hit0] += 1.0
        disc1[hit0] = 1.0
        seen[hit0] = True
        X[hit0] = gamma

    h_prev = np.asarray(p.h(X), dtype=float)
    for s in range(n_steps):
        X_pre = _advance(drift, vol, X, dt, dW[:, s], 0, ids, s * dt)
        D_prev = D
        D = D * decay
        h_pre = np.asarray(p.h(X_pre), dtype=float)
        J_run += half_dt * (D_prev * h_prev + D * h_pre)
        hit = X_pre >= beta
        if hit.any():
            J_harv[hit] += D[hit] * (p.cum_k(X_pre[hit]) - k_gamma - c)
            disc_sum[hit] += D[hit]
            first = hit & ~seen
            disc1[first] = D[first]
            seen |= hit
            X_pre = np.where(hit, gamma, X_pre)
            h_pre = np.where(hit, h_gamma, h_pre)
        X = X_pre
        h_prev = h_pre
    return {"value": J_run + J_harv, "disc_sum": disc_sum, "disc1": disc1}
