"""Pure-Python event loops for the hot sampling paths.

This module is the fallback twin of the compiled extension soslab._kernels.
Both consume uniforms from the same bit-generator stream in the same order
and perform the same arithmetic in the same order, so trajectories agree
bit for bit across the two implementations.  Every routine takes M = -1 to
mean "no height bound" and aux = 1 to bound only the first site.
"""

import math

import numpy as np

from .geometry import attachment_delta

COMPILED = False


def _rate(phi, L, j, d, beta_table, M, aux):
    new = phi[j] + d
    if M >= 0:
        if aux:
            if j == 0 and (new > M or new < -M):
                return 0.0
        elif new > M or new < -M:
            return 0.0
    dh = 0
    if j > 0:
        dh += abs(new - phi[j - 1]) - abs(phi[j] - phi[j - 1])
    if j < L - 1:
        dh += abs(phi[j + 1] - new) - abs(phi[j + 1] - phi[j])
    return beta_table[dh + 2]


def _half_step_table(beta):
    # rate for a height move with gradient-energy change dh is exp(-beta*dh/2)
    return [math.exp(-0.5 * beta * (i - 2)) for i in range(5)]


def simulate_zero(phi0, beta, M, aux, horizon, exit_cut, max_events, record, bitgen):
    """Gillespie loop; returns (times, sites, dirs, final, n, end_time, exit_t).

    Stops at the first of: horizon reached (no event at the cut), height
    norm exceeding exit_cut at a jump (exit_t set, run ends), max_events
    applied.  sites in the returned arrays are 1-based; exit_t is nan when
    no exit happened.
    """
    gen = np.random.Generator(bitgen)
    L = len(phi0)
    phi = [int(v) for v in phi0]
    table = _half_step_table(beta)
    rates = [0.0] * (2 * L)
    times, sites, dirs = [], [], []
    t = 0.0
    n = 0
    exit_t = math.nan
    end = horizon
    while True:
        lam = 0.0
        for idx in range(2 * L):
            j = idx >> 1
            d = 1 if (idx & 1) == 0 else -1
            r = _rate(phi, L, j, d, table, M, aux)
            rates[idx] = r
            lam += r
        if lam == 0.0:
            raise RuntimeError("absorbing state reached; rates vanished")
        u1 = gen.random()
        dt = -math.log(1.0 - u1) / lam
        if t + dt > horizon:
            end = horizon
            break
        t += dt
        u2 = gen.random()
        target = u2 * lam
        cum = 0.0
        pick = 2 * L - 1
        for idx in range(2 * L):
            cum += rates[idx]
            if target < cum:
                pick = idx
                break
        j = pick >> 1
        d = 1 if (pick & 1) == 0 else -1
        phi[j] += d
        n += 1
        if record:
            times.append(t)
            sites.append(j + 1)
            dirs.append(d)
        if exit_cut >= 0 and (phi[j] > exit_cut or phi[j] < -exit_cut):
            exit_t = t
            end = t
            break
        if max_events >= 0 and n >= max_events:
            end = t
            break
    return (
        np.asarray(times, dtype=np.float64),
        np.asarray(sites, dtype=np.int32),
        np.asarray(dirs, dtype=np.int32),
        tuple(phi),
        n,
        end,
        exit_t,
    )


def couple_zero(phi0, beta, M, exit_cut, horizon, record, bitgen):
    """Merged-clock thinning loop driving a constrained and an auxiliary copy.

    Marks arrive at constant rate 2*L*exp(beta); each consumes exactly three
    uniforms (holding time, site/direction index, thinning level).  A copy
    applies the move iff its own rate strictly exceeds level*c_max.  Only
    marks where at least one copy moved are recorded.  Returns
    (times, sites, dirs, applied1, applied2, sigma, tau, tau_bar,
    final1, final2, n_marks); sigma/tau/tau_bar are nan when not reached.
    Without recording, the loop ends early once all three are known.
    """
    gen = np.random.Generator(bitgen)
    L = len(phi0)
    phi1 = [int(v) for v in phi0]
    phi2 = [int(v) for v in phi0]
    table = _half_step_table(beta)
    cmax = math.exp(beta)
    total = 2 * L * cmax
    times, sites, dirs, app1, app2 = [], [], [], [], []
    t = 0.0
    n_marks = 0
    sigma = math.nan
    tau = math.nan
    tau_bar = math.nan
    coupled = True
    while True:
        u1 = gen.random()
        t += -math.log(1.0 - u1) / total
        if t > horizon:
            break
        n_marks += 1
        u2 = gen.random()
        idx = int(u2 * (2 * L))
        if idx >= 2 * L:
            idx = 2 * L - 1
        u3 = gen.random()
        level = u3 * cmax
        j = idx >> 1
        d = 1 if (idx & 1) == 0 else -1
        c1 = _rate(phi1, L, j, d, table, M, 0)
        c2 = _rate(phi2, L, j, d, table, M, 1)
        a1 = c1 > level
        a2 = c2 > level
        if a1:
            phi1[j] += d
        if a2:
            phi2[j] += d
        if a1 or a2:
            if record:
                times.append(t)
                sites.append(j + 1)
                dirs.append(d)
                app1.append(1 if a1 else 0)
                app2.append(1 if a2 else 0)
            if coupled and a1 != a2:
                sigma = t
                coupled = False
            if a1 and math.isnan(tau) and (phi1[j] > exit_cut or phi1[j] < -exit_cut):
                tau = t
            if a2 and math.isnan(tau_bar) and (
                phi2[j] > exit_cut or phi2[j] < -exit_cut
            ):
                tau_bar = t
            if (
                not record
                and not math.isnan(sigma)
                and not math.isnan(tau)
                and not math.isnan(tau_bar)
            ):
                break
    return (
        np.asarray(times, dtype=np.float64),
        np.asarray(sites, dtype=np.int32),
        np.asarray(dirs, dtype=np.int32),
        np.asarray(app1, dtype=np.int8),
        np.asarray(app2, dtype=np.int8),
        sigma,
        tau,
        tau_bar,
        tuple(phi1),
        tuple(phi2),
        n_marks,
    )


def metropolis_zero(phi0, beta, cut, n_steps, bitgen):
    """Metropolis chain on the box of height norm <= cut; returns the final state.

    Each step consumes exactly three uniforms (site, direction, acceptance)
    whether or not the proposal is admissible.
    """
    gen = np.random.Generator(bitgen)
    L = len(phi0)
    phi = [int(v) for v in phi0]
    table = [math.exp(-beta * (i - 2)) for i in range(5)]
    for _ in range(n_steps):
        u1 = gen.random()
        j = int(u1 * L)
        if j >= L:
            j = L - 1
        u2 = gen.random()
        d = 1 if u2 < 0.5 else -1
        u3 = gen.random()
        new = phi[j] + d
        if new > cut or new < -cut:
            continue
        dh = 0
        if j > 0:
            dh += abs(new - phi[j - 1]) - abs(phi[j] - phi[j - 1])
        if j < L - 1:
            dh += abs(phi[j + 1] - new) - abs(phi[j + 1] - phi[j])
        if u3 < table[dh + 2]:
            phi[j] = new
    return tuple(phi)


def metropolis_catalog(phi0, beta, cut, n_steps, bitgen, shapes, strip_M):
    """Metropolis chain on the box with the long-range catalog term.

    Same three-uniform step discipline as metropolis_zero.  ``shapes`` is a
    tuple of (sites, weight) pairs; ``strip_M`` bounds the strip holding the
    catalog translates, -1 meaning unbounded.  The box check against cut is
    assumed to subsume any height constraint of the underlying measure.
    """
    gen = np.random.Generator(bitgen)
    L = len(phi0)
    phi = [int(v) for v in phi0]
    M = None if strip_M < 0 else strip_M
    for _ in range(n_steps):
        u1 = gen.random()
        j = int(u1 * L)
        if j >= L:
            j = L - 1
        u2 = gen.random()
        d = 1 if u2 < 0.5 else -1
        u3 = gen.random()
        new = phi[j] + d
        if new > cut or new < -cut:
            continue
        dh = 0
        if j > 0:
            dh += abs(new - phi[j - 1]) - abs(phi[j] - phi[j - 1])
        if j < L - 1:
            dh += abs(phi[j + 1] - new) - abs(phi[j + 1] - phi[j])
        dl = -beta * dh - attachment_delta(tuple(phi), j + 1, d, shapes, M)
        if dl >= 0.0 or u3 < math.exp(dl):
            phi[j] = new
    return tuple(phi)
