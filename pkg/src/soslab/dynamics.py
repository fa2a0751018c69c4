"""Continuous-time height dynamics: jump rates, Gillespie runs, exit times,
and the two-process thinning coupling.

Rates follow the square-root form c(phi, psi) = (w(psi)/w(phi))^(1/2) for
single-site moves, evaluated as exp of half the local log-weight change, so
detailed balance is a log-space identity.  The empty-catalog fast path runs
in the selected backend kernels; catalogs route through the generic Python
driver built on the incremental weight delta.
"""

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .backend import kernels
from .catalog import block_touch_weight
from .model import (
    AUXILIARY,
    CONSTRAINED,
    NEG_INF,
    delta_log_weight,
    enumerate_configurations,
    log_weight,
)
from .rng import RngSpec

__all__ = [
    "Move",
    "TrajectoryEvent",
    "Trajectory",
    "ExitSample",
    "CouplingEvent",
    "CouplingTrace",
    "RngSpec",
    "jump_rate",
    "rate_bound",
    "simulate",
    "exit_time",
    "couple",
    "rate_ratio_deviation",
    "write_trajectory",
    "write_coupling",
]


@dataclass(frozen=True)
class Move:
    """One unit height move: site is 1-based, direction is +1 or -1."""

    site: int
    direction: int

    def __post_init__(self):
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        if self.site < 1:
            raise ValueError("site index is 1-based")


@dataclass(frozen=True)
class TrajectoryEvent:
    time: float
    move: Move
    accepted: bool = True


@dataclass(frozen=True)
class Trajectory:
    """Event-driven realization; events live in parallel numpy arrays."""

    start: tuple
    final: tuple
    horizon: float
    end_time: float
    times: np.ndarray
    sites: np.ndarray
    dirs: np.ndarray
    n_events: int

    def __len__(self):
        return len(self.times)

    def __iter__(self):
        for t, k, d in zip(self.times, self.sites, self.dirs):
            yield TrajectoryEvent(float(t), Move(int(k), int(d)))


@dataclass(frozen=True)
class ExitSample:
    """First time the height norm left region A; censored at the horizon."""

    time: float
    censored: bool
    n_events: int
    final: tuple


@dataclass(frozen=True)
class CouplingEvent:
    time: float
    move: Move
    applied_phi: bool
    applied_phibar: bool

    @property
    def proc(self):
        if self.applied_phi and self.applied_phibar:
            return "both"
        return "phi" if self.applied_phi else "phibar"


@dataclass(frozen=True)
class CouplingTrace:
    """Joint record of the constrained (phi) and auxiliary (phibar) copies.

    sigma is the first time the two height profiles differ, tau/tau_bar the
    respective exit times from region A; each is None when not reached
    within the horizon.  events hold only marks where at least one copy
    moved.
    """

    start: tuple
    horizon: float
    sigma: float | None
    tau: float | None
    tau_bar: float | None
    final_phi: tuple
    final_phibar: tuple
    n_marks: int
    times: np.ndarray
    sites: np.ndarray
    dirs: np.ndarray
    applied_phi: np.ndarray
    applied_phibar: np.ndarray

    def __len__(self):
        return len(self.times)

    def __iter__(self):
        for t, k, d, a1, a2 in zip(
            self.times, self.sites, self.dirs, self.applied_phi, self.applied_phibar
        ):
            yield CouplingEvent(float(t), Move(int(k), int(d)), bool(a1), bool(a2))

    def check_agreement_before_sigma(self):
        """Both copies move together at every recorded mark before sigma."""
        if self.sigma is None:
            cut = len(self.times)
        else:
            cut = int(np.searchsorted(self.times, self.sigma))
        return bool(
            np.all(self.applied_phi[:cut] == self.applied_phibar[:cut])
        )


def jump_rate(cfg, move, params):
    """Rate of the move out of cfg; exactly 0 into or out of zero mass."""
    if not 1 <= move.site <= params.L:
        raise ValueError("move site outside 1..L")
    if not params.in_band(cfg):
        return 0.0
    dlw = delta_log_weight(cfg, params, move.site, move.direction)
    if dlw == NEG_INF:
        return 0.0
    return math.exp(0.5 * dlw)


def rate_bound(params):
    """Uniform bound on every rate either measure kind can realize.

    A single move changes the gradient energy by at most 2 and flips
    attachments only inside a 3x3 block of dual sites, so the catalog term
    moves by at most the total translate weight touching such a block.
    """
    return math.exp(params.beta + 2.0 * block_touch_weight(params.catalog))


def _rates_all(phi, params):
    rates = []
    for idx in range(2 * params.L):
        j = idx >> 1
        d = 1 if (idx & 1) == 0 else -1
        dlw = delta_log_weight(phi, params, j + 1, d)
        rates.append(0.0 if dlw == NEG_INF else math.exp(0.5 * dlw))
    return rates


def _simulate_generic(start, params, horizon, exit_cut, max_events, record, gen):
    L = params.L
    phi = tuple(start)
    times, sites, dirs = [], [], []
    t = 0.0
    n = 0
    exit_t = math.nan
    end = horizon
    while True:
        rates = _rates_all(phi, params)
        lam = 0.0
        for r in rates:
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
        phi = phi[:j] + (phi[j] + d,) + phi[j + 1 :]
        n += 1
        if record:
            times.append(t)
            sites.append(j + 1)
            dirs.append(d)
        if exit_cut >= 0 and abs(phi[j]) > exit_cut:
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
        phi,
        n,
        end,
        exit_t,
    )


def _run(start, params, horizon, exit_cut, max_events, record, rng):
    m_flag = -1 if params.M is None else params.M
    aux = 1 if params.measure_kind == AUXILIARY else 0
    if params.catalog.is_zero:
        return kernels.simulate_zero(
            start,
            float(params.beta),
            m_flag,
            aux,
            float(horizon),
            int(exit_cut),
            int(max_events),
            1 if record else 0,
            rng.bit_generator(),
        )
    return _simulate_generic(
        start, params, horizon, exit_cut, max_events, record, rng.generator()
    )


def simulate(start, horizon, params, rng, max_events=-1, record=True):
    """Gillespie realization from start up to the time horizon."""
    start = tuple(int(v) for v in start)
    if len(start) != params.L:
        raise ValueError("start length differs from params.L")
    if log_weight(start, params) == NEG_INF:
        raise ValueError("start carries zero mass")
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    times, sites, dirs, final, n, end, _ = _run(
        start, params, horizon, -1, max_events, record, rng
    )
    return Trajectory(start, tuple(final), horizon, end, times, sites, dirs, n)


def exit_time(start, params, rng, horizon=math.inf, region_eps=None):
    """First jump time at which the height norm leaves region A.

    Exits can only happen at jumps, so the sample is exact for the
    event-driven process.  A run reaching the horizon first returns a
    right-censored sample.
    """
    start = tuple(int(v) for v in start)
    if log_weight(start, params) == NEG_INF:
        raise ValueError("start carries zero mass")
    eps = params.region_eps if region_eps is None else region_eps
    if not 0 < eps < 1:
        raise ValueError("region_eps must lie in (0, 1)")
    cut = math.floor((1.0 - eps) * params.L / 2.0)
    if (
        math.isinf(horizon)
        and params.measure_kind == CONSTRAINED
        and params.M is not None
        and cut >= params.M
    ):
        raise ValueError("region A covers the whole box; the exit never comes")
    if max(abs(v) for v in start) > cut:
        raise ValueError("start lies outside region A")
    _, _, _, final, n, end, exit_t = _run(
        start, params, horizon, cut, -1, False, rng
    )
    if math.isnan(exit_t):
        return ExitSample(float(horizon), True, n, tuple(final))
    return ExitSample(float(exit_t), False, n, tuple(final))


def _couple_generic(start, p1, p2, cmax, exit_cut, horizon, record, gen):
    L = p1.L
    phi1 = tuple(start)
    phi2 = tuple(start)
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
        dlw1 = delta_log_weight(phi1, p1, j + 1, d)
        dlw2 = delta_log_weight(phi2, p2, j + 1, d)
        c1 = 0.0 if dlw1 == NEG_INF else math.exp(0.5 * dlw1)
        c2 = 0.0 if dlw2 == NEG_INF else math.exp(0.5 * dlw2)
        a1 = c1 > level
        a2 = c2 > level
        if a1:
            phi1 = phi1[:j] + (phi1[j] + d,) + phi1[j + 1 :]
        if a2:
            phi2 = phi2[:j] + (phi2[j] + d,) + phi2[j + 1 :]
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
            if a1 and math.isnan(tau) and abs(phi1[j]) > exit_cut:
                tau = t
            if a2 and math.isnan(tau_bar) and abs(phi2[j]) > exit_cut:
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
        phi1,
        phi2,
        n_marks,
    )


def couple(start, horizon, params, rng, record=True):
    """Run the constrained and auxiliary copies on one thinned mark stream.

    Marks arrive at rate 2*L*c_max with c_max = rate_bound(params); each
    mark carries a site, a direction, and a uniform level, and a copy
    applies the move iff its own rate strictly exceeds level * c_max.
    """
    start = tuple(int(v) for v in start)
    if params.M is None:
        raise ValueError("coupling needs a finite box height M")
    p1 = params.with_kind(CONSTRAINED)
    p2 = params.with_kind(AUXILIARY)
    if log_weight(start, p1) == NEG_INF or log_weight(start, p2) == NEG_INF:
        raise ValueError("start carries zero mass under one of the measures")
    cut = params.a_cutoff
    if params.catalog.is_zero:
        out = kernels.couple_zero(
            start,
            float(params.beta),
            params.M,
            int(cut),
            float(horizon),
            1 if record else 0,
            rng.bit_generator(),
        )
    else:
        out = _couple_generic(
            start, p1, p2, rate_bound(params), cut, horizon, record, rng.generator()
        )
    times, sites, dirs, app1, app2, sigma, tau, tau_bar, f1, f2, n_marks = out

    def _opt(x):
        return None if math.isnan(x) else float(x)

    trace = CouplingTrace(
        start,
        float(horizon),
        _opt(sigma),
        _opt(tau),
        _opt(tau_bar),
        tuple(f1),
        tuple(f2),
        int(n_marks),
        times,
        sites,
        dirs,
        app1,
        app2,
    )
    if record:
        assert trace.check_agreement_before_sigma()
    return trace


@dataclass(frozen=True)
class RateRatioReport:
    """Worst auxiliary/constrained rate discrepancy over region A."""

    deviation: float
    argmax_cfg: tuple | None
    argmax_move: Move | None
    edge_moves: int
    method: str
    n_checked: int


def rate_ratio_deviation(params, sample_size=2000, rng=None, enumerable_cap=200_000):
    """sup over phi in A and admissible moves of |c_bar/c - 1|.

    Exhaustive when the A-slice fits under enumerable_cap states, otherwise
    estimated over configurations sampled from the constrained measure
    restricted to A.  Moves with c = 0 but c_bar > 0 (box-edge moves) fall
    outside the ratio's domain and are counted separately.
    """
    if params.measure_kind != CONSTRAINED:
        raise ValueError("rate ratios compare against the constrained kind")
    p1 = params
    p2 = params.with_kind(AUXILIARY)
    cut = params.a_cutoff
    n_states = (2 * cut + 1) ** params.L
    if n_states <= enumerable_cap:
        if cut == 0:
            configs = [(0,) * params.L]
        else:
            configs = enumerate_configurations(
                replace(params, M=cut), size_cap=enumerable_cap
            )
        method = "exhaustive"
    else:
        if rng is None:
            rng = RngSpec(0, 0)
        configs = _sample_region(p1, cut, sample_size, rng)
        method = "sampled"
    worst = 0.0
    arg_cfg = None
    arg_move = None
    edge = 0
    for cfg in configs:
        for k in range(1, params.L + 1):
            for d in (1, -1):
                mv = Move(k, d)
                c = jump_rate(cfg, mv, p1)
                cb = jump_rate(cfg, mv, p2)
                if c == 0.0:
                    if cb > 0.0:
                        edge += 1
                    continue
                dev = abs(cb / c - 1.0)
                if dev > worst:
                    worst = dev
                    arg_cfg = cfg
                    arg_move = mv
    return RateRatioReport(worst, arg_cfg, arg_move, edge, method, len(configs))


def _sample_region(params, cut, n_samples, rng):
    """Configurations from the constrained measure restricted to the cut box."""
    from .experiments import sample_conditioned  # local import; no cycle at runtime

    return sample_conditioned(params, cut, n_samples, rng)


def write_trajectory(path, traj, params, rng_spec):
    """JSON-lines dump: header with params and seed, then one event per line."""
    header = {
        "params": params.to_dict(),
        "seed": rng_spec.seed,
        "stream": rng_spec.stream,
        "start": list(traj.start),
        "horizon": traj.horizon,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for t, k, d in zip(traj.times, traj.sites, traj.dirs):
            fh.write(json.dumps({"t": float(t), "k": int(k), "d": int(d)}) + "\n")


def write_coupling(path, trace, params, rng_spec):
    header = {
        "params": params.to_dict(),
        "seed": rng_spec.seed,
        "stream": rng_spec.stream,
        "start": list(trace.start),
        "horizon": trace.horizon,
        "sigma": trace.sigma,
        "tau": trace.tau,
        "tau_bar": trace.tau_bar,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for ev in trace:
            fh.write(
                json.dumps(
                    {
                        "t": ev.time,
                        "k": ev.move.site,
                        "d": ev.move.direction,
                        "proc": ev.proc,
                    }
                )
                + "\n"
            )
