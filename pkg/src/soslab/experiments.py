"""Harnesses that chain simulation and spectral pieces into scaling verdicts.

Each harness embeds the full parameter set and the seed in its report, so a
saved report re-runs to identical outputs.  Replicas fan out over a process
pool sized by the SOSLAB_WORKERS environment variable; every replica owns
stream index = its position in the task list, which makes results
independent of worker scheduling.
"""

import math
import multiprocessing
import os
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.stats

from .backend import kernels
from .catalog import catalog_to_dict, zero_catalog
from .dynamics import couple, exit_time
from .model import (
    CONSTRAINED,
    ModelParams,
    enumerate_configurations,
    log_weight,
    partition_function,
)
from .rng import RngSpec
from .spectral import FormReport, build_generator, spectral_gap

EXACT_CAP = 200_000
BETA_SOFT_FLOOR = 2.0


def worker_count():
    """Pool size: SOSLAB_WORKERS when set, else the machine's cpu count."""
    raw = os.environ.get("SOSLAB_WORKERS", "").strip()
    if raw:
        return max(1, int(raw))
    return os.cpu_count() or 1


def _map_tasks(fn, tasks):
    n = worker_count()
    if n <= 1 or len(tasks) < 2:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * n))
    with multiprocessing.Pool(n) as pool:
        return pool.map(fn, tasks, chunksize=chunk)


def _warn_small_beta(beta):
    if beta < BETA_SOFT_FLOOR:
        warnings.warn(
            "beta=%g is below the large-beta regime the asymptotic claims "
            "assume; treat verdicts as qualitative" % beta,
            stacklevel=3,
        )


# ---------------------------------------------------------------------------
# conditioned-initial sampler


def _box_configs(params, cut):
    if cut == 0:
        return [(0,) * params.L]
    inner = replace(params, M=cut, measure_kind=CONSTRAINED)
    return enumerate_configurations(inner)


def _advance(state, params, cut, steps, bitgen):
    if params.catalog.is_zero:
        return kernels.metropolis_zero(state, params.beta, cut, steps, bitgen)
    shapes = tuple((s.sites, s.weight) for s in params.catalog.shapes)
    strip = params.M if params.measure_kind == CONSTRAINED else -1
    return kernels.metropolis_catalog(
        state, params.beta, cut, steps, bitgen, shapes, strip
    )


def _scale_reduction(records):
    """Split-chain potential scale reduction on per-segment summaries."""
    x = np.asarray(records, dtype=np.float64)
    half = x.shape[1] // 2
    x = x[:, half:]
    if x.shape[1] < 2:
        return math.inf
    within = x.var(axis=1, ddof=1).mean()
    between = x.shape[1] * x.mean(axis=1).var(ddof=1)
    if within == 0.0:
        return 1.0 if between == 0.0 else math.inf
    k = x.shape[1]
    var_plus = (k - 1) / k * within + between / k
    return math.sqrt(var_plus / within)


def sample_conditioned(params, cut, n, rng, chains=4, max_rounds=11):
    """Draw n configurations from the measure conditioned on a height box.

    The target is params' own measure restricted to {max|phi| <= cut}.
    Small boxes are sampled exactly by enumeration; larger ones run
    parallel Metropolis chains from dispersed flat starts and require the
    scale-reduction statistic of the mean height to fall below 1.05 before
    any draw is taken.  The chain path consumes stream indices rng.stream
    through rng.stream + chains - 1.
    """
    cut = int(cut)
    n = int(n)
    if n < 1:
        raise ValueError("need at least one draw")
    if cut < 0:
        raise ValueError("conditioning box must be nonempty")
    if params.M is not None:
        cut = min(cut, params.M)
    if (2 * cut + 1) ** params.L <= EXACT_CAP:
        box = _box_configs(params, cut)
        logw = np.array([log_weight(c, params) for c in box])
        p = np.exp(logw - logw.max())
        p /= p.sum()
        idx = rng.generator().choice(len(box), size=n, p=p)
        return [box[int(i)] for i in idx]

    heights = np.round(np.linspace(-cut, cut, chains)).astype(int)
    states = [(int(h),) * params.L for h in heights]
    streams = [rng.child(rng.stream + c).bit_generator() for c in range(chains)]

    def advance(c, steps):
        states[c] = _advance(states[c], params, cut, steps, streams[c])

    segment = 50 * params.L
    segments_per_round = 16
    records = [[] for _ in range(chains)]
    converged = False
    for _ in range(max_rounds):
        for _ in range(segments_per_round):
            for c in range(chains):
                advance(c, segment)
                records[c].append(float(np.mean(states[c])))
        if _scale_reduction(records) < 1.05:
            converged = True
            break
        segment *= 2
    if not converged:
        raise RuntimeError("conditioned sampler failed its convergence check")

    draws = []
    for i in range(n):
        c = i % chains
        advance(c, segment)
        draws.append(states[c])
    return draws


# ---------------------------------------------------------------------------
# scaling harnesses


@dataclass(frozen=True)
class ScalingReport:
    """Grid of one scalar metric with an optional log-log scaling fit."""

    metric: str
    grid: tuple
    values: tuple
    censored: tuple
    replicas: int | None
    slope: float | None
    slope_ci: tuple | None
    verdict: bool
    config: dict
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "metric": self.metric,
            "grid": [list(g) for g in self.grid],
            "values": list(self.values),
            "censored": list(self.censored),
            "replicas": self.replicas,
            "slope": self.slope,
            "slope_ci": None if self.slope_ci is None else list(self.slope_ci),
            "verdict": bool(self.verdict),
            "extra": self.extra,
        }

    def csv_rows(self):
        header = ["L", "M", "beta", self.metric, "censored"]
        rows = [
            [g[0], g[1], g[2], v, c]
            for g, v, c in zip(self.grid, self.values, self.censored)
        ]
        return header, rows


def _exit_worker(task):
    params, start, horizon, spec = task
    s = exit_time(start, params, spec, horizon=horizon)
    return s.time, s.censored


def exit_time_scaling(
    Ls, beta, eps, alpha, replicas, rng, catalog=None, horizon=math.inf
):
    """Median exit time from region A per L, with a log-log slope fit.

    Each L uses M = L // 2 and starts drawn from the constrained measure
    conditioned on the core box {max|phi| <= alpha*L}.  Grid points whose
    median is censored are excluded with a warning; the slope is fit only
    when at least four points survive.
    """
    _warn_small_beta(beta)
    replicas = int(replicas)
    if replicas < 1:
        raise ValueError("need at least one replica")
    cat = zero_catalog() if catalog is None else catalog
    config = {
        "harness": "exit_time_scaling",
        "Ls": [int(x) for x in Ls],
        "beta": beta,
        "eps": eps,
        "alpha": alpha,
        "replicas": replicas,
        "horizon": None if math.isinf(horizon) else horizon,
        "seed": rng.seed,
        "stream": rng.stream,
        "catalog": catalog_to_dict(cat),
    }
    grid, values, censored = [], [], []
    block = replicas + 8
    for g, L in enumerate(int(x) for x in Ls):
        params = ModelParams(
            L=L,
            M=L // 2,
            beta=beta,
            catalog=cat,
            measure_kind=CONSTRAINED,
            region_eps=eps,
            region_alpha=alpha,
        )
        if params.b_cutoff > params.a_cutoff:
            raise ValueError("core box must sit inside region A")
        if params.a_cutoff >= params.M:
            raise ValueError(
                "L=%d puts region A's edge at the box wall; no exit exists" % L
            )
        base = rng.stream + g * block
        starts = sample_conditioned(
            params, params.b_cutoff, replicas, rng.child(base)
        )
        tasks = [
            (params, starts[r], horizon, rng.child(base + 8 + r))
            for r in range(replicas)
        ]
        out = _map_tasks(_exit_worker, tasks)
        times = np.array([t for t, c in out if not c])
        n_cens = sum(1 for _, c in out if c)
        grid.append((L, L // 2, beta))
        censored.append(n_cens)
        med = float(np.median(np.concatenate([times, np.full(n_cens, np.inf)])))
        if not math.isfinite(med):
            warnings.warn("L=%d median is censored; point excluded" % L, stacklevel=2)
            values.append(None)
        else:
            values.append(med)
    pts = [(g[0], v) for g, v in zip(grid, values) if v is not None]
    slope = ci = None
    if len(pts) >= 4:
        fit = scipy.stats.linregress(
            np.log([p[0] for p in pts]), np.log([p[1] for p in pts])
        )
        half = scipy.stats.t.ppf(0.975, len(pts) - 2) * fit.stderr
        slope = float(fit.slope)
        ci = (slope - float(half), slope + float(half))
    return ScalingReport(
        metric="median_exit_time",
        grid=tuple(grid),
        values=tuple(values),
        censored=tuple(censored),
        replicas=replicas,
        slope=slope,
        slope_ci=ci,
        verdict=slope is not None,
        config=config,
    )


def gap_scaling(grid, beta, catalog=None, truncation=4, flag_tol=0.05):
    """Normalized auxiliary gaps lambda1 * L * max(L, M^2) over an (L, M) grid.

    Verdict: all normalized gaps positive and within one decade of each
    other.  Each point is re-solved at a coarser truncation; points whose
    gap moves by more than flag_tol are flagged in the censored column.
    """
    _warn_small_beta(beta)
    cat = zero_catalog() if catalog is None else catalog
    config = {
        "harness": "gap_scaling",
        "grid": [[int(a), int(b)] for a, b in grid],
        "beta": beta,
        "truncation": truncation,
        "flag_tol": flag_tol,
        "catalog": catalog_to_dict(cat),
    }
    pts, values, flags = [], [], []
    for L, M in grid:
        params = ModelParams(
            L=int(L), M=int(M), beta=beta, catalog=cat, measure_kind="auxiliary"
        )
        lam = spectral_gap(build_generator(params, truncation=truncation))
        coarse = spectral_gap(
            build_generator(params, truncation=max(2, truncation - 2))
        )
        flagged = abs(lam - coarse) > flag_tol * lam
        if flagged:
            warnings.warn(
                "gap at L=%d M=%d still moving under truncation" % (L, M),
                stacklevel=2,
            )
        pts.append((int(L), int(M), beta))
        values.append(lam * L * max(L, M * M))
        flags.append(int(flagged))
    finite = [v for v in values if v is not None]
    verdict = bool(finite) and min(finite) > 0 and max(finite) <= 10 * min(finite)
    return ScalingReport(
        metric="normalized_gap",
        grid=tuple(pts),
        values=tuple(values),
        censored=tuple(flags),
        replicas=None,
        slope=None,
        slope_ci=None,
        verdict=verdict,
        config=config,
        extra={"truncation": truncation},
    )


# ---------------------------------------------------------------------------
# coupling fidelity


@dataclass(frozen=True)
class CouplingFidelityReport:
    """MC estimate of P(sigma <= t, sigma <= tau_bar) with a 95% interval."""

    L: int
    beta: float
    eps: float
    t: float
    replicas: int
    n_decoupled: int
    estimate: float
    ci: tuple
    upper_only: bool
    normalized: float
    config: dict

    def to_dict(self):
        return {
            "L": self.L,
            "beta": self.beta,
            "eps": self.eps,
            "t": self.t,
            "replicas": self.replicas,
            "n_decoupled": self.n_decoupled,
            "estimate": self.estimate,
            "ci": list(self.ci),
            "upper_only": self.upper_only,
            "normalized": self.normalized,
        }


def _couple_worker(task):
    params, start, horizon, spec = task
    tr = couple(start, horizon, params, spec, record=False)
    hit = tr.sigma is not None and (tr.tau_bar is None or tr.sigma <= tr.tau_bar)
    return int(hit)


def coupling_fidelity(L, beta, eps, t, replicas, rng, catalog=None):
    """Estimate the probability that the coupled pair splits inside A by t.

    Starts are drawn from the constrained measure conditioned on region A;
    zero observed decouplings yield a one-sided rule-of-three interval.
    """
    _warn_small_beta(beta)
    L = int(L)
    replicas = int(replicas)
    cat = zero_catalog() if catalog is None else catalog
    params = ModelParams(
        L=L,
        M=L // 2,
        beta=beta,
        catalog=cat,
        measure_kind=CONSTRAINED,
        region_eps=eps,
    )
    config = {
        "harness": "coupling_fidelity",
        "L": L,
        "beta": beta,
        "eps": eps,
        "t": t,
        "replicas": replicas,
        "seed": rng.seed,
        "stream": rng.stream,
        "catalog": catalog_to_dict(cat),
    }
    starts = sample_conditioned(params, params.a_cutoff, replicas, rng)
    tasks = [
        (params, starts[r], float(t), rng.child(rng.stream + 8 + r))
        for r in range(replicas)
    ]
    hits = _map_tasks(_couple_worker, tasks)
    k = int(sum(hits))
    p = k / replicas
    if k == 0:
        ci = (0.0, 3.0 / replicas)
    else:
        half = 1.96 * math.sqrt(p * (1.0 - p) / replicas)
        ci = (max(0.0, p - half), min(1.0, p + half))
    return CouplingFidelityReport(
        L=L,
        beta=beta,
        eps=eps,
        t=float(t),
        replicas=replicas,
        n_decoupled=k,
        estimate=p,
        ci=ci,
        upper_only=k == 0,
        normalized=p / (L * float(t)),
        config=config,
    )


# ---------------------------------------------------------------------------
# density-ratio bound


def _geometric_series(beta):
    q = math.exp(-beta)
    return (1.0 + q) / (1.0 - q)


def radon_nikodym_bound(
    L, beta, eps, alpha, catalog=None, truncation=None, sample_size=4000, rng=None
):
    """Worst density ratio of the conditioned measure against the auxiliary one.

    Computes sup over the core box B of mu(phi|B)/mubar(phi) and checks it
    against exp(w_hat) / mubar(B), where w_hat is the computed supremum of
    the long-range energy difference between the box strip and the
    unbounded strip.  Exact by enumeration when B is small; otherwise the
    supremum is scanned over draws from mu(.|B) and reported in the
    normalization-free conditional form sup mu(phi|B)/mubar(phi|B).
    """
    L = int(L)
    cat = zero_catalog() if catalog is None else catalog
    params = ModelParams(
        L=L,
        M=L // 2,
        beta=beta,
        catalog=cat,
        measure_kind=CONSTRAINED,
        region_eps=eps,
        region_alpha=alpha,
    )
    cut_b = params.b_cutoff
    if cut_b > params.a_cutoff:
        raise ValueError("core box must sit inside region A")
    paux = params.with_kind("auxiliary")
    if truncation is None:
        truncation = max(4, 2 * cut_b + 2)
    if truncation < 2 * cut_b:
        raise ValueError("truncation cannot cut the core box")

    n_b = (2 * cut_b + 1) ** L
    extra = {"alpha": alpha, "eps": eps, "core_cutoff": cut_b}
    if n_b <= EXACT_CAP:
        box = _box_configs(params, cut_b)
        lw_mu = np.array([log_weight(c, params) for c in box])
        lw_bar = np.array([log_weight(c, paux) for c in box])
        diff = lw_mu - lw_bar
        w_hat = float(np.max(np.abs(diff)))
        mu_cond = np.exp(lw_mu - lw_mu.max())
        mu_cond /= mu_cond.sum()
        bar_cond = np.exp(lw_bar - lw_bar.max())
        bar_cond /= bar_cond.sum()
        sup_cond = float(np.max(mu_cond / bar_cond))
        if cat.is_zero:
            zbar = (2 * params.M + 1) * _geometric_series(beta) ** (L - 1)
        else:
            zbar, zrep = partition_function(paux, truncation=truncation)
            extra["z_converged"] = bool(zrep.converged)
        mass_b = float(np.sum(np.exp(lw_bar)) / zbar)
        value = sup_cond / mass_b
        bound = math.exp(w_hat) / mass_b
        extra.update(
            {
                "method": "exhaustive",
                "mu_bar_B": mass_b,
                "scale": "absolute",
            }
        )
    else:
        if rng is None:
            rng = RngSpec(0, 0)
        draws = sample_conditioned(params, cut_b, sample_size, rng)
        diff = np.array(
            [log_weight(c, params) - log_weight(c, paux) for c in draws]
        )
        w_hat = float(np.max(np.abs(diff)))
        mean_inv = float(np.mean(np.exp(-diff)))
        sup_cond = float(np.max(np.exp(diff))) * mean_inv
        value = sup_cond
        bound = math.exp(w_hat)
        extra.update(
            {
                "method": "sampled",
                "n_samples": sample_size,
                "scale": "conditional",
            }
        )
    extra["bound"] = bound
    extra["w_hat"] = w_hat
    extra["holds"] = bool(value <= bound * (1.0 + 1e-12))
    extra["slack"] = bound / value if value > 0 else math.inf
    return FormReport(
        name="radon_nikodym_bound",
        value=value,
        L=L,
        M=params.M,
        beta=beta,
        R=None if cat.is_zero and n_b <= EXACT_CAP else int(truncation),
        space_size=int(n_b if n_b <= EXACT_CAP else sample_size),
        extra=extra,
    )
