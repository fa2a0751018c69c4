import json
import math

import numpy as np
import pytest

from soslab.catalog import PotentialCatalog, PotentialShape
from soslab.dynamics import (
    Move,
    RngSpec,
    couple,
    exit_time,
    jump_rate,
    rate_bound,
    rate_ratio_deviation,
    simulate,
    write_coupling,
    write_trajectory,
)
from soslab.model import (
    AUXILIARY,
    CONSTRAINED,
    ModelParams,
    enumerate_configurations,
    log_weight,
    partition_function,
    probability,
)

MIXED = PotentialCatalog(
    (
        PotentialShape(((0, 0),), 0.05),
        PotentialShape(((0, 0), (1, 0)), -0.03),
        PotentialShape(((0, 0), (0, 1), (1, 1)), 0.02),
    ),
    1.0,
)


def test_jump_rate_frozen_examples():
    beta = 1.7
    p = ModelParams(L=3, M=3, beta=beta)
    assert jump_rate((0, 0, 0), Move(2, +1), p) == pytest.approx(math.exp(-beta))
    assert jump_rate((0, 1, 0), Move(2, -1), p) == pytest.approx(math.exp(beta))
    tight = ModelParams(L=2, M=1, beta=beta)
    assert jump_rate((1, 0), Move(1, +1), tight) == 0.0
    assert jump_rate((2, 0), Move(1, -1), tight) == 0.0  # zero-mass source


def test_jump_rate_validates_site():
    p = ModelParams(L=2, M=1, beta=1.0)
    with pytest.raises(ValueError):
        jump_rate((0, 0), Move(3, +1), p)
    with pytest.raises(ValueError):
        Move(1, 2)


def test_rate_bound_trivial_values():
    assert rate_bound(ModelParams(L=3, M=2, beta=2.0)) == pytest.approx(math.exp(2.0))
    assert rate_bound(ModelParams(L=3, M=2, beta=0.0)) == 1.0


@pytest.mark.parametrize("kind", [CONSTRAINED, AUXILIARY])
@pytest.mark.parametrize("catalog", [None, MIXED])
def test_all_enumerated_rates_below_bound(kind, catalog):
    kwargs = {} if catalog is None else {"catalog": catalog}
    p = ModelParams(L=3, M=2, beta=1.2, measure_kind=kind, **kwargs)
    bound = rate_bound(p)
    top = 0.0
    for cfg in enumerate_configurations(p, truncation=2):
        for k in range(1, 4):
            for d in (1, -1):
                top = max(top, jump_rate(cfg, Move(k, d), p))
    assert top <= bound
    if catalog is None and kind == CONSTRAINED:
        assert top == pytest.approx(math.exp(1.2))  # a shrinking move realizes it


@pytest.mark.parametrize("kind", [CONSTRAINED, AUXILIARY])
@pytest.mark.parametrize("catalog", [None, MIXED])
def test_detailed_balance_log_identity(kind, catalog):
    kwargs = {} if catalog is None else {"catalog": catalog}
    p = ModelParams(L=3, M=1, beta=1.4, measure_kind=kind, **kwargs)
    for cfg in enumerate_configurations(p, truncation=2):
        lw = log_weight(cfg, p)
        if lw == -math.inf:
            continue
        for k in range(1, 4):
            for d in (1, -1):
                c = jump_rate(cfg, Move(k, d), p)
                if c == 0.0:
                    continue
                other = cfg[: k - 1] + (cfg[k - 1] + d,) + cfg[k:]
                lw2 = log_weight(other, p)
                back = jump_rate(other, Move(k, -d), p)
                assert back > 0.0
                res = (lw + math.log(c)) - (lw2 + math.log(back))
                assert abs(res) < 1e-12


def test_simulate_zero_horizon_is_empty():
    p = ModelParams(L=3, M=2, beta=1.0)
    traj = simulate((0, 1, 0), 0.0, p, RngSpec(5))
    assert len(traj) == 0
    assert traj.final == (0, 1, 0)
    assert traj.end_time == 0.0


def test_simulate_rejects_zero_mass_start():
    p = ModelParams(L=2, M=1, beta=1.0)
    with pytest.raises(ValueError):
        simulate((2, 0), 1.0, p, RngSpec(5))


def test_simulate_deterministic_replay():
    p = ModelParams(L=4, M=2, beta=1.0)
    a = simulate((0, 0, 0, 0), 25.0, p, RngSpec(123, 9))
    b = simulate((0, 0, 0, 0), 25.0, p, RngSpec(123, 9))
    assert np.array_equal(a.times, b.times)
    assert np.array_equal(a.sites, b.sites)
    assert np.array_equal(a.dirs, b.dirs)
    assert a.final == b.final
    c = simulate((0, 0, 0, 0), 25.0, p, RngSpec(123, 10))
    assert not np.array_equal(a.times, c.times)


def test_simulate_catalog_path_deterministic_and_in_band():
    p = ModelParams(L=3, M=2, beta=1.0, catalog=MIXED)
    a = simulate((0, 0, 0), 8.0, p, RngSpec(77))
    b = simulate((0, 0, 0), 8.0, p, RngSpec(77))
    assert np.array_equal(a.times, b.times) and a.final == b.final
    assert len(a) > 0
    heights = np.array(a.final)
    assert np.max(np.abs(heights)) <= 2


def _occupation(traj, M):
    L = len(traj.start)
    n = len(traj.times)
    states = np.empty((n, L), dtype=np.int64)
    for k in range(L):
        inc = np.where(traj.sites == k + 1, traj.dirs, 0).astype(np.int64)
        states[:, k] = traj.start[k] + np.cumsum(inc)
    pre = np.vstack([np.array(traj.start, dtype=np.int64), states[:-1]])
    dt = np.diff(traj.times, prepend=0.0)
    idx = np.zeros(n, dtype=np.int64)
    for k in range(L):
        idx = idx * (2 * M + 1) + (pre[:, k] + M)
    return idx, dt


def test_long_run_occupation_matches_stationary_law():
    p = ModelParams(L=2, M=1, beta=1.0)
    n_events = 1_000_000
    traj = simulate((0, 0), math.inf, p, RngSpec(2024), max_events=n_events)
    assert len(traj) == n_events
    idx, dt = _occupation(traj, 1)
    z, _ = partition_function(p)
    target = np.array(
        [probability(c, p, z=z) for c in enumerate_configurations(p)]
    )
    n_batches = 100
    fracs = np.empty((n_batches, 9))
    for b, (bi, bd) in enumerate(
        zip(np.array_split(idx, n_batches), np.array_split(dt, n_batches))
    ):
        fracs[b] = np.bincount(bi, weights=bd, minlength=9) / bd.sum()
    mean = fracs.mean(axis=0)
    se = fracs.std(axis=0, ddof=1) / math.sqrt(n_batches)
    assert np.all(np.abs(mean - target) <= 3 * se)


def test_exit_time_rejects_start_outside_region():
    p = ModelParams(L=4, M=2, beta=1.0, region_eps=0.1)  # A cutoff = 1
    with pytest.raises(ValueError):
        exit_time((2, 0, 0, 0), p, RngSpec(1))


def test_exit_time_is_exponential_when_region_is_one_state():
    beta = 1.0
    p = ModelParams(L=2, M=1, beta=beta, region_eps=0.9)  # A = {(0, 0)}
    lam = 4 * math.exp(-beta / 2)
    n = 3000
    samples = [exit_time((0, 0), p, RngSpec(31, i)).time for i in range(n)]
    mean = sum(samples) / n
    sigma = (1 / lam) / math.sqrt(n)
    assert abs(mean - 1 / lam) <= 3 * sigma
    assert all(not exit_time((0, 0), p, RngSpec(31, i)).censored for i in range(50))


def test_exit_time_censors_at_horizon():
    p = ModelParams(L=6, M=3, beta=4.0, region_eps=0.1)
    s = exit_time((0,) * 6, p, RngSpec(7), horizon=1e-6)
    assert s.censored and s.time == 1e-6


def test_couple_stays_together_without_active_constraint():
    # the box at M=10 is never felt over a short horizon, so decisions agree
    p = ModelParams(L=4, M=10, beta=1.0)
    trace = couple((0, 0, 0, 0), 2.0, p, RngSpec(42))
    assert trace.sigma is None
    assert trace.final_phi == trace.final_phibar
    assert trace.check_agreement_before_sigma()
    assert trace.tau == trace.tau_bar  # identical paths exit together


def test_couple_deterministic_and_consistent():
    p = ModelParams(L=4, M=2, beta=1.0)
    a = couple((0, 0, 0, 0), 30.0, p, RngSpec(9, 3))
    b = couple((0, 0, 0, 0), 30.0, p, RngSpec(9, 3))
    assert np.array_equal(a.times, b.times)
    assert np.array_equal(a.applied_phi, b.applied_phi)
    assert a.sigma == b.sigma and a.tau == b.tau and a.tau_bar == b.tau_bar
    assert a.n_marks >= len(a)
    assert a.check_agreement_before_sigma()


def test_couple_catalog_path_runs_and_records():
    p = ModelParams(L=4, M=2, beta=1.0, catalog=MIXED)
    trace = couple((0, 0, 0, 0), 10.0, p, RngSpec(11))
    assert trace.check_agreement_before_sigma()
    assert len(trace) > 0
    for ev in trace:
        assert ev.proc in ("both", "phi", "phibar")
        break


def test_rate_ratio_deviation_flat_potential_is_zero():
    p = ModelParams(L=4, M=2, beta=1.5, region_eps=0.1)
    rep = rate_ratio_deviation(p)
    assert rep.method == "exhaustive"
    assert rep.deviation == 0.0
    assert rep.edge_moves == 0


def test_rate_ratio_deviation_reflection_symmetry():
    sym = PotentialCatalog(
        (
            PotentialShape(((0, 0),), 0.04),
            PotentialShape(((0, 0), (1, 0)), -0.02),
            PotentialShape(((0, 0), (0, 1)), 0.02),
        ),
        1.0,
    )
    p = ModelParams(L=4, M=2, beta=1.5, region_eps=0.1, catalog=sym)
    p2 = p.with_kind(AUXILIARY)
    cut = p.a_cutoff
    rng = np.random.default_rng(5)
    for _ in range(25):
        cfg = tuple(int(v) for v in rng.integers(-cut, cut + 1, size=4))
        mirror = tuple(-v for v in cfg)
        for k in range(1, 5):
            for d in (1, -1):
                c = jump_rate(cfg, Move(k, d), p)
                cb = jump_rate(cfg, Move(k, d), p2)
                mc = jump_rate(mirror, Move(k, -d), p)
                mcb = jump_rate(mirror, Move(k, -d), p2)
                if c > 0:
                    assert mc > 0
                    assert abs(cb / c - mcb / mc) < 1e-12


def test_trajectory_dump_round_trip(tmp_path):
    p = ModelParams(L=3, M=2, beta=1.0)
    spec = RngSpec(15, 2)
    traj = simulate((0, 0, 0), 5.0, p, spec)
    path = tmp_path / "traj.jsonl"
    write_trajectory(path, traj, p, spec)
    lines = path.read_text().splitlines()
    header = json.loads(lines[0])
    assert header["seed"] == 15 and header["stream"] == 2
    assert header["params"]["L"] == 3 and header["params"]["beta"] == 1.0
    assert len(lines) - 1 == len(traj)
    ev = json.loads(lines[1])
    assert set(ev) == {"t", "k", "d"} and ev["d"] in (1, -1)
    times = [json.loads(x)["t"] for x in lines[1:]]
    assert times == sorted(times)


def test_coupling_dump_round_trip(tmp_path):
    p = ModelParams(L=4, M=2, beta=1.0)
    spec = RngSpec(21)
    trace = couple((0, 0, 0, 0), 10.0, p, spec)
    path = tmp_path / "coupling.jsonl"
    write_coupling(path, trace, p, spec)
    lines = path.read_text().splitlines()
    header = json.loads(lines[0])
    assert header["tau"] == trace.tau and header["sigma"] == trace.sigma
    assert len(lines) - 1 == len(trace)
    procs = {json.loads(x)["proc"] for x in lines[1:]}
    assert procs <= {"both", "phi", "phibar"}
