import json
import math
from collections import Counter

import numpy as np
import pytest
from scipy.optimize import brentq

import soslab.experiments as ex
from soslab.catalog import PotentialCatalog, PotentialShape
from soslab.dynamics import rate_ratio_deviation
from soslab.model import ModelParams, log_weight
from soslab.reports import params_hash, write_report
from soslab.rng import RngSpec
from soslab.spectral import build_generator, killed_operator, survival_cdf

POSCAT = PotentialCatalog(
    shapes=(PotentialShape(sites=((0, 0),), weight=0.04),), decay_mass=1.0
)
COLUMN = PotentialCatalog(
    shapes=(PotentialShape(sites=((0, 0), (0, 1), (0, 2), (0, 3)), weight=0.03),),
    decay_mass=0.5,
)


def exact_box_probs(params, cut):
    box = ex._box_configs(params, cut)
    w = np.array([math.exp(log_weight(c, params)) for c in box])
    return box, w / w.sum()


def frequencies_match(draws, box, probs, z_max=4.0):
    counts = Counter(draws)
    n = len(draws)
    for cfg, pr in zip(box, probs):
        emp = counts.get(cfg, 0) / n
        sig = math.sqrt(pr * (1.0 - pr) / n)
        if abs(emp - pr) > z_max * sig:
            return False
    return True


def test_sample_conditioned_exact_path():
    p = ModelParams(L=2, M=2, beta=1.0)
    draws = ex.sample_conditioned(p, 1, 4000, RngSpec(3, 0))
    assert all(max(abs(v) for v in d) <= 1 for d in draws)
    box, probs = exact_box_probs(p, 1)
    assert frequencies_match(draws, box, probs)


def test_sample_conditioned_chain_paths(monkeypatch):
    monkeypatch.setattr(ex, "EXACT_CAP", 1)
    for cat in (None, POSCAT):
        kw = {"catalog": cat} if cat else {}
        p = ModelParams(L=2, M=1, beta=1.0, **kw)
        draws = ex.sample_conditioned(p, 1, 1200, RngSpec(17, 0))
        box, probs = exact_box_probs(p, 1)
        assert frequencies_match(draws, box, probs)
        again = ex.sample_conditioned(p, 1, 1200, RngSpec(17, 0))
        assert again == draws


def test_sample_conditioned_validation(monkeypatch):
    p = ModelParams(L=2, M=2, beta=1.0)
    with pytest.raises(ValueError):
        ex.sample_conditioned(p, -1, 5, RngSpec(0, 0))
    with pytest.raises(ValueError):
        ex.sample_conditioned(p, 1, 0, RngSpec(0, 0))
    # a box wider than the support clamps to the support
    draws = ex.sample_conditioned(p, 99, 200, RngSpec(1, 0))
    assert all(max(abs(v) for v in d) <= 2 for d in draws)
    monkeypatch.setattr(ex, "EXACT_CAP", 1)
    with pytest.raises(RuntimeError):
        ex.sample_conditioned(p, 1, 5, RngSpec(0, 0), max_rounds=0)


def test_exit_scaling_single_point_reproducible():
    r1 = ex.exit_time_scaling([4], 2.0, 0.1, 0.2, 50, RngSpec(11, 0))
    r2 = ex.exit_time_scaling([4], 2.0, 0.1, 0.2, 50, RngSpec(11, 0))
    assert r1.to_dict() == r2.to_dict()
    assert r1.values[0] > 0
    assert r1.censored == (0,)
    assert r1.slope is None and not r1.verdict
    assert r1.config["seed"] == 11


def test_exit_scaling_matches_matrix_median():
    p = ModelParams(L=4, M=2, beta=2.0, region_eps=0.1, region_alpha=0.2)
    cdf = survival_cdf(killed_operator(build_generator(p)), (0, 0, 0, 0))
    hi = 1.0
    while cdf(hi) < 0.6:
        hi *= 2
    med_mat = brentq(lambda t: cdf(t) - 0.5, 0.0, hi)
    h = 0.01 * med_mat
    dens = (cdf(med_mat + h) - cdf(med_mat - h)) / (2 * h)
    n = 400
    rep = ex.exit_time_scaling([4], 2.0, 0.1, 0.2, n, RngSpec(31, 0))
    se = 1.0 / (2.0 * dens * math.sqrt(n))
    assert abs(rep.values[0] - med_mat) < 3.0 * se


def test_exit_scaling_censoring_and_slope_rules():
    with pytest.warns(UserWarning, match="censored"):
        rep = ex.exit_time_scaling(
            [4], 3.0, 0.1, 0.2, 10, RngSpec(5, 0), horizon=1e-4
        )
    assert rep.values == (None,)
    assert rep.censored == (10,)
    assert rep.slope is None
    three = ex.exit_time_scaling([4, 6, 8], 2.0, 0.1, 0.2, 20, RngSpec(7, 0))
    assert three.slope is None and not three.verdict


def test_exit_scaling_rejects_degenerate_box():
    # L=3 gives M=1 and an A cutoff of 1: the dynamics can never leave A
    with pytest.raises(ValueError, match="no exit"):
        ex.exit_time_scaling([3], 2.0, 0.1, 0.2, 5, RngSpec(0, 0))


def test_gap_scaling_small_grid():
    rep = ex.gap_scaling([(2, 1), (3, 1), (4, 1)], 2.0)
    assert rep.verdict
    assert rep.censored == (0, 0, 0)
    vals = rep.values
    assert all(v > 0 for v in vals)
    # M=1 keeps the L^2 branch active: normalized gaps nearly constant
    assert max(vals) < 2 * min(vals)


def test_gap_scaling_flags_moving_truncation():
    with pytest.warns(UserWarning, match="truncation"):
        rep = ex.gap_scaling([(2, 1)], 2.0, truncation=4, flag_tol=1e-12)
    assert rep.censored == (1,)


def test_small_beta_warning():
    with pytest.warns(UserWarning, match="beta"):
        ex.exit_time_scaling([4], 1.0, 0.1, 0.2, 3, RngSpec(2, 0))


def test_coupling_fidelity_rule_of_three():
    rep = ex.coupling_fidelity(6, 4.0, 0.1, 0.5, 50, RngSpec(21, 0))
    assert rep.n_decoupled == 0
    assert rep.estimate == 0.0
    assert rep.upper_only
    assert rep.ci == (0.0, 3.0 / 50)
    assert rep.normalized == 0.0


def test_coupling_fidelity_catalog_deterministic():
    a = ex.coupling_fidelity(6, 2.5, 0.1, 2.0, 40, RngSpec(41, 0), catalog=POSCAT)
    b = ex.coupling_fidelity(6, 2.5, 0.1, 2.0, 40, RngSpec(41, 0), catalog=POSCAT)
    assert a.to_dict() == b.to_dict()
    assert 0.0 <= a.ci[0] <= a.estimate <= a.ci[1] <= 1.0
    assert a.normalized == a.estimate / (6 * 2.0)


def test_radon_nikodym_zero_catalog_is_tight():
    rep = ex.radon_nikodym_bound(6, 2.0, 0.1, 0.2)
    assert rep.extra["w_hat"] == 0.0
    assert rep.extra["holds"]
    assert rep.value == pytest.approx(rep.extra["bound"], rel=1e-12)
    wide = ex.radon_nikodym_bound(6, 2.0, 0.1, 0.4)
    assert rep.extra["bound"] > wide.extra["bound"]


def test_radon_nikodym_catalog_holds_with_slack():
    # the 4-cell column pokes above the box strip, so the two long-range
    # energies genuinely differ on the core box
    rep = ex.radon_nikodym_bound(5, 2.0, 0.1, 0.25, catalog=COLUMN, truncation=3)
    assert rep.extra["w_hat"] > 0.5
    assert rep.extra["holds"]
    assert rep.extra["slack"] >= 1.0
    assert "z_converged" in rep.extra


def test_radon_nikodym_sampled_path(monkeypatch):
    monkeypatch.setattr(ex, "EXACT_CAP", 1)
    rep = ex.radon_nikodym_bound(
        4, 2.0, 0.1, 0.3, sample_size=300, rng=RngSpec(9, 0)
    )
    assert rep.extra["method"] == "sampled"
    assert rep.extra["scale"] == "conditional"
    assert rep.value == pytest.approx(1.0, rel=1e-12)
    assert rep.extra["bound"] == pytest.approx(1.0, rel=1e-12)


def test_rate_ratio_sampled_agrees_with_exhaustive():
    p = ModelParams(L=6, M=3, beta=2.0, catalog=COLUMN, region_eps=0.5)
    full = rate_ratio_deviation(p)
    assert full.method == "exhaustive"
    assert 0.04 < full.deviation < 0.05
    sub = rate_ratio_deviation(p, sample_size=300, rng=RngSpec(5, 0), enumerable_cap=10)
    assert sub.method == "sampled"
    assert 0 < sub.deviation <= full.deviation + 1e-12


def test_worker_pool_does_not_change_results(monkeypatch):
    monkeypatch.setenv("SOSLAB_WORKERS", "1")
    serial = ex.exit_time_scaling([4], 2.0, 0.1, 0.2, 30, RngSpec(13, 0))
    monkeypatch.setenv("SOSLAB_WORKERS", "2")
    pooled = ex.exit_time_scaling([4], 2.0, 0.1, 0.2, 30, RngSpec(13, 0))
    assert serial.to_dict() == pooled.to_dict()
    assert ex.worker_count() == 2


def test_write_report_layout(tmp_path):
    config = {"harness": "demo", "seed": 1}
    body = {"value": 2.5}
    paths = write_report(
        str(tmp_path), "demo", config, body, rows=[[1, 2.5]], header=["L", "v"]
    )
    assert len(paths) == 2
    tag = params_hash(config)
    assert all(tag in p for p in paths)
    with open(paths[0]) as fh:
        doc = json.load(fh)
    assert doc["config"] == config
    assert doc["report"] == body
    with open(paths[1]) as fh:
        first = fh.readline()
    assert first.startswith("# config ")
    assert json.loads(first[len("# config ") :]) == config
