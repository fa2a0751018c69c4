"""The compiled and pure kernels must agree bit for bit, not just in law."""

import math

import numpy as np
import pytest

from soslab import _purekernels
from soslab.rng import RngSpec

_kernels = pytest.importorskip("soslab._kernels")


def _bitgens(seed, stream):
    return RngSpec(seed, stream).bit_generator(), RngSpec(seed, stream).bit_generator()


@pytest.mark.parametrize(
    "L,M,aux,beta,horizon,exit_cut,max_events",
    [
        (1, 1, 0, 1.0, 50.0, -1, -1),
        (2, 1, 0, 1.0, 50.0, -1, -1),
        (4, 2, 0, 0.7, 30.0, -1, -1),
        (4, 2, 1, 0.7, 30.0, -1, -1),
        (6, 3, 0, 2.5, math.inf, 2, -1),
        (6, 3, 1, 2.5, math.inf, 2, -1),
        (8, 4, 0, 1.2, math.inf, -1, 5000),
        (3, -1, 1, 1.5, 20.0, -1, -1),  # unbounded auxiliary strip
    ],
)
def test_simulate_zero_bit_identical(L, M, aux, beta, horizon, exit_cut, max_events):
    start = tuple([0] * L)
    bg_a, bg_b = _bitgens(99, L)
    a = _kernels.simulate_zero(
        start, beta, M, aux, horizon, exit_cut, max_events, 1, bg_a
    )
    b = _purekernels.simulate_zero(
        start, beta, M, aux, horizon, exit_cut, max_events, 1, bg_b
    )
    for x, y in zip(a[:3], b[:3]):
        assert np.array_equal(x, y)
    assert a[3] == b[3]  # final configuration
    assert a[4] == b[4]  # event count
    assert a[5] == b[5]  # end time, exact float equality
    assert (math.isnan(a[6]) and math.isnan(b[6])) or a[6] == b[6]
    assert a[4] > 0


@pytest.mark.parametrize(
    "L,M,beta,horizon,record",
    [
        (2, 1, 1.0, 40.0, 1),
        (4, 2, 0.8, 40.0, 1),
        (6, 3, 1.5, math.inf, 0),
        (8, 4, 2.0, 25.0, 1),
    ],
)
def test_couple_zero_bit_identical(L, M, beta, horizon, record):
    start = tuple([0] * L)
    cut = max(0, M - 1)
    bg_a, bg_b = _bitgens(7, 10 + L)
    a = _kernels.couple_zero(start, beta, M, cut, horizon, record, bg_a)
    b = _purekernels.couple_zero(start, beta, M, cut, horizon, record, bg_b)
    for x, y in zip(a[:5], b[:5]):
        assert np.array_equal(x, y)
    for x, y in zip(a[5:8], b[5:8]):
        assert (math.isnan(x) and math.isnan(y)) or x == y
    assert a[8] == b[8] and a[9] == b[9]
    assert a[10] == b[10]


@pytest.mark.parametrize("L,cut,beta,steps", [(4, 2, 1.0, 5000), (9, 3, 2.2, 20000)])
def test_metropolis_zero_bit_identical(L, cut, beta, steps):
    start = tuple([0] * L)
    bg_a, bg_b = _bitgens(1234, L)
    a = _kernels.metropolis_zero(start, beta, cut, steps, bg_a)
    b = _purekernels.metropolis_zero(start, beta, cut, steps, bg_b)
    assert a == b
    assert max(abs(v) for v in a) <= cut


def test_exit_detection_agrees_on_long_runs():
    # high beta makes exits rare, stressing the stopping branch
    start = (0, 0, 0, 0, 0, 0)
    for stream in range(12):
        bg_a, bg_b = _bitgens(5, stream)
        a = _kernels.simulate_zero(start, 3.0, 3, 0, math.inf, 2, -1, 0, bg_a)
        b = _purekernels.simulate_zero(start, 3.0, 3, 0, math.inf, 2, -1, 0, bg_b)
        assert a[6] == b[6] and not math.isnan(a[6])
        assert a[3] == b[3]


SINGLE = ((((0, 0),), 0.05),)
SIGNED = ((((0, 0), (1, 0)), -0.04), (((0, 0), (0, 1), (0, 2)), 0.06))
COLUMN = ((((0, 0), (0, 1), (0, 2), (0, 3)), 0.03),)


@pytest.mark.parametrize("shapes", [SINGLE, SIGNED, COLUMN])
@pytest.mark.parametrize(
    "L,cut,strip,beta",
    [(6, 2, 3, 2.0), (10, 4, 5, 1.5), (10, 4, -1, 2.5)],
)
def test_metropolis_catalog_bit_identical(shapes, L, cut, strip, beta):
    start = tuple([0] * L)
    bg_a, bg_b = _bitgens(77, L + strip)
    a = _kernels.metropolis_catalog(start, beta, cut, 4000, bg_a, shapes, strip)
    b = _purekernels.metropolis_catalog(start, beta, cut, 4000, bg_b, shapes, strip)
    assert a == b
    assert max(abs(v) for v in a) <= cut


def test_zero_weight_catalog_reduces_to_plain_chain():
    # a weightless shape must not perturb the stream or the decisions
    start = (0,) * 5
    shapes = ((((0, 0),), 0.0),)
    for mod in (_kernels, _purekernels):
        bg_a, bg_b = _bitgens(42, 3)
        a = mod.metropolis_catalog(start, 1.3, 2, 6000, bg_a, shapes, 2)
        b = mod.metropolis_zero(start, 1.3, 2, 6000, bg_b)
        assert a == b


def test_catalog_chain_decisions_match_model_deltas():
    from soslab.catalog import PotentialCatalog, PotentialShape
    from soslab.model import AUXILIARY, ModelParams, delta_log_weight

    cat = PotentialCatalog(
        shapes=(
            PotentialShape(sites=((0, 0), (1, 0)), weight=-0.04),
            PotentialShape(sites=((0, 0), (0, 1)), weight=0.06),
        ),
        decay_mass=1.0,
    )
    cases = [
        (ModelParams(L=6, M=3, beta=2.0, catalog=cat), 2, 3),
        (ModelParams(L=5, M=4, beta=1.5, catalog=cat, measure_kind=AUXILIARY), 3, -1),
    ]
    for params, cut, strip in cases:
        shapes = tuple((s.sites, s.weight) for s in cat.shapes)
        got = _purekernels.metropolis_catalog(
            (0,) * params.L, params.beta, cut, 3000,
            RngSpec(11, 4).bit_generator(), shapes, strip,
        )
        gen = np.random.Generator(RngSpec(11, 4).bit_generator())
        phi = [0] * params.L
        for _ in range(3000):
            j = min(int(gen.random() * params.L), params.L - 1)
            d = 1 if gen.random() < 0.5 else -1
            u = gen.random()
            if abs(phi[j] + d) > cut:
                continue
            dl = delta_log_weight(tuple(phi), params, j + 1, d)
            if dl >= 0.0 or u < math.exp(dl):
                phi[j] += d
        assert got == tuple(phi)


def test_compiled_catalog_rejects_oversized_shape_set():
    sites = tuple((0, i) for i in range(60))
    with pytest.raises(ValueError):
        _kernels.metropolis_catalog(
            (0, 0, 0), 1.0, 1, 10, RngSpec(0, 0).bit_generator(), ((sites, 0.01),), -1
        )
