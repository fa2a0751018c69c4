"""Gibbs weights for constrained and auxiliary interface measures.

A configuration is a tuple of L integer heights.  Its energy is the sum of
absolute neighbour gradients (free ends) plus a long-range term W obtained
by summing catalog-shape translates that touch the attached-site set of the
contour and fit inside the admissible strip.  Two measure kinds share this
module:

* constrained: density exp(-beta*H - W) restricted to max|phi_k| <= M, with
  W summed over the box strip [-1/2, L+1/2] x [-M-1/2, M+1/2];
* auxiliary: density exp(-beta*H - W) restricted only to |phi_1| <= M, with
  W summed over the vertically unbounded strip.

Weights are kept in log space throughout; a -inf log weight is the in-band
marker for zero mass, never an error.
"""

import itertools
import math
from dataclasses import dataclass, field, replace

from .catalog import PotentialCatalog, catalog_to_dict, zero_catalog
from .geometry import attached_sites, attachment_delta, in_strip

CONSTRAINED = "constrained"
AUXILIARY = "auxiliary"

NEG_INF = float("-inf")

SIZE_CAP = 5_000_000


@dataclass(frozen=True)
class ModelParams:
    """Immutable bundle of model parameters.

    Parameters
    ----------
    L : int
        Number of interface sites, at least 1.
    M : int or None
        Height bound; None selects the vertically unbounded strip and is
        only meaningful for the auxiliary kind.
    beta : float
        Inverse temperature, nonnegative.
    catalog : PotentialCatalog
        Long-range potential; the default empty catalog switches W off.
    measure_kind : str
        "constrained" or "auxiliary".
    region_eps, region_alpha : float
        Parameters of the escape region A = {max|phi| <= (1-eps)L/2} and
        the core region B = {max|phi| <= alpha*L}, both in (0, 1).
    """

    L: int
    M: int | None
    beta: float
    catalog: PotentialCatalog = field(default_factory=zero_catalog)
    measure_kind: str = CONSTRAINED
    region_eps: float = 0.1
    region_alpha: float = 0.2

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise ValueError("L must be a positive integer")
        object.__setattr__(self, "L", int(self.L))
        if self.M is not None:
            if int(self.M) != self.M or self.M < 1:
                raise ValueError("M must be a positive integer or None")
            object.__setattr__(self, "M", int(self.M))
        if not self.beta >= 0:
            raise ValueError("beta must be nonnegative")
        if self.measure_kind not in (CONSTRAINED, AUXILIARY):
            raise ValueError("unknown measure kind %r" % (self.measure_kind,))
        if self.measure_kind == CONSTRAINED and self.M is None:
            raise ValueError("constrained kind requires finite M")
        for name in ("region_eps", "region_alpha"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError("%s must lie in (0, 1)" % name)

    @property
    def a_cutoff(self):
        """Largest height norm still inside region A."""
        return math.floor((1.0 - self.region_eps) * self.L / 2.0)

    @property
    def b_cutoff(self):
        """Largest height norm still inside region B."""
        return math.floor(self.region_alpha * self.L)

    def in_region_a(self, cfg):
        return max(abs(v) for v in cfg) <= self.a_cutoff

    def in_region_b(self, cfg):
        return max(abs(v) for v in cfg) <= self.b_cutoff

    def in_band(self, cfg):
        """Support indicator of the measure kind (box or first-site band)."""
        if self.measure_kind == CONSTRAINED:
            return max(abs(v) for v in cfg) <= self.M
        return self.M is None or abs(cfg[0]) <= self.M

    def with_kind(self, kind):
        return replace(self, measure_kind=kind)

    def to_dict(self):
        return {
            "L": self.L,
            "M": self.M,
            "beta": self.beta,
            "measure_kind": self.measure_kind,
            "region_eps": self.region_eps,
            "region_alpha": self.region_alpha,
            "catalog": catalog_to_dict(self.catalog),
        }


def hamiltonian(cfg):
    """Sum of absolute neighbour gradients; the L=1 chain has energy 0."""
    return sum(abs(cfg[k + 1] - cfg[k]) for k in range(len(cfg) - 1))


def _strip_height(params, strip):
    if strip == "boxM":
        if params.M is None:
            raise ValueError("boxM strip requires finite M")
        return params.M
    if strip == "infinite":
        return None
    raise ValueError("strip must be 'boxM' or 'infinite'")


def long_range_energy(cfg, params, strip):
    """Total catalog weight over translates touching the attached sites.

    A translate qualifies when it meets the attached-site set and all of
    its sites lie inside the strip; each qualifying translate is counted
    exactly once.  Summation runs in sorted translate order so the float
    result is reproducible.
    """
    cat = params.catalog
    if cat.is_zero:
        return 0.0
    if len(cfg) != params.L:
        raise ValueError("configuration length differs from params.L")
    height = _strip_height(params, strip)
    L = params.L
    anchors = [
        p for p in attached_sites(cfg) if in_strip(p.ix, p.iy, L, height)
    ]
    keys = set()
    for si, shape in enumerate(cat.shapes):
        for p in anchors:
            for (sx, sy) in shape.sites:
                keys.add((si, p.ix - sx, p.iy - sy))
    total = 0.0
    for si, tx, ty in sorted(keys):
        shape = cat.shapes[si]
        if all(in_strip(tx + sx, ty + sy, L, height) for (sx, sy) in shape.sites):
            total += shape.weight
    assert math.isfinite(total)
    return total


def log_weight(cfg, params):
    """Unnormalized log density; -inf marks zero mass."""
    if len(cfg) != params.L:
        raise ValueError("configuration length differs from params.L")
    if not params.in_band(cfg):
        return NEG_INF
    strip = "boxM" if params.measure_kind == CONSTRAINED else "infinite"
    return -params.beta * hamiltonian(cfg) - long_range_energy(cfg, params, strip)


def delta_log_weight(cfg, params, k, d):
    """log_weight(cfg with site k moved by d) - log_weight(cfg), locally.

    Requires cfg itself in band.  Only the gradient terms at the moved
    site and the catalog translates near the changed contour piece are
    evaluated; the changed piece fits in one unit square, so every
    attachment flip lies in a fixed 3x3 block of dual sites.
    """
    i = k - 1
    new = cfg[i] + d
    if params.measure_kind == CONSTRAINED:
        if abs(new) > params.M:
            return NEG_INF
        height = params.M
    else:
        if k == 1 and params.M is not None and abs(new) > params.M:
            return NEG_INF
        height = None
    dh = 0
    if i > 0:
        dh += abs(new - cfg[i - 1]) - abs(cfg[i] - cfg[i - 1])
    if i < len(cfg) - 1:
        dh += abs(cfg[i + 1] - new) - abs(cfg[i + 1] - cfg[i])
    return -params.beta * dh - _delta_long_range(cfg, params, k, d, height)


def _delta_long_range(cfg, params, k, d, height):
    cat = params.catalog
    if cat.is_zero:
        return 0.0
    shapes = tuple((s.sites, s.weight) for s in cat.shapes)
    return attachment_delta(cfg, k, d, shapes, height)


def to_gradient(cfg):
    """Heights to gradients: eta_1 = phi_1, eta_k = phi_k - phi_{k-1}."""
    return (cfg[0],) + tuple(cfg[k] - cfg[k - 1] for k in range(1, len(cfg)))


def from_gradient(g):
    """Inverse of to_gradient via partial sums."""
    out = []
    acc = 0
    for v in g:
        acc += v
        out.append(acc)
    return tuple(out)


def gradient_log_weight(g, params):
    """Log density of the gradient variables under the auxiliary measure.

    Equals log_weight(from_gradient(g)) by construction: the gradient form
    of the energy is beta * sum_{i>=2} |eta_i| and W never depends on
    eta_1 because the unbounded strip is vertical-shift invariant.
    """
    if params.measure_kind != AUXILIARY:
        raise ValueError("gradient weights belong to the auxiliary kind")
    if params.M is not None and abs(g[0]) > params.M:
        return NEG_INF
    cfg = from_gradient(g)
    h = sum(abs(v) for v in g[1:])
    return -params.beta * h - long_range_energy(cfg, params, "infinite")


def enumerate_configurations(params, truncation=None, size_cap=SIZE_CAP):
    """All configurations of the truncated space, lexicographically.

    Constrained kind: every height in [-M, M].  Auxiliary kind: phi_1 in
    [-M, M] and every gradient eta_i in [-truncation, truncation], ordered
    lexicographically in (phi_1, eta_2, ..., eta_L).  Refuses spaces larger
    than size_cap with a size estimate.
    """
    L, M = params.L, params.M
    if M is None:
        raise ValueError("enumeration requires finite M")
    if params.measure_kind == CONSTRAINED:
        n = (2 * M + 1) ** L
        if n > size_cap:
            raise ValueError(
                "state space has %d states, above the cap %d" % (n, size_cap)
            )
        return [tuple(c) for c in itertools.product(range(-M, M + 1), repeat=L)]
    if truncation is None:
        raise ValueError("auxiliary enumeration requires a truncation bound")
    R = int(truncation)
    n = (2 * M + 1) * (2 * R + 1) ** (L - 1)
    if n > size_cap:
        raise ValueError(
            "state space has %d states, above the cap %d" % (n, size_cap)
        )
    out = []
    for first in range(-M, M + 1):
        for tail in itertools.product(range(-R, R + 1), repeat=L - 1):
            out.append(from_gradient((first,) + tail))
    return out


@dataclass(frozen=True)
class PartitionReport:
    kind: str
    truncation: int | None
    states: int
    tail: float
    relative_increment: float
    converged: bool


def partition_function(params, truncation=None, size_cap=SIZE_CAP):
    """Normalizing constant on the truncated space, with a convergence report.

    For the auxiliary kind the report compares truncation R against R+1:
    tail is the mass added by the extra shell and convergence is flagged
    when the relative increment drops below 1e-12.  The constrained space
    is already exact, so its tail is identically zero.
    """
    cfgs = enumerate_configurations(params, truncation, size_cap)
    z = math.fsum(math.exp(log_weight(c, params)) for c in cfgs)
    if params.measure_kind == CONSTRAINED:
        report = PartitionReport(CONSTRAINED, None, len(cfgs), 0.0, 0.0, True)
        return z, report
    wider = enumerate_configurations(params, int(truncation) + 1, size_cap)
    z_next = math.fsum(math.exp(log_weight(c, params)) for c in wider)
    tail = z_next - z
    rel = tail / z_next if z_next > 0 else 0.0
    report = PartitionReport(
        AUXILIARY, int(truncation), len(cfgs), tail, rel, rel < 1e-12
    )
    return z, report


def probability(cfg, params, truncation=None, z=None):
    """Normalized mass of one configuration on the truncated space."""
    if z is None:
        z, _ = partition_function(params, truncation)
    lw = log_weight(cfg, params)
    if lw == NEG_INF:
        return 0.0
    return math.exp(lw) / z
