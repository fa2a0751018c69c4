"""Finite shape catalogs standing in for the long-range interface potential.

A catalog is a list of connected patches of dual-lattice sites, each patch
carrying one signed weight, plus a declared decay mass m > 0.  Translates of
the patches are summed over when computing interaction energies.  The decay
requirement is a per-site bound: for every k >= 1, the total |weight| of
translates that contain a fixed dual site and have diameter >= k-1 must not
exceed exp(-m*k).  Only k up to the largest diameter plus one can have a
nonempty sum, so the check is a finite enumeration.
"""

import json
import math
from collections import deque
from dataclasses import dataclass
from fractions import Fraction

__all__ = [
    "PotentialShape",
    "PotentialCatalog",
    "DecayReport",
    "zero_catalog",
    "validate_catalog",
    "block_touch_weight",
    "catalog_to_dict",
    "catalog_to_json",
    "catalog_from_json",
    "save_catalog",
    "load_catalog",
]


@dataclass(frozen=True)
class PotentialShape:
    """A patch of dual sites with one signed weight.

    Sites are integer pairs (ix, iy) naming the dual point
    (ix + 1/2, iy + 1/2).  On construction the patch is translated so its
    lexicographically smallest site sits at the origin, making equal patches
    compare equal regardless of how they were entered.
    """

    sites: tuple
    weight: float

    def __post_init__(self):
        pts = {(int(x), int(y)) for (x, y) in self.sites}
        if not pts:
            raise ValueError("shape needs at least one site")
        ox, oy = min(pts)
        object.__setattr__(
            self, "sites", tuple(sorted((x - ox, y - oy) for (x, y) in pts))
        )
        object.__setattr__(self, "weight", float(self.weight))

    @property
    def size(self):
        return len(self.sites)

    @property
    def diameter_sq(self):
        """Largest squared distance between two sites, an exact integer."""
        pts = self.sites
        return max(
            (ax - bx) ** 2 + (ay - by) ** 2 for ax, ay in pts for bx, by in pts
        )

    @property
    def diameter(self):
        return math.sqrt(self.diameter_sq)

    def is_connected(self):
        """True when the sites form a single 4-adjacent component."""
        pts = set(self.sites)
        seen = {self.sites[0]}
        queue = deque(seen)
        while queue:
            x, y = queue.popleft()
            for nb in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
                if nb in pts and nb not in seen:
                    seen.add(nb)
                    queue.append(nb)
        return len(seen) == len(pts)


@dataclass(frozen=True)
class PotentialCatalog:
    """A finite family of weighted shapes with a declared decay mass."""

    shapes: tuple
    decay_mass: float

    def __post_init__(self):
        object.__setattr__(self, "shapes", tuple(self.shapes))
        object.__setattr__(self, "decay_mass", float(self.decay_mass))
        if not self.decay_mass > 0:
            raise ValueError("decay_mass must be positive")

    @property
    def max_diameter(self):
        if not self.shapes:
            return 0.0
        return max(s.diameter for s in self.shapes)

    @property
    def is_zero(self):
        return not self.shapes


def zero_catalog(decay_mass=1.0):
    """The empty catalog; the interaction term vanishes identically."""
    return PotentialCatalog((), decay_mass)


@dataclass(frozen=True)
class DecayReport:
    """Outcome of the per-site decay check.

    bins holds one (k, per_site_total, bound) triple for each level with a
    nonempty sum; failing_k is the first violated level or None; tightest_k
    is the level with the largest total/bound ratio.
    """

    passed: bool
    decay_mass: float
    bins: tuple
    failing_k: int | None
    tightest_k: int | None


def validate_catalog(catalog):
    """Check the per-site decay bound by exact finite enumeration.

    A fixed dual site lies in exactly size-many translates of a shape, so
    the per-site total at level k is sum over shapes with diameter >= k-1
    of size * |weight|.  Diameters are compared through their exact integer
    squares.  Raises ValueError for a disconnected shape.
    """
    for idx, shape in enumerate(catalog.shapes):
        if not shape.is_connected():
            raise ValueError(
                "shape %d is not 4-connected: sites %r" % (idx, shape.sites)
            )
    m = catalog.decay_mass
    kmax = max((math.isqrt(s.diameter_sq) + 1 for s in catalog.shapes), default=0)
    bins = []
    failing = None
    tightest = None
    worst = -1.0
    for k in range(1, kmax + 1):
        total = sum(
            s.size * abs(s.weight)
            for s in catalog.shapes
            if s.diameter_sq >= (k - 1) ** 2
        )
        bound = math.exp(-m * k)
        bins.append((k, total, bound))
        if total > bound and failing is None:
            failing = k
        ratio = total / bound
        if ratio > worst:
            worst = ratio
            tightest = k
    return DecayReport(
        passed=failing is None,
        decay_mass=m,
        bins=tuple(bins),
        failing_k=failing,
        tightest_k=tightest,
    )


def block_touch_weight(catalog, block=3):
    """Total |weight| of shape translates meeting a block x block site patch.

    The count per shape is the number of distinct translation vectors t with
    (shape + t) meeting the patch; by translation invariance it does not
    depend on where the patch sits.
    """
    patch = [(bx, by) for bx in range(block) for by in range(block)]
    total = 0.0
    for s in catalog.shapes:
        offs = {(bx - sx, by - sy) for (bx, by) in patch for (sx, sy) in s.sites}
        total += len(offs) * abs(s.weight)
    return total


def _site_to_json(ix, iy):
    return ["%d/2" % (2 * ix + 1), "%d/2" % (2 * iy + 1)]


def _coord_from_json(value):
    frac = Fraction(str(value))
    if frac.denominator != 2:
        raise ValueError("coordinate %r is not a half-integer" % (value,))
    return (frac.numerator - 1) // 2


def catalog_to_dict(catalog):
    return {
        "decay_mass": catalog.decay_mass,
        "shapes": [
            {
                "sites": [_site_to_json(ix, iy) for (ix, iy) in s.sites],
                "weight": s.weight,
            }
            for s in catalog.shapes
        ],
    }


def catalog_to_json(catalog):
    return json.dumps(catalog_to_dict(catalog), indent=2)


def catalog_from_json(text):
    doc = json.loads(text)
    shapes = tuple(
        PotentialShape(
            sites=tuple(
                (_coord_from_json(x), _coord_from_json(y)) for (x, y) in entry["sites"]
            ),
            weight=float(entry["weight"]),
        )
        for entry in doc["shapes"]
    )
    return PotentialCatalog(shapes=shapes, decay_mass=float(doc["decay_mass"]))


def save_catalog(catalog, path):
    with open(path, "w") as fh:
        fh.write(catalog_to_json(catalog) + "\n")


def load_catalog(path):
    with open(path) as fh:
        return catalog_from_json(fh.read())
