"""Dual-lattice geometry for one-dimensional solid-on-solid interfaces.

A height profile ``phi = (phi_1, ..., phi_L)`` in Z^L is drawn as a contour
in R^2: one open horizontal segment per site, ``x in (i-1, i)`` at
``y = phi_i``, plus one closed vertical segment per bond, ``x = i`` with
``y`` between ``phi_i`` and ``phi_{i+1}`` (a single point when the heights
agree).  The dual lattice is ``(1/2, 1/2) + Z^2``; a dual site is *attached*
to the contour when its Euclidean distance from the contour is exactly
``1/2`` or ``1/sqrt(2)``.

All computations run in doubled integer coordinates: the dual site
``(a + 1/2, b + 1/2)`` is stored as the integer pair ``(a, b)`` and
distances are compared through scaled squared distances (factor 4), which
are integers.  Parity forces every realizable scaled squared distance to be
a positive integer, so the two admissible distances are exactly the scaled
values 1 and 2 and attachment reduces to "scaled squared distance <= 2".
"""

from typing import NamedTuple


class DualSite(NamedTuple):
    """Dual-lattice site ``(ix + 1/2, iy + 1/2)`` stored as integers."""

    ix: int
    iy: int

    @property
    def x(self) -> float:
        return self.ix + 0.5

    @property
    def y(self) -> float:
        return self.iy + 0.5


def contour_segments(phi):
    """Contour pieces of a height profile, in lattice coordinates.

    Parameters
    ----------
    phi : sequence of int
        Heights ``(phi_1, ..., phi_L)``.

    Returns
    -------
    horizontals, verticals
        ``horizontals`` is a list of ``(x0, x1, y)`` with open endpoints in
        x; ``verticals`` is a list of ``(x, y0, y1)``, degenerate to a point
        when ``y0 == y1``.
    """
    L = len(phi)
    horizontals = [(float(i - 1), float(i), float(phi[i - 1])) for i in range(1, L + 1)]
    verticals = [
        (float(i), float(min(phi[i - 1], phi[i])), float(max(phi[i - 1], phi[i])))
        for i in range(1, L)
    ]
    return horizontals, verticals


def is_attached(phi, ix, iy):
    """Whether the dual site ``(ix + 1/2, iy + 1/2)`` is attached to the contour.

    Exact integer test: minimum scaled squared distance over the segments in
    nearby columns (segments two or more columns away are farther than
    ``1/sqrt(2)``), compared against 2.
    """
    L = len(phi)
    px = 2 * ix + 1
    py = 2 * iy + 1
    # horizontal pieces: only columns i with |ix + 1 - i| <= 1 can come close
    for i in range(max(1, ix), min(L, ix + 2) + 1):
        dx = abs(px - (2 * i - 1)) - 1
        if dx < 0:
            dx = 0
        dy = py - 2 * phi[i - 1]
        if dx * dx + dy * dy <= 2:
            return True
    # vertical pieces: |px - 2i| is odd, so only i in {ix, ix+1} qualify
    for i in range(max(1, ix), min(L - 1, ix + 1) + 1):
        dx = px - 2 * i
        a = phi[i - 1]
        b = phi[i]
        dy = abs(py - (a + b)) - abs(b - a)
        if dy < 0:
            dy = 0
        if dx * dx + dy * dy <= 2:
            return True
    return False


def attached_sites(phi):
    """All dual sites attached to the contour of ``phi``, sorted.

    Returns
    -------
    tuple of DualSite
        Lexicographically sorted by ``(ix, iy)``; the deterministic order
        also fixes floating-point summation order downstream.
    """
    L = len(phi)
    out = []
    for ix in range(-1, L + 1):
        local = phi[max(1, ix) - 1 : min(L, ix + 2)]
        lo = min(local) - 2
        hi = max(local) + 1
        for iy in range(lo, hi + 1):
            if is_attached(phi, ix, iy):
                out.append(DualSite(ix, iy))
    return tuple(out)


def in_strip(ix, iy, L, M=None):
    """Whether dual site ``(ix + 1/2, iy + 1/2)`` lies in the strip V_L^M.

    The strip is ``[-1/2, L + 1/2] x [-M - 1/2, M + 1/2]`` intersected with
    the dual lattice; ``M=None`` selects the vertically unbounded V_L^inf.
    """
    if ix < -1 or ix > L:
        return False
    if M is None:
        return True
    return -M - 1 <= iy <= M


def move_candidate_sites(phi, k, d):
    """Dual sites whose attachment status can change under ``phi_k -> phi_k + d``.

    The contour pieces that move all lie in the unit square
    ``[k-1, k] x [h, h+1]`` with ``h = min(phi_k, phi_k + d)``; only dual
    sites within ``1/sqrt(2)`` of that square can flip, a fixed 3 x 3 block.
    ``k`` is 1-based, ``d`` is +1 or -1.
    """
    h = phi[k - 1] + (d - 1) // 2
    return [
        (ix, iy)
        for ix in (k - 2, k - 1, k)
        for iy in (h - 1, h, h + 1)
    ]


def attachment_delta(phi, k, d, shapes, M=None):
    """Change in the total attached-translate weight under ``phi_k -> phi_k + d``.

    ``shapes`` is a sequence of ``(sites, weight)`` pairs, each ``sites`` a
    tuple of cell offsets.  A translate counts when any of its cells is
    attached and all of them lie in the strip V_L^M.  Only translates
    touching the 3 x 3 candidate block can change status; a surviving
    translate's cells all sit in the strip, so the status of each cell
    after the move is its status before, flipped exactly when the cell is
    in the candidate flip set.  Translates are accumulated in sorted key
    order to pin the floating-point summation order.
    """
    L = len(phi)
    moved = list(phi)
    moved[k - 1] += d
    moved = tuple(moved)
    flipped = frozenset(
        (ix, iy)
        for (ix, iy) in move_candidate_sites(phi, k, d)
        if in_strip(ix, iy, L, M)
        and is_attached(phi, ix, iy) != is_attached(moved, ix, iy)
    )
    if not flipped:
        return 0.0
    keys = set()
    for si, (sites, _) in enumerate(shapes):
        for (px, py) in flipped:
            for (sx, sy) in sites:
                keys.add((si, px - sx, py - sy))
    delta = 0.0
    for si, tx, ty in sorted(keys):
        sites, weight = shapes[si]
        before = False
        after = False
        ok = True
        for sx, sy in sites:
            x = tx + sx
            y = ty + sy
            if not in_strip(x, y, L, M):
                ok = False
                break
            b = is_attached(phi, x, y)
            before = before or b
            after = after or (b ^ ((x, y) in flipped))
            if before and after:
                break
        if ok and after != before:
            delta += weight if after else -weight
    return delta
