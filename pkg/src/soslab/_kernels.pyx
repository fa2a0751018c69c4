# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled event loops for the hot sampling paths.

Mirror of soslab._purekernels: same uniform-draw order, same arithmetic in
the same order, so the two backends produce bit-identical trajectories.
Keep the two files in lockstep when changing either.
"""

import numpy as np

from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport NAN, exp, isnan, log
from numpy.random cimport bitgen_t

COMPILED = True


cdef inline long long iabs(long long v):
    return -v if v < 0 else v


cdef inline double move_rate(long long* phi, Py_ssize_t L, Py_ssize_t j, int d,
                             double* table, long long M, int aux):
    cdef long long new = phi[j] + d
    cdef long long dh = 0
    if M >= 0:
        if aux:
            if j == 0 and (new > M or new < -M):
                return 0.0
        elif new > M or new < -M:
            return 0.0
    if j > 0:
        dh += iabs(new - phi[j - 1]) - iabs(phi[j] - phi[j - 1])
    if j < L - 1:
        dh += iabs(phi[j + 1] - new) - iabs(phi[j + 1] - phi[j])
    return table[dh + 2]


cdef inline bitgen_t* get_bitgen(bit_generator):
    return <bitgen_t*> PyCapsule_GetPointer(bit_generator.capsule, "BitGenerator")


def simulate_zero(phi0, double beta, long long M, int aux, double horizon,
                  long long exit_cut, long long max_events, int record,
                  bit_generator):
    cdef bitgen_t* bg = get_bitgen(bit_generator)
    cdef Py_ssize_t L = len(phi0)
    cdef long long[::1] phi = np.array(phi0, dtype=np.int64)
    cdef double[::1] rates = np.zeros(2 * L, dtype=np.float64)
    cdef double table[5]
    cdef double t = 0.0, lam, r, u1, u2, dt, target, cum
    cdef double end = horizon
    cdef double exit_t = NAN
    cdef long long n = 0
    cdef Py_ssize_t idx, j, pick
    cdef int d, i
    for i in range(5):
        table[i] = exp(-0.5 * beta * (i - 2))
    times, sites, dirs = [], [], []
    while True:
        lam = 0.0
        for idx in range(2 * L):
            j = idx >> 1
            d = 1 if (idx & 1) == 0 else -1
            r = move_rate(&phi[0], L, j, d, table, M, aux)
            rates[idx] = r
            lam += r
        if lam == 0.0:
            raise RuntimeError("absorbing state reached; rates vanished")
        u1 = bg.next_double(bg.state)
        dt = -log(1.0 - u1) / lam
        if t + dt > horizon:
            end = horizon
            break
        t += dt
        u2 = bg.next_double(bg.state)
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
    final = tuple([int(phi[i]) for i in range(L)])
    return (
        np.asarray(times, dtype=np.float64),
        np.asarray(sites, dtype=np.int32),
        np.asarray(dirs, dtype=np.int32),
        final,
        int(n),
        end,
        exit_t,
    )


def couple_zero(phi0, double beta, long long M, long long exit_cut,
                double horizon, int record, bit_generator):
    cdef bitgen_t* bg = get_bitgen(bit_generator)
    cdef Py_ssize_t L = len(phi0)
    cdef long long[::1] phi1 = np.array(phi0, dtype=np.int64)
    cdef long long[::1] phi2 = np.array(phi0, dtype=np.int64)
    cdef double table[5]
    cdef double cmax = exp(beta)
    cdef double total = 2 * L * cmax
    cdef double t = 0.0, u1, u2, u3, level, c1, c2
    cdef double sigma = NAN, tau = NAN, tau_bar = NAN
    cdef long long n_marks = 0
    cdef Py_ssize_t idx, j
    cdef int d, i, a1, a2, coupled = 1
    for i in range(5):
        table[i] = exp(-0.5 * beta * (i - 2))
    times, sites, dirs, app1, app2 = [], [], [], [], []
    while True:
        u1 = bg.next_double(bg.state)
        t += -log(1.0 - u1) / total
        if t > horizon:
            break
        n_marks += 1
        u2 = bg.next_double(bg.state)
        idx = <Py_ssize_t>(u2 * (2 * L))
        if idx >= 2 * L:
            idx = 2 * L - 1
        u3 = bg.next_double(bg.state)
        level = u3 * cmax
        j = idx >> 1
        d = 1 if (idx & 1) == 0 else -1
        c1 = move_rate(&phi1[0], L, j, d, table, M, 0)
        c2 = move_rate(&phi2[0], L, j, d, table, M, 1)
        a1 = 1 if c1 > level else 0
        a2 = 1 if c2 > level else 0
        if a1:
            phi1[j] += d
        if a2:
            phi2[j] += d
        if a1 or a2:
            if record:
                times.append(t)
                sites.append(j + 1)
                dirs.append(d)
                app1.append(a1)
                app2.append(a2)
            if coupled and a1 != a2:
                sigma = t
                coupled = 0
            if a1 and isnan(tau) and (phi1[j] > exit_cut or phi1[j] < -exit_cut):
                tau = t
            if a2 and isnan(tau_bar) and (phi2[j] > exit_cut or phi2[j] < -exit_cut):
                tau_bar = t
            if (not record) and not isnan(sigma) and not isnan(tau) \
                    and not isnan(tau_bar):
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
        tuple([int(phi1[i]) for i in range(L)]),
        tuple([int(phi2[i]) for i in range(L)]),
        int(n_marks),
    )


def metropolis_zero(phi0, double beta, long long cut, long long n_steps,
                    bit_generator):
    cdef bitgen_t* bg = get_bitgen(bit_generator)
    cdef Py_ssize_t L = len(phi0)
    cdef long long[::1] phi = np.array(phi0, dtype=np.int64)
    cdef double table[5]
    cdef double u1, u2, u3
    cdef long long new, dh, step
    cdef Py_ssize_t j
    cdef int d, i
    for i in range(5):
        table[i] = exp(-beta * (i - 2))
    for step in range(n_steps):
        u1 = bg.next_double(bg.state)
        j = <Py_ssize_t>(u1 * L)
        if j >= L:
            j = L - 1
        u2 = bg.next_double(bg.state)
        d = 1 if u2 < 0.5 else -1
        u3 = bg.next_double(bg.state)
        new = phi[j] + d
        if new > cut or new < -cut:
            continue
        dh = 0
        if j > 0:
            dh += iabs(new - phi[j - 1]) - iabs(phi[j] - phi[j - 1])
        if j < L - 1:
            dh += iabs(phi[j + 1] - new) - iabs(phi[j + 1] - phi[j])
        if u3 < table[dh + 2]:
            phi[j] = new
    return tuple([int(phi[i]) for i in range(L)])


cdef inline int cell_attached(long long* phi, Py_ssize_t L,
                              long long ix, long long iy) noexcept:
    # Doubled-coordinate attachment test; mirror of geometry.is_attached.
    cdef long long px = 2 * ix + 1
    cdef long long py = 2 * iy + 1
    cdef long long dx, dy, a, b, i, lo, hi
    lo = 1 if ix < 1 else ix
    hi = L if ix + 2 > L else ix + 2
    for i in range(lo, hi + 1):
        dx = iabs(px - (2 * i - 1)) - 1
        if dx < 0:
            dx = 0
        dy = py - 2 * phi[i - 1]
        if dx * dx + dy * dy <= 2:
            return 1
    hi = L - 1 if ix + 1 > L - 1 else ix + 1
    for i in range(lo, hi + 1):
        dx = px - 2 * i
        a = phi[i - 1]
        b = phi[i]
        dy = iabs(py - (a + b)) - iabs(b - a)
        if dy < 0:
            dy = 0
        if dx * dx + dy * dy <= 2:
            return 1
    return 0


cdef inline int cell_in_strip(long long ix, long long iy, Py_ssize_t L,
                              long long M) noexcept:
    # M < 0 means the vertically unbounded strip.
    if ix < -1 or ix > L:
        return 0
    if M < 0:
        return 1
    return -M - 1 <= iy <= M


cdef double catalog_delta(long long* phi, Py_ssize_t L, Py_ssize_t j, int d,
                          Py_ssize_t n_shapes, long long* starts,
                          long long* cx, long long* cy, double* w,
                          long long M):
    # Mirror of geometry.attachment_delta for the move phi[j] -> phi[j] + d
    # (j is 0-based here).  Keys are visited in sorted (shape, tx, ty) order
    # so the floating-point sum matches the pure twin bit for bit.
    cdef long long fx[9]
    cdef long long fy[9]
    cdef long long kx[512]
    cdef long long ky[512]
    cdef long long ks[512]
    cdef Py_ssize_t nf = 0, nk = 0, idx, c, p, q, si
    cdef long long h, ix, iy, tx, ty, x, y
    cdef int b0, b1, before, after, ok, inflip
    cdef double delta = 0.0
    h = phi[j] + ((d - 1) >> 1)
    for ix in range(j - 1, j + 2):
        for iy in range(h - 1, h + 2):
            if not cell_in_strip(ix, iy, L, M):
                continue
            b0 = cell_attached(phi, L, ix, iy)
            phi[j] += d
            b1 = cell_attached(phi, L, ix, iy)
            phi[j] -= d
            if b0 != b1:
                fx[nf] = ix
                fy[nf] = iy
                nf += 1
    if nf == 0:
        return 0.0
    for si in range(n_shapes):
        for p in range(nf):
            for c in range(starts[si], starts[si + 1]):
                tx = fx[p] - cx[c]
                ty = fy[p] - cy[c]
                ok = 1
                for q in range(nk):
                    if ks[q] == si and kx[q] == tx and ky[q] == ty:
                        ok = 0
                        break
                if ok and nk < 512:
                    ks[nk] = si
                    kx[nk] = tx
                    ky[nk] = ty
                    nk += 1
    # insertion sort by (shape, tx, ty)
    for p in range(1, nk):
        tx = kx[p]
        ty = ky[p]
        x = ks[p]
        q = p - 1
        while q >= 0 and (ks[q] > x or (ks[q] == x and (kx[q] > tx or
                          (kx[q] == tx and ky[q] > ty)))):
            ks[q + 1] = ks[q]
            kx[q + 1] = kx[q]
            ky[q + 1] = ky[q]
            q -= 1
        ks[q + 1] = x
        kx[q + 1] = tx
        ky[q + 1] = ty
    for p in range(nk):
        si = ks[p]
        before = 0
        after = 0
        ok = 1
        for c in range(starts[si], starts[si + 1]):
            x = kx[p] + cx[c]
            y = ky[p] + cy[c]
            if not cell_in_strip(x, y, L, M):
                ok = 0
                break
            b0 = cell_attached(phi, L, x, y)
            inflip = 0
            for q in range(nf):
                if fx[q] == x and fy[q] == y:
                    inflip = 1
                    break
            before = before or b0
            after = after or (b0 ^ inflip)
            if before and after:
                break
        if ok and after != before:
            delta += w[si] if after else -w[si]
    return delta


def metropolis_catalog(phi0, double beta, long long cut, long long n_steps,
                       bit_generator, shapes, long long strip_M):
    """Metropolis chain on the box with the long-range catalog term.

    Same three-uniform step discipline as metropolis_zero; shapes is a
    tuple of (sites, weight) pairs and strip_M bounds the catalog strip,
    -1 meaning unbounded.
    """
    cdef bitgen_t* bg = get_bitgen(bit_generator)
    cdef Py_ssize_t L = len(phi0)
    cdef long long[::1] phi = np.array(phi0, dtype=np.int64)
    cdef Py_ssize_t n_shapes = len(shapes)
    cdef long long n_cells = 0
    for sites, _ in shapes:
        n_cells += len(sites)
    if 9 * n_cells > 512:
        raise ValueError("catalog too large for the compiled sampler key buffer")
    starts_arr = np.zeros(n_shapes + 1, dtype=np.int64)
    cx_arr = np.zeros(max(n_cells, 1), dtype=np.int64)
    cy_arr = np.zeros(max(n_cells, 1), dtype=np.int64)
    w_arr = np.zeros(max(n_shapes, 1), dtype=np.float64)
    cdef long long[::1] starts = starts_arr
    cdef long long[::1] cxv = cx_arr
    cdef long long[::1] cyv = cy_arr
    cdef double[::1] wv = w_arr
    cdef Py_ssize_t si = 0, c = 0
    for sites, weight in shapes:
        wv[si] = weight
        for sx, sy in sites:
            cxv[c] = sx
            cyv[c] = sy
            c += 1
        si += 1
        starts[si] = c
    cdef double u1, u2, u3, dl
    cdef long long new, dh, step
    cdef Py_ssize_t j
    cdef int d
    for step in range(n_steps):
        u1 = bg.next_double(bg.state)
        j = <Py_ssize_t>(u1 * L)
        if j >= L:
            j = L - 1
        u2 = bg.next_double(bg.state)
        d = 1 if u2 < 0.5 else -1
        u3 = bg.next_double(bg.state)
        new = phi[j] + d
        if new > cut or new < -cut:
            continue
        dh = 0
        if j > 0:
            dh += iabs(new - phi[j - 1]) - iabs(phi[j] - phi[j - 1])
        if j < L - 1:
            dh += iabs(phi[j + 1] - new) - iabs(phi[j + 1] - phi[j])
        dl = -beta * dh - catalog_delta(&phi[0], L, j, d, n_shapes,
                                        &starts[0], &cxv[0], &cyv[0],
                                        &wv[0], strip_M)
        if dl >= 0.0 or u3 < exp(dl):
            phi[j] = new
    return tuple([int(phi[i]) for i in range(L)])
