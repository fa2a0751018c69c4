"""Exact finite-state generators, spectral gaps, and the killed semigroup.

States live on the truncated spaces from the model layer in lexicographic
order.  Generators are assembled sparsely with the square-root jump rates;
the diagonal is the negative row sum by construction, so rows sum to zero
exactly.  Symmetrizations use the geometric mean of forward and backward
rates, which is symmetric in floating point and equals
D^{1/2}(-G)D^{-1/2} up to roundoff for reversible G.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dynamics import Move, jump_rate
from .model import CONSTRAINED, SIZE_CAP, enumerate_configurations, log_weight

DENSE_LIMIT = 2000


@dataclass(frozen=True)
class StateIndex:
    """Deterministic bijection between configurations and matrix indices."""

    params: object
    truncation: int | None
    states: tuple
    index: dict

    @classmethod
    def build(cls, params, truncation=None, size_cap=SIZE_CAP):
        states = tuple(enumerate_configurations(params, truncation, size_cap))
        return cls(params, truncation, states, {c: i for i, c in enumerate(states)})

    def __len__(self):
        return len(self.states)


@dataclass(frozen=True)
class GeneratorOperator:
    """Sparse reversible generator with its stationary law.

    offdiag holds the positive jump rates; diag is minus the row sums of
    offdiag, stored so the row-sum-zero identity is exact by construction.
    """

    space: StateIndex
    offdiag: sp.csr_matrix
    diag: np.ndarray
    pi: np.ndarray

    @property
    def n(self):
        return len(self.diag)

    @property
    def matrix(self):
        return (self.offdiag + sp.diags(self.diag)).tocsr()

    def reversibility_defect(self):
        """Largest relative asymmetry of pi_i G_ij over stored transitions."""
        coo = self.offdiag.tocoo()
        if len(coo.data) == 0:
            return 0.0
        fwd = self.pi[coo.row] * coo.data
        bwd = _entries(self.offdiag, coo.col, coo.row) * self.pi[coo.col]
        scale = np.maximum(np.abs(fwd), np.abs(bwd))
        scale[scale == 0] = 1.0
        return float(np.max(np.abs(fwd - bwd) / scale))


def _flat_rates_constrained(space, params):
    H = np.asarray(space.states, dtype=np.int64)
    n, L = H.shape
    M, beta = params.M, params.beta
    idx = np.arange(n, dtype=np.int64)
    rows, cols, vals = [], [], []
    for k in range(L):
        w = (2 * M + 1) ** (L - 1 - k)
        for d in (1, -1):
            new = H[:, k] + d
            valid = np.abs(new) <= M
            dh = np.zeros(n, dtype=np.int64)
            if k > 0:
                dh += np.abs(new - H[:, k - 1]) - np.abs(H[:, k] - H[:, k - 1])
            if k < L - 1:
                dh += np.abs(H[:, k + 1] - new) - np.abs(H[:, k + 1] - H[:, k])
            rate = np.exp(-0.5 * beta * dh[valid])
            rows.append(idx[valid])
            cols.append(idx[valid] + d * w)
            vals.append(rate)
    return rows, cols, vals


def _flat_rates_auxiliary(space, params):
    H = np.asarray(space.states, dtype=np.int64)
    n, L = H.shape
    M, R, beta = params.M, space.truncation, params.beta
    D = np.empty_like(H)
    D[:, 0] = H[:, 0]
    if L > 1:
        D[:, 1:] = H[:, 1:] - H[:, :-1]
    radices = [2 * M + 1] + [2 * R + 1] * (L - 1)
    weights = [1] * L
    for i in range(L - 2, -1, -1):
        weights[i] = weights[i + 1] * radices[i + 1]
    tops = [M] + [R] * (L - 1)
    idx = np.arange(n, dtype=np.int64)
    rows, cols, vals = [], [], []
    for k in range(L):
        for d in (1, -1):
            new_k = D[:, k] + d
            valid = np.abs(new_k) <= tops[k]
            shift = d * weights[k]
            dh = np.zeros(n, dtype=np.int64)
            if k > 0:
                dh += np.abs(new_k) - np.abs(D[:, k])
            if k + 1 < L:
                new_next = D[:, k + 1] - d
                valid &= np.abs(new_next) <= tops[k + 1]
                dh += np.abs(new_next) - np.abs(D[:, k + 1])
                shift -= d * weights[k + 1]
            rate = np.exp(-0.5 * beta * dh[valid])
            rows.append(idx[valid])
            cols.append(idx[valid] + shift)
            vals.append(rate)
    return rows, cols, vals


def build_generator(params, truncation=None, size_cap=SIZE_CAP):
    """Assemble the reversible generator on the enumerated truncated space.

    Auxiliary spaces are truncated reflectingly: transitions leaving the
    enumeration are dropped and the stationary law is renormalized on what
    remains.  Constrained transitions out of the box are genuinely zero.
    """
    space = StateIndex.build(params, truncation, size_cap)
    n = len(space)
    if params.catalog.is_zero:
        H = np.asarray(space.states, dtype=np.int64)
        energies = (
            np.abs(np.diff(H, axis=1)).sum(axis=1) if params.L > 1 else np.zeros(n)
        )
        weights = np.exp(-params.beta * energies)
        if params.measure_kind == CONSTRAINED:
            rows, cols, vals = _flat_rates_constrained(space, params)
        else:
            rows, cols, vals = _flat_rates_auxiliary(space, params)
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
    else:
        weights = np.exp([log_weight(c, params) for c in space.states])
        rows, cols, vals = [], [], []
        for i, cfg in enumerate(space.states):
            for k in range(1, params.L + 1):
                for d in (1, -1):
                    tgt = cfg[: k - 1] + (cfg[k - 1] + d,) + cfg[k:]
                    j = space.index.get(tgt)
                    if j is None:
                        continue
                    r = jump_rate(cfg, Move(k, d), params)
                    if r > 0.0:
                        rows.append(i)
                        cols.append(j)
                        vals.append(r)
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
    offdiag = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    diag = -np.asarray(offdiag.sum(axis=1)).ravel()
    pi = weights / weights.sum()
    return GeneratorOperator(space, offdiag, diag, pi)


def _entries(mat, rows, cols):
    if len(rows) == 0:
        return np.empty(0, dtype=np.float64)
    return np.asarray(mat[rows, cols], dtype=np.float64).ravel()


def _symmetrized(offdiag, diag):
    """-G conjugated into symmetric form via geometric-mean off-diagonals."""
    coo = offdiag.tocoo()
    upper = coo.row < coo.col
    r, c = coo.row[upper], coo.col[upper]
    back = _entries(offdiag, c, r)
    vals = -np.sqrt(coo.data[upper] * back)
    s = sp.csr_matrix(
        (np.concatenate([vals, vals]), (np.concatenate([r, c]), np.concatenate([c, r]))),
        shape=offdiag.shape,
    )
    return (s + sp.diags(-diag)).tocsr()


def _smallest_eigs(S, k, deflate=None):
    """k smallest eigenvalues of sparse symmetric S, optionally deflating one
    known ground vector."""
    n = S.shape[0]
    if n <= DENSE_LIMIT:
        vals = scipy.linalg.eigh(
            S.toarray(), eigvals_only=True, subset_by_index=[0, k - 1]
        )
        return np.asarray(vals)
    rng = np.random.default_rng(7)
    X = rng.standard_normal((n, max(k, 2)))
    Y = None
    if deflate is not None:
        y = deflate / np.linalg.norm(deflate)
        Y = y.reshape(n, 1)
        X -= Y @ (Y.T @ X)
    d = S.diagonal().copy()
    d[d <= 0] = 1.0
    prec = sp.diags(1.0 / d)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            vals, _ = spla.lobpcg(
                S, X, M=prec, Y=Y, tol=1e-9, maxiter=1000, largest=False
            )
        vals = np.sort(vals)[:k]
        if np.all(np.isfinite(vals)):
            return vals
    except Exception:
        pass
    # fallback: shift-invert Lanczos around zero
    want = k + (1 if deflate is not None else 0)
    vals = spla.eigsh(S, k=want, sigma=-1e-12, which="LM", return_eigenvectors=False)
    vals = np.sort(vals)
    return vals[-k:] if deflate is not None else vals[:k]


def _rayleigh_check(gen, lam1, n_probe=5):
    rng = np.random.default_rng(12345)
    G = gen.matrix
    for _ in range(n_probe):
        f = rng.standard_normal(gen.n)
        mean = float(gen.pi @ f)
        var = float(gen.pi @ (f - mean) ** 2)
        if var <= 0:
            continue
        energy = -float(gen.pi @ (f * (G @ f)))
        quotient = energy / var
        assert lam1 <= quotient * (1 + 1e-8) + 1e-12, (
            "eigensolve exceeded a Rayleigh quotient: %r > %r" % (lam1, quotient)
        )


def spectral_gap(gen, reversibility_tol=1e-11):
    """Second-smallest eigenvalue of the symmetrized negative generator."""
    if gen.n < 2:
        raise ValueError("need at least two states for a gap")
    defect = gen.reversibility_defect()
    if defect > reversibility_tol:
        raise ValueError("generator is not reversible (defect %.3e)" % defect)
    S = _symmetrized(gen.offdiag, gen.diag)
    if gen.n <= DENSE_LIMIT:
        vals = _smallest_eigs(S, 2)
        lam1 = float(vals[1])
    else:
        vals = _smallest_eigs(S, 1, deflate=np.sqrt(gen.pi))
        lam1 = float(vals[0])
    _rayleigh_check(gen, lam1)
    return lam1


@dataclass(frozen=True)
class KilledOperator:
    """Generator restricted to region A with escape rates kept on the diagonal."""

    gen: GeneratorOperator
    indices: np.ndarray
    offdiag: sp.csr_matrix
    diag: np.ndarray
    pi: np.ndarray
    cutoff: int

    @property
    def n(self):
        return len(self.indices)

    @property
    def matrix(self):
        return (self.offdiag + sp.diags(self.diag)).tocsr()

    def configs(self):
        states = self.gen.space.states
        return [states[i] for i in self.indices]


def killed_operator(gen, region_eps=None):
    """Restrict to region A, keeping the full diagonal (sub-stochastic)."""
    params = gen.space.params
    eps = params.region_eps if region_eps is None else region_eps
    cut = math.floor((1.0 - eps) * params.L / 2.0)
    inside = np.array(
        [max(abs(v) for v in c) <= cut for c in gen.space.states], dtype=bool
    )
    if not inside.any():
        raise ValueError("region A contains no enumerated state")
    idx = np.flatnonzero(inside)
    sub = gen.offdiag[np.ix_(idx, idx)].tocsr()
    return KilledOperator(gen, idx, sub, gen.diag[idx], gen.pi[idx], cut)


def killed_gap(killed):
    """Smallest eigenvalue of the symmetrized killed operator."""
    S = _symmetrized(killed.offdiag, killed.diag)
    return float(_smallest_eigs(S, 1)[0]) if killed.n > 1 else float(-killed.diag[0])


def _start_vector(killed, start):
    if start is None:
        rho = killed.pi / killed.pi.sum()
        return rho
    if isinstance(start, tuple):
        configs = killed.configs()
        try:
            pos = configs.index(start)
        except ValueError:
            raise ValueError("start configuration lies outside region A") from None
        rho = np.zeros(killed.n)
        rho[pos] = 1.0
        return rho
    rho = np.asarray(start, dtype=np.float64)
    if rho.shape != (killed.n,) or rho.min() < 0:
        raise ValueError("start must be a distribution over the A states")
    return rho / rho.sum()


def _killed_eig_factors(killed):
    """Spectral factors of exp(t G_A) acting on the all-ones vector."""
    S = _symmetrized(killed.offdiag, killed.diag).toarray()
    lam, U = scipy.linalg.eigh(S)
    sq = np.sqrt(killed.pi)
    right = U.T @ sq  # U^T D^{1/2} 1
    return lam, U, sq, right


def survival_curve(killed, start, times):
    """P(exit time > t) for each t, for the given start distribution in A."""
    times = np.asarray(times, dtype=np.float64)
    rho = _start_vector(killed, start)
    if killed.n <= DENSE_LIMIT:
        lam, U, sq, right = _killed_eig_factors(killed)
        left = (rho / sq) @ U  # rho^T D^{-1/2} U
        return np.array([float(left @ (np.exp(-lam * t) * right)) for t in times])
    G = killed.matrix.tocsc()
    ones = np.ones(killed.n)
    return np.array(
        [float(rho @ spla.expm_multiply(G * t, ones)) for t in times]
    )


def survival_cdf(killed, start):
    """Exact distribution function t -> P(exit <= t), for KS-style tests."""
    if killed.n > DENSE_LIMIT:
        raise ValueError("exact distribution function needs a dense-sized A")
    lam, U, sq, right = _killed_eig_factors(killed)
    rho = _start_vector(killed, start)
    left = (rho / sq) @ U
    coef = left * right

    def cdf(t):
        arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
        surv = np.exp(-np.outer(arr, lam)) @ coef
        out = np.clip(1.0 - surv, 0.0, 1.0)
        return float(out[0]) if np.ndim(t) == 0 else out

    return cdf


def mean_exit_times(killed):
    """Expected exit times from region A, one entry per A state."""
    A = -killed.matrix
    ones = np.ones(killed.n)
    if killed.n <= DENSE_LIMIT:
        return np.linalg.solve(A.toarray(), ones)
    return spla.spsolve(A.tocsc(), ones)


@dataclass(frozen=True)
class FormReport:
    """One named scalar with the truncation metadata that produced it."""

    name: str
    value: float
    L: int
    M: int | None
    beta: float
    R: int | None
    space_size: int
    extra: dict | None = None

    def to_dict(self):
        out = {
            "name": self.name,
            "value": self.value,
            "L": self.L,
            "M": self.M,
            "beta": self.beta,
            "R": self.R,
            "space_size": self.space_size,
        }
        if self.extra:
            out.update(self.extra)
        return out


def write_matrix(path, gen):
    """Debug dump: one 'i j rate' triple per off-diagonal entry."""
    coo = gen.offdiag.tocoo()
    with open(path, "w") as fh:
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write("%d %d %.17g\n" % (i, j, v))
