"""Orthogonal matching pursuit and its batched Gram/Cholesky variant."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_triangular

from .parallel import map_chunks

# squared Cholesky pivot below which the support is treated as rank-deficient
PIVOT_TOL = 1e-12
# residual norm (relative to the signal) regarded as exactly zero
ZERO_RESIDUAL = 1e-12


@dataclass(frozen=True)
class Dictionary:
    """Column-normalized dictionary; one atom per column."""

    atoms: np.ndarray

    def __post_init__(self):
        D = np.array(self.atoms, dtype=np.float64, copy=True)
        if D.ndim != 2 or D.shape[1] < 1:
            raise ValueError(f"dictionary must be 2-D with at least one atom, got {D.shape}")
        if not np.all(np.isfinite(D)):
            raise ValueError("dictionary contains non-finite entries")
        norms = np.linalg.norm(D, axis=0)
        if np.any(np.abs(norms - 1.0) > 1e-10):
            raise ValueError("dictionary atoms must have unit norm")
        D.flags.writeable = False
        object.__setattr__(self, "atoms", D)

    @classmethod
    def normalized(cls, atoms) -> "Dictionary":
        atoms = np.asarray(atoms, dtype=np.float64)
        return cls(atoms / np.linalg.norm(atoms, axis=0))

    @property
    def atom_dim(self) -> int:
        return self.atoms.shape[0]

    @property
    def atom_count(self) -> int:
        return self.atoms.shape[1]


@dataclass(frozen=True)
class PursuitParams:
    k0: int
    epsilon: float = 0.3

    def __post_init__(self):
        if self.k0 < 1:
            raise ValueError("k0 must be >= 1")
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError("epsilon must lie in [0, 1)")


@dataclass(frozen=True)
class SparseCode:
    """``N_D x N`` coefficient matrix in CSC form with sorted row indices."""

    coefficients: sp.csc_array
    cardinality_bound: int

    def __post_init__(self):
        c = self.coefficients
        if c.shape[1] and np.diff(c.indptr).max(initial=0) > self.cardinality_bound:
            raise ValueError("a column exceeds the cardinality bound")

    @property
    def shape(self) -> tuple[int, int]:
        return self.coefficients.shape

    def column(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        c = self.coefficients
        sl = slice(c.indptr[j], c.indptr[j + 1])
        return c.indices[sl], c.data[sl]

    def nnz_per_column(self) -> np.ndarray:
        return np.diff(self.coefficients.indptr)

    def toarray(self) -> np.ndarray:
        return self.coefficients.toarray()


@dataclass
class OMPResult:
    """Support in selection order, its coefficients and the residual trace."""

    support: np.ndarray
    coefficients: np.ndarray
    residual_norms: list = field(default_factory=list)

    @property
    def residual_norm(self) -> float:
        return self.residual_norms[-1]

    def dense(self, atom_count: int) -> np.ndarray:
        x = np.zeros(atom_count)
        x[self.support] = self.coefficients
        return x


def _check_signal(y: np.ndarray):
    if not np.all(np.isfinite(y)):
        raise ValueError("signal contains NaN or infinite values")


def omp(dictionary: Dictionary, signal, params: PursuitParams) -> OMPResult:
    """Greedy pursuit of a single signal.

    Stops once ``||r|| / ||y|| < epsilon``, after ``k0`` atoms, when the
    residual vanishes, or when the next atom would make the support Gram
    matrix numerically singular.
    """
    D = dictionary.atoms
    y = np.asarray(signal, dtype=np.float64)
    if y.shape != (D.shape[0],):
        raise ValueError(f"signal length {y.shape} does not match atom_dim {D.shape[0]}")
    _check_signal(y)
    y_norm = float(np.linalg.norm(y))
    result = OMPResult(np.zeros(0, dtype=np.int64), np.zeros(0), [y_norm])
    if y_norm == 0.0:
        return result

    support: list[int] = []
    L = np.zeros((params.k0, params.k0))
    r = y
    r_norm = y_norm
    gamma = np.zeros(0)
    while len(support) < params.k0:
        if r_norm < params.epsilon * y_norm or r_norm <= ZERO_RESIDUAL * y_norm:
            break
        corr = np.abs(D.T @ r)
        corr[support] = -1.0
        j = int(np.argmax(corr))
        t = len(support)
        if t:
            w = solve_triangular(L[:t, :t], D[:, support].T @ D[:, j], lower=True)
            pivot = 1.0 - w @ w
            if pivot < PIVOT_TOL:
                break
            L[t, :t] = w
            L[t, t] = np.sqrt(pivot)
        else:
            L[0, 0] = 1.0
        support.append(j)
        Ds = D[:, support]
        z = solve_triangular(L[:t + 1, :t + 1], Ds.T @ y, lower=True)
        gamma = solve_triangular(L[:t + 1, :t + 1].T, z, lower=False)
        r = y - Ds @ gamma
        r_norm = float(np.linalg.norm(r))
        result.residual_norms.append(r_norm)
    result.support = np.asarray(support, dtype=np.int64)
    result.coefficients = gamma
    return result


@dataclass
class BatchCodes:
    """Raw Batch-OMP output: padded supports (``-1`` marks unused slots)."""

    support: np.ndarray  # (N, k0) int64, selection order
    coefs: np.ndarray  # (N, k0)
    nnz: np.ndarray  # (N,)
    residual_norm: np.ndarray  # (N,)
    signal_norm: np.ndarray  # (N,)

    def to_sparse(self, atom_count: int) -> SparseCode:
        N, k0 = self.support.shape
        cols = np.repeat(np.arange(N), k0)
        rows = self.support.ravel()
        vals = self.coefs.ravel()
        keep = rows >= 0
        mat = sp.csc_array((vals[keep], (rows[keep], cols[keep])), shape=(atom_count, N))
        mat.sum_duplicates()
        mat.sort_indices()
        return SparseCode(mat, k0)


def _batch_chunk(D, G, Y, k0, epsilon):
    m, N = Y.shape
    sup = np.full((N, k0), -1, dtype=np.int64)
    coefs = np.zeros((N, k0))
    nnz = np.zeros(N, dtype=np.int64)
    y_norm = np.linalg.norm(Y, axis=0)
    r_norm = y_norm.copy()
    alpha = (D.T @ Y).T  # (N, N_D)
    L = np.zeros((N, k0, k0))
    active = np.flatnonzero(y_norm > 0)
    for t in range(k0):
        done = (r_norm[active] < epsilon * y_norm[active]) | (r_norm[active] <= ZERO_RESIDUAL * y_norm[active])
        active = active[~done]
        if active.size == 0:
            break
        S = sup[active, :t]
        gam = coefs[active, :t]
        corr = alpha[active].copy()
        if t:
            corr -= np.einsum("nsk,ns->nk", G[S], gam)
        corr = np.abs(corr)
        np.put_along_axis(corr, S, -1.0, axis=1)
        j = np.argmax(corr, axis=1)

        if t:
            g = G[S, j[:, None]]  # (n, t)
            Lt = L[active, :t, :t]
            w = np.empty_like(g)
            for i in range(t):
                w[:, i] = (g[:, i] - np.einsum("nl,nl->n", Lt[:, i, :i], w[:, :i])) / Lt[:, i, i]
            pivot = 1.0 - np.einsum("ni,ni->n", w, w)
            ok = pivot >= PIVOT_TOL
            active, j, w, pivot = active[ok], j[ok], w[ok], pivot[ok]
            if active.size == 0:
                break
            L[active, t, :t] = w
            L[active, t, t] = np.sqrt(pivot)
        else:
            L[active, 0, 0] = 1.0
        sup[active, t] = j
        nnz[active] = t + 1

        S = sup[active, :t + 1]
        a = np.take_along_axis(alpha[active], S, axis=1)
        Lt = L[active, :t + 1, :t + 1]
        z = np.empty_like(a)
        for i in range(t + 1):
            z[:, i] = (a[:, i] - np.einsum("nl,nl->n", Lt[:, i, :i], z[:, :i])) / Lt[:, i, i]
        gam = np.empty_like(a)
        for i in range(t, -1, -1):
            gam[:, i] = (z[:, i] - np.einsum("nl,nl->n", Lt[:, i + 1:, i], gam[:, i + 1:])) / Lt[:, i, i]
        coefs[active, :t + 1] = gam
        approx = np.einsum("mnk,nk->mn", D[:, S], gam)
        r_norm[active] = np.linalg.norm(Y[:, active] - approx, axis=0)
    return BatchCodes(sup, coefs, nnz, r_norm, y_norm)


def batch_omp_codes(D: np.ndarray, Y: np.ndarray, k0: int, epsilon: float,
                    gram: np.ndarray | None = None, threads: int | None = None) -> BatchCodes:
    """Batch-OMP over the columns of ``Y`` against raw atom matrix ``D``.

    The Gram matrix is computed once and shared by every column; each
    column keeps its own progressively updated Cholesky factor.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] != D.shape[0]:
        raise ValueError(f"signals must have {D.shape[0]} rows, got shape {Y.shape}")
    _check_signal(Y)
    G = D.T @ D if gram is None else gram
    N = Y.shape[1]
    if N == 0:
        empty = np.zeros((0, k0))
        return BatchCodes(empty.astype(np.int64) - 1, empty, np.zeros(0, np.int64), np.zeros(0), np.zeros(0))
    parts = map_chunks(lambda lo, hi: _batch_chunk(D, G, Y[:, lo:hi], k0, epsilon), N, threads)
    return BatchCodes(
        np.concatenate([p.support for p in parts]),
        np.concatenate([p.coefs for p in parts]),
        np.concatenate([p.nnz for p in parts]),
        np.concatenate([p.residual_norm for p in parts]),
        np.concatenate([p.signal_norm for p in parts]),
    )


def batch_omp(dictionary: Dictionary, signals, params: PursuitParams,
              threads: int | None = None) -> SparseCode:
    codes = batch_omp_codes(dictionary.atoms, signals, params.k0, params.epsilon, threads=threads)
    return codes.to_sparse(dictionary.atom_count)


def reconstruct(dictionary: Dictionary | np.ndarray, code: SparseCode) -> np.ndarray:
    """Dense ``D @ X`` touching only the stored coefficients."""
    D = dictionary.atoms if isinstance(dictionary, Dictionary) else np.asarray(dictionary)
    if code.shape[0] != D.shape[1]:
        raise ValueError(f"code has {code.shape[0]} rows but dictionary has {D.shape[1]} atoms")
    return np.asarray((code.coefficients.T @ D.T).T)
