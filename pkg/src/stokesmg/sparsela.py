"""Sparse and dense linear algebra kernels for the solver stack.

Sparse storage is compressed-row (scipy); dense local solves use LU with
partial pivoting and an explicit singularity guard.  The Krylov driver
is a flexible GMRES that stores the preconditioned direction vectors, so
the preconditioner may change between iterations, and optionally keeps
the iteration orthogonal to a known operator nullspace.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg


class SingularMatrixError(Exception):
    """A dense factorization hit a pivot that is numerically zero."""


@dataclass
class DenseFactorization:
    lu: np.ndarray
    piv: np.ndarray
    shape: tuple


@dataclass
class KrylovReport:
    iterations: int
    relative_residual: float
    converged: bool
    history: np.ndarray       # relative residual per iteration, incl. start
    breakdown: bool = False


def _as_operator(a):
    if callable(a):
        return a
    return lambda v: a @ v


def spmv(a, x: np.ndarray) -> np.ndarray:
    """y = A x for a compressed-row matrix."""
    return a @ x


def extract_submatrix(a, rows, cols) -> np.ndarray:
    """Dense block A[rows, cols] (absent entries are zero)."""
    rows = np.asarray(rows, dtype=int)
    cols = np.asarray(cols, dtype=int)
    if rows.size == 0 or cols.size == 0:
        return np.zeros((rows.size, cols.size))
    if np.any(rows[:-1] >= rows[1:]) or np.any(cols[:-1] >= cols[1:]):
        raise ValueError("index lists must be sorted and duplicate-free")
    if rows[-1] >= a.shape[0] or cols[-1] >= a.shape[1] or rows[0] < 0 or cols[0] < 0:
        raise ValueError("index out of range")
    return np.asarray(a[rows][:, cols].todense())


def lu_factor(a: np.ndarray) -> DenseFactorization:
    """Dense LU with partial pivoting; raises on numerically singular input."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("need a square matrix")
    if a.shape[0] == 0:
        return DenseFactorization(np.zeros((0, 0)), np.zeros(0, dtype=np.int32),
                                  (0, 0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    # Compare each pivot against the magnitude of the row it came from;
    # saddle-point blocks mix row scales by many orders of magnitude.
    row_scale = np.max(np.abs(a), axis=1)
    if np.any(row_scale == 0.0):
        raise SingularMatrixError("matrix has an all-zero row")
    perm = np.arange(a.shape[0])
    for i, p in enumerate(piv):
        perm[[i, p]] = perm[[p, i]]
    if np.any(np.abs(np.diag(lu)) < 1e-12 * row_scale[perm]):
        raise SingularMatrixError("pivot below 1e-12 of its row magnitude")
    return DenseFactorization(lu, piv, a.shape)


def lu_solve(fact: DenseFactorization, b: np.ndarray) -> np.ndarray:
    if fact.shape[0] == 0:
        return np.zeros_like(b)
    return scipy.linalg.lu_solve((fact.lu, fact.piv), b, check_finite=False)


def triple_product(p, a, p_right=None):
    """Sparse P^T A P (or P^T A Q) in compressed-row form."""
    q = p if p_right is None else p_right
    return (p.T @ (a @ q)).tocsr()


class NullspaceProjector:
    """Orthogonal projector onto the complement of a span."""

    def __init__(self, basis):
        mat = np.column_stack([np.asarray(v, dtype=float) for v in basis])
        q, r = np.linalg.qr(mat)
        if np.min(np.abs(np.diag(r))) < 1e-12 * max(1.0, np.max(np.abs(r))):
            raise ValueError("nullspace basis is linearly dependent")
        self.q = q

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return x - self.q @ (self.q.T @ x)


def nullspace_projector(basis) -> NullspaceProjector:
    return NullspaceProjector(basis)


def fgmres(a, b: np.ndarray, *, preconditioner=None, rtol: float = 1e-10,
           max_it: int = 100, nullspace: NullspaceProjector | None = None,
           x0: np.ndarray | None = None,
           target_norm: float | None = None) -> tuple[np.ndarray, KrylovReport]:
    """Unrestarted flexible GMRES with explicit preconditioned directions.

    Convergence is declared when the residual norm drops below
    rtol * ||r0|| (or rtol * target_norm when a fixed baseline is given,
    which warm restarts use to keep tolerances comparable).  Nullspace
    components are projected out of the right-hand side, of every Arnoldi
    vector, and of the returned solution.
    """
    op = _as_operator(a)
    proj = nullspace if nullspace is not None else (lambda v: v)
    n = len(b)
    b = proj(np.asarray(b, dtype=float).copy())
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    r = proj(b - op(x)) if x0 is not None else b.copy()
    beta = float(np.linalg.norm(r))
    base = float(target_norm) if target_norm is not None else beta
    if base == 0.0:
        return x, KrylovReport(0, 0.0, True, np.zeros(1))
    history = [beta / base]
    if beta <= rtol * base:
        return x, KrylovReport(0, history[0], True, np.array(history))

    vmat = np.zeros((max_it + 1, n))
    zmat = np.zeros((max_it, n))
    hess = np.zeros((max_it + 1, max_it))
    cs = np.zeros(max_it)
    sn = np.zeros(max_it)
    g = np.zeros(max_it + 1)
    g[0] = beta
    vmat[0] = r / beta

    converged = False
    breakdown = False
    j = 0
    for j in range(max_it):
        z = preconditioner(vmat[j]) if preconditioner is not None else vmat[j]
        zmat[j] = z
        w = proj(op(z))
        wnorm0 = np.linalg.norm(w)
        for i in range(j + 1):
            hess[i, j] = np.dot(vmat[i], w)
            w -= hess[i, j] * vmat[i]
        hess[j + 1, j] = np.linalg.norm(w)
        if hess[j + 1, j] <= 1e-14 * max(1.0, wnorm0):
            breakdown = True
        else:
            vmat[j + 1] = w / hess[j + 1, j]
        # Update the QR factorization of the Hessenberg column.
        for i in range(j):
            t = cs[i] * hess[i, j] + sn[i] * hess[i + 1, j]
            hess[i + 1, j] = -sn[i] * hess[i, j] + cs[i] * hess[i + 1, j]
            hess[i, j] = t
        denom = np.hypot(hess[j, j], hess[j + 1, j])
        cs[j] = hess[j, j] / denom
        sn[j] = hess[j + 1, j] / denom
        hess[j, j] = denom
        hess[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        res = abs(g[j + 1])
        history.append(res / base)
        if breakdown or res <= rtol * base:
            converged = True
            break

    its = j + 1
    y = scipy.linalg.solve_triangular(hess[:its, :its], g[:its],
                                      check_finite=False)
    x = proj(x + zmat[:its].T @ y)
    return x, KrylovReport(its, history[-1], converged, np.array(history),
                           breakdown)


def estimate_lambda_max(a, *, m: int = 10, seed: int = 0,
                        preconditioner=None, n: int | None = None) -> float:
    """Largest-magnitude Ritz value of the right-preconditioned operator.

    Runs m Arnoldi steps from a seeded pseudorandom start vector and
    returns the maximum eigenvalue magnitude of the resulting Hessenberg
    block; early breakdown uses the block built so far.
    """
    if m < 1:
        raise ValueError("need at least one Arnoldi step")
    op = _as_operator(a)
    if n is None:
        n = a.shape[0]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    vmat = np.zeros((m + 1, n))
    vmat[0] = v
    hess = np.zeros((m + 1, m))
    used = 0
    for j in range(m):
        z = preconditioner(vmat[j]) if preconditioner is not None else vmat[j]
        w = op(z)
        for i in range(j + 1):
            hess[i, j] = np.dot(vmat[i], w)
            w -= hess[i, j] * vmat[i]
        hess[j + 1, j] = np.linalg.norm(w)
        used = j + 1
        if hess[j + 1, j] <= 1e-14:
            break
        vmat[j + 1] = w / hess[j + 1, j]
    eigs = np.linalg.eigvals(hess[:used, :used])
    return float(np.max(np.abs(eigs)))
