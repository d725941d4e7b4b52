"""Iterative and dense linear algebra helpers.

Unrestarted GMRES with per-iteration residual reporting (modified
Gram-Schmidt with one reorthogonalisation pass), cached sparse LU solves
for Gram matrices, and dense condition numbers for desk-scale operators.
"""

from dataclasses import dataclass, field
from time import perf_counter
from typing import Callable, List, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class KrylovError(Exception):
    pass


@dataclass
class SolveReport:
    iterations: int
    residual_history: List[float]
    converged: bool
    relative_tolerance: float
    wall_time: float = 0.0


def _as_apply(operator) -> Callable[[np.ndarray], np.ndarray]:
    if callable(operator):
        return operator
    return lambda v: operator @ v


def gmres(operator, rhs: np.ndarray, tol: float = 2e-5,
          maxit: int = 1000, basis_budget: int = 4000):
    """Unrestarted GMRES on a square operator (callable or matrix).

    Returns (solution, SolveReport).  Residuals are relative to |rhs|.
    Exceeding maxit yields a non-converged report, not an exception; a
    Krylov basis larger than basis_budget vectors is refused up front.
    """
    if tol <= 0:
        raise KrylovError("tolerance must be positive")
    apply_op = _as_apply(operator)
    rhs = np.asarray(rhs)
    n = rhs.shape[0]
    maxit = min(maxit, n)
    if maxit > basis_budget:
        raise KrylovError(
            f"Krylov basis of {maxit} vectors exceeds budget {basis_budget}")
    t0 = perf_counter()
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        return np.zeros_like(rhs), SolveReport(0, [0.0], True, tol,
                                               perf_counter() - t0)

    v = np.zeros((maxit + 1, n), dtype=complex)
    h = np.zeros((maxit + 1, maxit), dtype=complex)
    givens = np.zeros((2, maxit), dtype=complex)
    g = np.zeros(maxit + 1, dtype=complex)
    v[0] = rhs / bnorm
    g[0] = bnorm
    history = [1.0]
    converged = False
    k = 0
    for k in range(maxit):
        w = apply_op(v[k])
        for _ in range(2):                      # MGS + one reorth pass
            for i in range(k + 1):
                c = v[i].conj() @ w
                h[i, k] += c
                w = w - c * v[i]
        hk = np.linalg.norm(w)
        h[k + 1, k] = hk
        if hk > 0:
            v[k + 1] = w / hk
        # apply stored rotations, then a new one to annihilate h[k+1,k]
        for i in range(k):
            ci, si = givens[:, i]
            hi, hj = h[i, k], h[i + 1, k]
            h[i, k] = ci.conjugate() * hi + si.conjugate() * hj
            h[i + 1, k] = -si * hi + ci * hj
        denom = np.hypot(abs(h[k, k]), abs(h[k + 1, k]))
        if denom == 0.0:
            ci, si = 1.0, 0.0
        else:
            ci, si = h[k, k] / denom, h[k + 1, k] / denom
        givens[:, k] = ci, si
        h[k, k] = ci.conjugate() * h[k, k] + si.conjugate() * h[k + 1, k]
        h[k + 1, k] = 0.0
        g[k + 1] = -si * g[k]
        g[k] = ci.conjugate() * g[k]
        history.append(abs(g[k + 1]) / bnorm)
        if history[-1] <= tol:
            converged = True
            k += 1
            break
        if hk == 0.0:                           # breakdown: exact solution
            converged = history[-1] <= tol
            k += 1
            break
    else:
        k = maxit

    y = np.zeros(k, dtype=complex)
    if k:
        y = np.linalg.solve(h[:k, :k], g[:k])
    x = y @ v[:k]
    report = SolveReport(k, history, converged, tol, perf_counter() - t0)
    return x, report


@dataclass
class SparseSolver:
    """Cached LU factorization of a square sparse matrix."""
    shape: tuple
    _lu: object = field(repr=False, default=None)

    def solve(self, b: np.ndarray) -> np.ndarray:
        if b.ndim == 1:
            return self._lu.solve(b.astype(complex))
        return np.column_stack([self._lu.solve(col.astype(complex))
                                for col in b.T])


def factorize_sparse(matrix) -> SparseSolver:
    """LU-factorize a square sparse matrix for repeated solves."""
    m = sp.csc_matrix(matrix, dtype=complex)
    if m.shape[0] != m.shape[1]:
        raise KrylovError(f"matrix is not square: {m.shape}")
    try:
        lu = spla.splu(m, options={"SymmetricMode": False})
    except RuntimeError as exc:
        raise KrylovError(f"sparse factorization failed: {exc}") from exc
    u_diag = np.abs(lu.U.diagonal())
    if u_diag.size and (u_diag.min() == 0.0
                        or u_diag.min() < 1e-14 * u_diag.max()):
        raise KrylovError(
            "matrix is numerically singular: smallest pivot "
            f"{u_diag.min():.3e} vs largest {u_diag.max():.3e}")
    return SparseSolver(m.shape, lu)


def condition_number(operator, dim: int, dim_guard: int = 4096) -> float:
    """sigma_max/sigma_min of a desk-scale operator, materialised densely
    by applying it to identity columns.  Rank deficiency returns inf."""
    if dim > dim_guard:
        raise KrylovError(f"dimension {dim} exceeds dense guard {dim_guard}")
    apply_op = _as_apply(operator)
    eye = np.eye(dim)
    cols = [np.asarray(apply_op(eye[:, j].astype(complex))) for j in
            range(dim)]
    mat = np.column_stack(cols)
    s = np.linalg.svd(mat, compute_uv=False)
    if s[-1] == 0.0 or not np.isfinite(s[-1]):
        return np.inf
    return float(s[0] / s[-1])
