"""Small numerical kernels shared by the solvers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimensionError, DomainError, NumericError, SingularTransformError

__all__ = [
    "StepControl",
    "project_nonneg",
    "project_unit_nonneg",
    "backtrack_step",
    "rank2_basis",
    "ls_coefficients",
    "cosine",
    "min_cosine_pair_exact",
    "min_cosine_pair_greedy",
]


@dataclass(frozen=True)
class StepControl:
    """Backtracking line-search settings."""

    eta0: float = 1.0
    shrink: float = 0.5
    armijo_c: float = 1e-4
    max_backtracks: int = 40

    def __post_init__(self):
        if not self.eta0 > 0:
            raise ValueError("eta0 must be positive")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if self.max_backtracks < 1:
            raise ValueError("max_backtracks must be at least 1")


def project_nonneg(y):
    return np.maximum(np.asarray(y, dtype=float), 0.0)


def project_unit_nonneg(y):
    """Project onto the intersection of the unit sphere and the nonnegative orthant.

    If ``y`` has no positive entry the nearest feasible point is the basis
    vector at the entry of smallest magnitude (first one on ties).
    """
    y = np.asarray(y, dtype=float)
    if np.all(y >= 0) and abs(np.linalg.norm(y) - 1.0) <= 4 * np.finfo(float).eps:
        return y.copy()  # already feasible; keeps the map exactly idempotent
    p = np.maximum(y, 0.0)
    if np.any(p > 0):
        p = p / p.max()  # guards the norm against underflow
        return p / np.linalg.norm(p)
    e = np.zeros_like(y)
    e[np.argmin(np.abs(y))] = 1.0
    return e


def backtrack_step(
    value_fn: Callable[[np.ndarray], float],
    grad,
    x,
    project: Callable[[np.ndarray], np.ndarray],
    ctrl: StepControl = StepControl(),
):
    """One projected-gradient step with backtracking.

    Tries ``eta = eta0 * shrink**j`` for ``j = 0..max_backtracks``. When the
    projection leaves the trial point untouched the Armijo condition is
    required; otherwise plain non-increase is enough. Returns ``(x, 0.0)``
    when no step is accepted or the step does not move ``x``.
    """
    x = np.asarray(x, dtype=float)
    grad = np.asarray(grad, dtype=float)
    f0 = value_fn(x)
    if not np.isfinite(f0):
        raise NumericError("objective is not finite at the current point")
    g2 = float(np.sum(grad * grad))
    eta = ctrl.eta0
    for _ in range(ctrl.max_backtracks + 1):
        trial = x - eta * grad
        x_new = project(trial)
        if np.array_equal(x_new, x):
            return x, 0.0
        f1 = value_fn(x_new)
        if np.isfinite(f1):
            if np.array_equal(x_new, trial):
                ok = f1 <= f0 - ctrl.armijo_c * eta * g2
            else:
                ok = f1 <= f0
            if ok:
                return x_new, eta
        eta *= ctrl.shrink
    return x, 0.0


def rank2_basis(A):
    """Orthonormal ``M x 2`` basis of the best rank-2 approximation (uncentered SVD)."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[1] < 2:
        raise DimensionError("rank2_basis needs a matrix with at least 2 columns")
    if A.shape[0] < 2:
        raise DimensionError("rank2_basis needs at least 2 rows")
    U, _, _ = np.linalg.svd(A, full_matrices=False)
    return U[:, :2].copy()


def ls_coefficients(V, A):
    """Least-squares ``argmin_C ||A - V C||_F`` for a full-rank ``M x 2`` basis."""
    V = np.asarray(V, dtype=float)
    A = np.asarray(A, dtype=float)
    if V.ndim != 2 or A.ndim != 2 or V.shape[0] != A.shape[0]:
        raise DimensionError(f"incompatible shapes {V.shape} and {A.shape}")
    s = np.linalg.svd(V, compute_uv=False)
    if s[-1] <= s[0] * np.finfo(float).eps * max(V.shape):
        raise SingularTransformError("basis is rank deficient")
    coef, *_ = np.linalg.lstsq(V, A, rcond=None)
    return coef


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise DomainError("cosine is undefined for a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def _unit_columns(columns):
    X = np.asarray(columns, dtype=float)
    if X.ndim != 2:
        raise DimensionError("columns must form a 2-D array")
    if X.shape[1] < 2:
        raise DimensionError("need at least two columns")
    n = np.linalg.norm(X, axis=0)
    if np.any(n == 0):
        raise DomainError("zero column")
    return X / n


def _as_matrix(columns):
    # A list of vectors is stacked as columns; an array is taken as M x N.
    if isinstance(columns, np.ndarray):
        return columns
    return np.column_stack([np.asarray(c, dtype=float) for c in columns])


def min_cosine_pair_exact(columns):
    """Indices ``(i, j)``, ``i < j``, of the least similar pair of columns.

    ``columns`` is either an ``M x N`` array or a list of ``M``-vectors. Ties
    go to the smallest ``i``, then the smallest ``j``.
    """
    U = _unit_columns(_as_matrix(columns))
    G = U.T @ U
    N = G.shape[0]
    iu, ju = np.triu_indices(N, k=1)
    # triu_indices is row-major, so argmin already implements the tie-break.
    k = int(np.argmin(G[iu, ju]))
    return int(iu[k]), int(ju[k])


def min_cosine_pair_greedy(columns):
    """Single-pass greedy pair search.

    Starts from columns ``(0, 1)`` and, for each later column, replaces
    whichever end gives the lower pair cosine, but only when that strictly
    decreases the current pair cosine.
    """
    U = _unit_columns(_as_matrix(columns))
    i, j = 0, 1
    best = U[:, i] @ U[:, j]
    for k in range(2, U.shape[1]):
        ci = U[:, i] @ U[:, k]  # keep i, replace j
        cj = U[:, j] @ U[:, k]  # keep j, replace i
        if ci <= cj:
            if ci < best:
                j, best = k, ci
        elif cj < best:
            i, best = j, cj
            j = k
    return (i, j) if i < j else (j, i)
