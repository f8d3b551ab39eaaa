"""Bag-of-patches data model and the identifiability algebra around it.

Each patch is an ``M x N_k`` matrix (rows are bands, columns are pixels)

    Y_k = diag(v_k) [f 1] C_k

where ``f`` is the foreground signature shared by all patches, ``v_k`` the
background-illumination signature of patch ``k`` and ``C_k`` a nonnegative
``2 x N_k`` coefficient matrix whose first row multiplies ``f`` and whose
second row multiplies the all-ones vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateError,
    DimensionError,
    DomainError,
    InfeasibleTransformError,
    InvalidInputError,
    RankError,
    RescaleRequiredError,
    SingularTransformError,
)

__all__ = [
    "PatchSet",
    "ModelParams",
    "TightnessRatios",
    "TransformParams",
    "CTUBox",
    "check_patch",
    "reconstruct",
    "residual",
    "volume",
    "tightness_ratios",
    "canonical_solution",
    "is_fully_tight",
    "apply_transform",
    "feasible_transform_check",
    "straddle_rescale",
    "ctu_feasible_box",
    "ctu_to_transform",
    "ctu_signature",
    "minvol_gradient_ctu",
    "patch_rank2_check",
]


def check_patch(Y, norm_floor=0.0):
    """Validate a single patch and return it as a float array.

    ``norm_floor=0`` enforces the noiseless invariant (no all-zero column);
    for noisy data pass a positive floor on the column norms instead.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2:
        raise DimensionError(f"patch must be 2-D, got shape {Y.shape}")
    M, N = Y.shape
    if M < 3 or N < 2:
        raise DimensionError(f"patch needs M >= 3 bands and N >= 2 pixels, got {Y.shape}")
    norms = np.linalg.norm(Y, axis=0)
    if np.any(norms <= norm_floor):
        raise InvalidInputError("patch has a column with norm at or below the floor")
    return Y


class PatchSet:
    """An ordered bag of patches sharing the same band count.

    Parameters
    ----------
    patches : iterable of array_like
        Each entry is an ``M x N_k`` matrix.
    norm_floor : float or None
        Column-norm floor passed to :func:`check_patch`. ``None`` skips the
        per-column check (raw data read from disk, noisy sweeps).
    """

    def __init__(self, patches: Iterable, norm_floor: float | None = None):
        arrs = []
        for Y in patches:
            if norm_floor is None:
                Y = np.asarray(Y, dtype=float)
                if Y.ndim != 2 or Y.shape[0] < 2 or Y.shape[1] < 1:
                    raise DimensionError(f"bad patch shape {Y.shape}")
            else:
                Y = check_patch(Y, norm_floor)
            arrs.append(Y)
        if not arrs:
            raise InvalidInputError("a bag needs at least one patch")
        M = arrs[0].shape[0]
        if any(Y.shape[0] != M for Y in arrs):
            raise DimensionError("all patches must share the same band count")
        self.patches: tuple[np.ndarray, ...] = tuple(arrs)

    @property
    def K(self) -> int:
        return len(self.patches)

    @property
    def M(self) -> int:
        return self.patches[0].shape[0]

    @property
    def sizes(self) -> list[int]:
        return [Y.shape[1] for Y in self.patches]

    @property
    def n_pixels(self) -> int:
        return sum(self.sizes)

    def concat(self) -> np.ndarray:
        """Columnwise concatenation ``[Y_1 ... Y_K]``."""
        return np.hstack(self.patches)

    def frobenius_sq(self) -> float:
        return float(sum(np.sum(Y * Y) for Y in self.patches))

    def __len__(self):
        return self.K

    def __iter__(self):
        return iter(self.patches)

    def __getitem__(self, k):
        return self.patches[k]

    def __repr__(self):
        return f"PatchSet(K={self.K}, M={self.M}, sizes={self.sizes})"


@dataclass(frozen=True)
class ModelParams:
    """A factorization ``(f, {v_k}, {C_k})`` of a bag."""

    f: np.ndarray
    v: tuple
    C: tuple

    def __post_init__(self):
        object.__setattr__(self, "f", np.asarray(self.f, dtype=float))
        object.__setattr__(self, "v", tuple(np.asarray(x, dtype=float) for x in self.v))
        object.__setattr__(self, "C", tuple(np.asarray(x, dtype=float) for x in self.C))
        if len(self.v) != len(self.C):
            raise DimensionError("v and C must have the same number of patches")
        M = self.f.shape[0]
        for vk, Ck in zip(self.v, self.C):
            if vk.shape != (M,):
                raise DimensionError(f"v has shape {vk.shape}, expected ({M},)")
            if Ck.ndim != 2 or Ck.shape[0] != 2:
                raise DimensionError(f"C must be 2 x N_k, got {Ck.shape}")

    @property
    def K(self) -> int:
        return len(self.v)

    @property
    def M(self) -> int:
        return self.f.shape[0]

    def is_valid(self, strict=True) -> bool:
        """Model invariants; ``strict=False`` is the solver's relaxed set."""
        if strict:
            ok = np.all(self.f > 0) and all(np.all(vk > 0) for vk in self.v)
        else:
            ok = np.all(self.f >= 0) and all(np.all(vk >= 0) for vk in self.v)
        return bool(ok and all(np.all(Ck >= 0) for Ck in self.C))


@dataclass(frozen=True)
class TightnessRatios:
    r_a: float
    r_b: float

    @property
    def product(self) -> float:
        return self.r_a * self.r_b


@dataclass(frozen=True)
class TransformParams:
    """Parameters of the solution-space transform.

    ``Tmat = [[alpha, gamma], [beta, delta]]`` and ``eps`` holds one positive
    rescaling per patch.
    """

    alpha: float
    beta: float
    gamma: float
    delta: float
    eps: tuple = ()

    @property
    def det(self) -> float:
        return self.alpha * self.delta - self.beta * self.gamma

    def matrix(self) -> np.ndarray:
        return np.array([[self.alpha, self.gamma], [self.beta, self.delta]], dtype=float)

    def adjugate(self) -> np.ndarray:
        return np.array([[self.delta, -self.gamma], [-self.beta, self.alpha]], dtype=float)


def _as_bag(bag) -> PatchSet:
    return bag if isinstance(bag, PatchSet) else PatchSet(bag)


def _inner(f):
    return np.column_stack([f, np.ones_like(f)])


def reconstruct(params: ModelParams) -> PatchSet:
    """Evaluate ``diag(v_k) [f 1] C_k`` for every patch."""
    F = _inner(params.f)
    return PatchSet([vk[:, None] * (F @ Ck) for vk, Ck in zip(params.v, params.C)])


def residual(bag, params: ModelParams) -> float:
    """Summed squared Frobenius misfit between ``bag`` and ``params``."""
    bag = _as_bag(bag)
    if bag.K != params.K or bag.M != params.M:
        raise DimensionError(f"bag is K={bag.K}, M={bag.M}; params are K={params.K}, M={params.M}")
    F = _inner(params.f)
    total = 0.0
    for Y, vk, Ck in zip(bag, params.v, params.C):
        if Ck.shape[1] != Y.shape[1]:
            raise DimensionError(f"C has {Ck.shape[1]} columns, patch has {Y.shape[1]}")
        R = Y - vk[:, None] * (F @ Ck)
        total += float(np.sum(R * R))
    return total


def volume(f) -> float:
    """Normalized-determinant volume ``1 - cos^2(f, 1)``; scale invariant."""
    f = np.asarray(f, dtype=float)
    if f.ndim != 1 or f.size < 2:
        raise DimensionError("volume needs a vector with at least 2 entries")
    if np.any(f <= 0):
        raise DomainError("volume is defined for strictly positive vectors")
    fn = f / np.max(f)
    cos2 = fn.sum() ** 2 / (f.size * np.dot(fn, fn))
    return float(min(max(1.0 - cos2, 0.0), 1.0))


def _column_ratios(C_list):
    cols = np.hstack([np.asarray(C, dtype=float) for C in C_list])
    if cols.shape[0] != 2:
        raise DimensionError("coefficient matrices must have two rows")
    if np.any(cols < 0):
        raise InvalidInputError("coefficients must be nonnegative")
    c1, c2 = cols
    if np.any((c1 == 0) & (c2 == 0)):
        raise InvalidInputError("zero coefficient column")
    if not any(np.linalg.matrix_rank(np.asarray(C, dtype=float)) == 2 for C in C_list):
        raise RankError("at least one coefficient matrix must have rank 2")
    with np.errstate(divide="ignore"):
        a = np.where(c1 > 0, c2 / np.where(c1 > 0, c1, 1.0), np.inf)
        b = np.where(c2 > 0, c1 / np.where(c2 > 0, c2, 1.0), np.inf)
    return a, b


def tightness_ratios(C_list: Sequence) -> TightnessRatios:
    """Minimum coefficient ratios ``(r_a, r_b)`` over every column of every patch.

    ``r_a = min c2/c1`` and ``r_b = min c1/c2`` with ``x/0 := inf``.
    """
    a, b = _column_ratios(C_list)
    return TightnessRatios(float(a.min()), float(b.min()))


def is_fully_tight(C_list: Sequence, tol: float = 1e-9) -> bool:
    """True when both endpoint kinds appear somewhere in the bag."""
    r = tightness_ratios(C_list)
    return r.r_a <= tol and r.r_b <= tol


def canonical_solution(f, ratios: TightnessRatios) -> np.ndarray:
    """``f0 = (f + r_a) / (r_b f + 1)``, the min-volume representative."""
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0):
        raise DomainError("f must be strictly positive")
    if ratios.r_a * ratios.r_b >= 1:
        raise DegenerateError(f"r_a * r_b = {ratios.product} >= 1")
    return (f + ratios.r_a) / (ratios.r_b * f + 1.0)


def apply_transform(params: ModelParams, T: TransformParams) -> ModelParams:
    """Map a factorization through ``T``; the reconstructed bag is unchanged."""
    if T.det == 0:
        raise SingularTransformError("alpha*delta - beta*gamma == 0")
    eps = T.eps if len(T.eps) else (1.0,) * params.K
    if len(eps) != params.K:
        raise DimensionError(f"need {params.K} eps values, got {len(eps)}")
    if any(e <= 0 for e in eps):
        raise InfeasibleTransformError("eps entries must be positive")
    f = params.f
    num = T.alpha * f + T.beta
    den = T.gamma * f + T.delta
    if np.any(num <= 0) or np.any(den <= 0):
        raise InfeasibleTransformError("alpha f + beta and gamma f + delta must be positive")
    Tinv = T.adjugate() / T.det
    v = tuple(e * den * vk for e, vk in zip(eps, params.v))
    C = tuple((Tinv @ Ck) / e for e, Ck in zip(eps, params.C))
    return ModelParams(num / den, v, C)


def feasible_transform_check(T: TransformParams, f, ratios: TightnessRatios) -> bool:
    """Whether ``T`` maps the true model onto another valid solution."""
    det = T.det
    if det == 0:
        return False
    f = np.asarray(f, dtype=float)
    if np.any(T.alpha * f + T.beta <= 0) or np.any(T.gamma * f + T.delta <= 0):
        return False
    ends = np.array([[1.0, ratios.r_b], [ratios.r_a, 1.0]])
    adj = T.adjugate()
    # boundary transforms cancel exactly in theory; allow for the rounding
    slack = 4 * np.finfo(float).eps * (np.abs(adj) @ np.abs(ends))
    return bool(np.all(np.sign(det) * (adj @ ends) >= -slack))


def straddle_rescale(f, ratios: TightnessRatios | None = None):
    """Rescale ``f`` so that ``min f < 1 < max f``.

    The scale is ``2 / (min f + max f)``. Rescaling ``f`` by ``a`` moves a
    factor ``1/a`` into the first coefficient row, so the ratios become
    ``(a r_a, r_b / a)``; their product is unchanged.
    """
    f = np.asarray(f, dtype=float)
    a = 2.0 / (f.min() + f.max())
    if ratios is None:
        return a * f, None
    return a * f, TightnessRatios(a * ratios.r_a, ratios.r_b / a)


@dataclass(frozen=True)
class CTUBox:
    """Feasible ``(c, t, u)`` region for the ``t > u`` branch.

    ``c > 0``, ``u_low < u <= u_high``, ``t_low <= t < t_high``.
    """

    u_low: float
    u_high: float
    t_low: float
    t_high: float

    def contains(self, c, t, u) -> bool:
        return c > 0 and self.u_low < u <= self.u_high and self.t_low <= t < self.t_high

    def sample(self, n, rng, c_range=(0.1, 10.0)):
        """Uniform draws of ``(c, t, u)``; the open ends are nudged inward."""
        lo, hi = np.nextafter(self.u_low, np.inf), self.u_high
        u = rng.uniform(lo, hi, n)
        t = rng.uniform(self.t_low, np.nextafter(self.t_high, -np.inf), n)
        c = rng.uniform(*c_range, n)
        return c, t, u


def ctu_feasible_box(f, ratios: TightnessRatios) -> CTUBox:
    f = np.asarray(f, dtype=float)
    fmin, fmax = f.min(), f.max()
    if not fmin < 1.0 < fmax:
        raise RescaleRequiredError("f must straddle 1; apply straddle_rescale first")
    return CTUBox(
        u_low=-1.0 / (fmax - 1.0),
        u_high=ratios.r_b / (1.0 + ratios.r_b),
        t_low=1.0 / (1.0 + ratios.r_a),
        t_high=1.0 / (1.0 - fmin),
    )


def ctu_to_transform(c, t, u, K=0) -> TransformParams:
    return TransformParams(c * t, c * (1.0 - t), u, 1.0 - u, (1.0,) * K)


def ctu_signature(c, t, u, f) -> np.ndarray:
    """``s = c (t f + (1-t)) / (u f + (1-u))``."""
    f = np.asarray(f, dtype=float)
    return c * (t * f + (1.0 - t)) / (u * f + (1.0 - u))


def minvol_gradient_ctu(c, t, u, f):
    """Gradient of ``J = s.1 / ||s||`` with respect to ``(c, t, u)``.

    Returns ``(grad, K1, K2)`` where ``grad = [0, -c K1, K2 / c] / ((t-u) ||s||^3)``,
    ``K1 = ||s||^2 ||1||^2 - (s.1)^2`` and ``K2 = (s.(s*s))(s.1) - ||s||^4``.
    """
    if t == u:
        raise DegenerateError("t == u collapses s onto a multiple of 1")
    f = np.asarray(f, dtype=float)
    if np.any(u * f + (1.0 - u) <= 0):
        raise DomainError("u f + (1 - u) must be positive")
    s = ctu_signature(c, t, u, f)
    ss = float(s @ s)
    s1 = float(s.sum())
    K1 = ss * s.size - s1 * s1
    K2 = float(s @ (s * s)) * s1 - ss * ss
    scale = 1.0 / ((t - u) * ss ** 1.5)
    grad = np.array([0.0, -c * K1 * scale, K2 / c * scale])
    return grad, K1, K2


def patch_rank2_check(Y, tol: float = 1e-10) -> bool:
    """Relative second-singular-value test for rank >= 2."""
    s = np.linalg.svd(np.asarray(Y, dtype=float), compute_uv=False)
    if s.size < 2 or s[0] <= 0:
        return False
    return bool(s[1] > tol * s[0])
