"""Endpoint fit: normalize patches by fitted backgrounds, then take the ratio
of the two least similar normalized pixels.

After dividing each patch by its background signature, every noiseless pixel
lies in the cone spanned by ``f`` and ``1``. The two extreme rays of that cone
are the least similar pair of columns, and their elementwise ratio recovers
``f`` (or ``1 / f``) up to scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateError, InvalidInputError
from .minvolfit import FitResult, MinVolConfig, minvolfit, refine_unregularized
from .model import PatchSet, residual
from .numerics import ls_coefficients, min_cosine_pair_exact, min_cosine_pair_greedy, rank2_basis

__all__ = [
    "EPFitConfig",
    "EPFitResult",
    "NormalizedBag",
    "normalized_concat",
    "endpoint_prune",
    "endpoint_pair_solution",
    "epfit",
    "epfit_detailed",
]

_PAIR_SEARCH = {"exact": min_cosine_pair_exact, "greedy": min_cosine_pair_greedy}


@dataclass(frozen=True)
class EPFitConfig:
    """``refine=True`` polishes the inner fit with Gauss-Newton steps before
    normalizing (see :func:`refine_unregularized`); worthwhile on noiseless
    bags, where the endpoint ratio is only as exact as the fitted backgrounds."""

    inner: MinVolConfig = field(default_factory=lambda: MinVolConfig(lam=0.0, n_iters=50_000))
    removal_count: int = 0
    pair_search: str = "exact"
    ratio_floor: float = 1e-9
    refine: bool = False

    def __post_init__(self):
        if self.inner.lam != 0:
            # the endpoint argument needs an exact (unregularized) fit
            object.__setattr__(self, "inner", replace(self.inner, lam=0.0))
        if self.removal_count < 0:
            raise ValueError("removal_count must be nonnegative")
        if self.pair_search not in _PAIR_SEARCH:
            raise ValueError(f"pair_search must be one of {sorted(_PAIR_SEARCH)}")
        if not self.ratio_floor > 0:
            raise ValueError("ratio_floor must be positive")


@dataclass
class NormalizedBag:
    """Background-normalized pixels with their provenance."""

    data: np.ndarray  # M x N
    patch: np.ndarray  # patch index per column
    column: np.ndarray  # within-patch index per column
    floor_events: int = 0


@dataclass
class EPFitResult:
    f: np.ndarray
    pair: tuple
    pair_cosine: float
    normalized: NormalizedBag
    inner: object = None


def normalized_concat(bag, v_est, ratio_floor: float = 1e-9) -> NormalizedBag:
    """Divide each patch by its (floored) background estimate and concatenate."""
    bag = bag if isinstance(bag, PatchSet) else PatchSet(bag)
    if len(v_est) != bag.K:
        raise InvalidInputError(f"need {bag.K} background estimates, got {len(v_est)}")
    cols, pk, pj = [], [], []
    floors = 0
    for k, (Y, vk) in enumerate(zip(bag, v_est)):
        vk = np.asarray(vk, dtype=float)
        low = vk < ratio_floor
        floors += int(low.sum())
        cols.append(Y / np.where(low, ratio_floor, vk)[:, None])
        pk.append(np.full(Y.shape[1], k))
        pj.append(np.arange(Y.shape[1]))
    return NormalizedBag(np.hstack(cols), np.concatenate(pk), np.concatenate(pj), floors)


def _coefficient_angles(Ytilde):
    V = rank2_basis(Ytilde)
    V = V * np.where(V.mean(axis=0) < 0, -1.0, 1.0)
    coef = ls_coefficients(V, Ytilde)
    # The in-plane angle orders the columns along the cone monotonically, even
    # where the second coefficient changes sign and a plain ratio would not.
    return np.arctan2(coef[1], coef[0])


def endpoint_prune(Ytilde, removal_count: int, return_index: bool = False):
    """Drop ``removal_count`` columns from each extreme of the cone.

    Columns are ordered by their angle inside the best rank-2 subspace; the
    first and last ``removal_count`` are removed.
    """
    Ytilde = np.asarray(Ytilde, dtype=float)
    N = Ytilde.shape[1]
    if removal_count < 0:
        raise InvalidInputError("removal_count must be nonnegative")
    if N - 2 * removal_count < 2 or (removal_count > 0 and N <= 4 * removal_count):
        raise InvalidInputError(f"{N} columns are too few to remove {removal_count} per side")
    if removal_count == 0:
        keep = np.arange(N)
    else:
        order = np.argsort(_coefficient_angles(Ytilde), kind="stable")
        keep = np.sort(order[removal_count : N - removal_count])
    return (Ytilde[:, keep], keep) if return_index else Ytilde[:, keep]


def _ratio(u1, u2, floor):
    return np.maximum(u1 / np.maximum(u2, floor), floor)


def _pair(Ytilde, mode):
    if mode not in _PAIR_SEARCH:
        raise InvalidInputError(f"unknown pair search {mode!r}")
    i, j = _PAIR_SEARCH[mode](Ytilde)
    a, b = Ytilde[:, i], Ytilde[:, j]
    cos = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
    return i, j, cos


def endpoint_pair_solution(Ytilde, mode: str = "exact", ratio_floor: float = 1e-9):
    """Ratio of the least similar pair of columns of pre-normalized data."""
    Ytilde = np.asarray(Ytilde, dtype=float)
    i, j, cos = _pair(Ytilde, mode)
    if cos >= 1.0 - 1e-12:
        raise DegenerateError("the two least similar columns are parallel")
    return _ratio(Ytilde[:, i], Ytilde[:, j], ratio_floor)


def epfit_detailed(bag, cfg: EPFitConfig = EPFitConfig(), inner=None) -> EPFitResult:
    """As :func:`epfit`, also returning the pair, its cosine and the inner fit.

    ``inner`` may carry a finished unregularized fit of the same bag, which
    lets several removal counts share one fit.
    """
    bag = bag if isinstance(bag, PatchSet) else PatchSet(bag)
    if inner is None:
        inner = minvolfit(bag, cfg.inner)
    if cfg.refine:
        params, _ = refine_unregularized(bag, inner.params)
        inner = FitResult(params, inner.objective_trace, residual(bag, params), inner.iterations_run, inner.seed_used)
    norm = normalized_concat(bag, inner.params.v, cfg.ratio_floor)
    Yt, keep = endpoint_prune(norm.data, cfg.removal_count, return_index=True)
    i, j, cos = _pair(Yt, cfg.pair_search)
    if cos >= 1.0 - 1e-12:
        raise DegenerateError("the two least similar columns are parallel")
    f = _ratio(Yt[:, i], Yt[:, j], cfg.ratio_floor)
    return EPFitResult(f, (int(keep[i]), int(keep[j])), cos, norm, inner)


def epfit(bag, cfg: EPFitConfig = EPFitConfig()) -> np.ndarray:
    """Estimate the foreground signature (up to scale and inversion)."""
    return epfit_detailed(bag, cfg).f
