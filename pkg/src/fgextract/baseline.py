"""Benchmark: rank-2 minimum-volume NMF on the concatenated bag.

Solves

    min ||Y - W H||_F^2 + lam * logdet(W'W + delta I)
    s.t. W >= 0, each column of H in {h >= 0, sum(h) <= 1}

by alternating projected gradient with backtracking, then reads the
foreground estimate off the two columns of ``W``. The benchmark treats the
whole bag as one two-material scene, so it cannot absorb per-patch changes in
the background signature.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DimensionError, NumericError
from .model import PatchSet
from .numerics import StepControl

__all__ = ["NmfConfig", "NmfResult", "minvol_nmf", "nmf_objective", "benchmark_extract"]


@dataclass(frozen=True)
class NmfConfig:
    lam: float = 0.1
    delta: float = 0.1
    n_iters: int = 50_000
    seed: int = 0
    step: StepControl = field(default_factory=StepControl)

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.n_iters < 1:
            raise ValueError("n_iters must be at least 1")


@dataclass
class NmfResult:
    W: np.ndarray
    H: np.ndarray
    objective_trace: np.ndarray
    clamped_entries: int = 0

    @property
    def objective(self) -> float:
        return float(self.objective_trace[-1])


def nmf_objective(Y, W, H, lam, delta) -> float:
    R = Y - W @ H
    _, ld = np.linalg.slogdet(W.T @ W + delta * np.eye(W.shape[1]))
    return float(np.sum(R * R) + lam * ld)


def minvol_nmf(Y, cfg: NmfConfig = NmfConfig()) -> NmfResult:
    """Factor ``Y ~ W H`` with a log-det volume penalty on ``W``.

    Negative entries of ``Y`` (from additive noise) are set to zero first;
    the number of such entries is reported in ``clamped_entries``.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[1] < 2:
        raise DimensionError("Y must be a matrix with at least two columns")
    neg = Y < 0
    Y = np.ascontiguousarray(np.where(neg, 0.0, Y))
    M, N = Y.shape
    rng = np.random.default_rng(cfg.seed)
    W = rng.uniform(0.1, 1.1, (M, 2))
    H = rng.uniform(0.1, 1.1, (2, N))
    H /= np.maximum(H.sum(axis=0), 1.0)
    trace = np.empty(cfg.n_iters + 1)
    s = cfg.step
    n_run, status = _kernels.nmf_iterations(
        Y, W, H, float(cfg.lam), float(cfg.delta), int(cfg.n_iters),
        s.eta0, s.shrink, s.armijo_c, int(s.max_backtracks), trace,
    )
    if status != _kernels.STATUS_OK:
        raise NumericError("NMF objective became non-finite", iteration=int(n_run))
    return NmfResult(W, H, trace[: n_run + 1].copy(), int(neg.sum()))


def benchmark_extract(bag, cfg: NmfConfig = NmfConfig()) -> np.ndarray:
    """Foreground estimate ``W[:, 0] / W[:, 1]`` after flooring ``W`` at ``delta``."""
    bag = bag if isinstance(bag, PatchSet) else PatchSet(bag)
    res = minvol_nmf(bag.concat(), cfg)
    W = np.maximum(res.W, cfg.delta)
    return W[:, 0] / W[:, 1]
