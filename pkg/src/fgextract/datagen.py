"""Synthetic bag generator and SNR-to-noise mapping."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, DomainError
from .model import ModelParams, PatchSet, reconstruct

__all__ = ["SynthConfig", "GroundTruth", "generate_bag", "snr_to_sigma2", "snr_grid", "log_grid"]


@dataclass(frozen=True)
class SynthConfig:
    """Shape and randomness of one synthetic bag.

    ``noise_seed`` seeds the noise draw separately from the clean bag, so a
    sweep can reuse the same clean bag across SNR levels. When it is ``None``
    the noise continues the main random stream.
    """

    K: int = 10
    N: int = 25
    M: int = 30
    r: float = 1.0
    p: float = 0.5
    is_strict: bool = True
    snr: float = math.inf
    seed: int = 0
    noise_seed: int | None = None

    def __post_init__(self):
        if self.K < 1 or self.N < 2 or self.M < 3:
            raise ValueError("need K >= 1, N >= 2 and M >= 3")
        if self.r < 0:
            raise ValueError("r must be nonnegative")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        if not self.snr > 0:
            raise ValueError("snr must be positive")


@dataclass(frozen=True)
class GroundTruth:
    params: ModelParams
    sigma2: float
    tight: tuple = ()  # per patch: "strict", "f", "one" or "" (not tight)


def snr_to_sigma2(data, snr: float) -> float:
    """Noise variance giving the requested ratio of mean squared entry to variance."""
    if not snr > 0:
        raise DomainError("snr must be positive")
    if isinstance(data, PatchSet):
        arrs = data.patches
    else:
        arrs = [np.asarray(Y, dtype=float) for Y in data]
    n = sum(Y.size for Y in arrs)
    if n == 0:
        raise DomainError("no data entries")
    if math.isinf(snr):
        return 0.0
    return float(sum(np.sum(Y * Y) for Y in arrs) / n / snr)


def log_grid(lo, hi, n):
    return np.logspace(math.log10(lo), math.log10(hi), n)


def snr_grid():
    """Ten log-spaced SNR values from 1e2 to 1e6."""
    return log_grid(1e2, 1e6, 10)


def _draw_signature(rng, M, attempts=100):
    for _ in range(attempts):
        f = rng.uniform(0.5, 1.5, M)
        s = np.linalg.svd(np.column_stack([np.ones(M), f, f * f]), compute_uv=False)
        if s[-1] > 1e-10 * s[0]:
            return f
    raise DegenerateError(f"could not draw a signature independent of 1 and f*f in {attempts} tries")


def generate_bag(cfg: SynthConfig):
    """Draw a bag and its ground truth.

    Coefficient row 0 multiplies ``f`` and row 1 multiplies ``1``. A pixel on
    the foreground end has coefficients ``(K_p, 0)``, one on the background
    end ``(0, K_p)``; interior pixels use ``K_p (w, 1 - w)`` with ``w`` in
    ``[0.05, 0.95]``. Columns are shuffled so endpoints sit at random positions.
    """
    rng = np.random.default_rng(cfg.seed)
    M, N = cfg.M, cfg.N
    f = _draw_signature(rng, M)
    shared = rng.uniform(0.5, 1.5, M)
    v, C, kinds = [], [], []
    for _ in range(cfg.K):
        v.append(shared + cfg.r * rng.uniform(0.5, 1.5, M))
        w = rng.uniform(0.05, 0.95, N)
        kp = rng.uniform(0.5, 2.0, N)
        Ck = np.vstack([kp * w, kp * (1.0 - w)])
        kind = ""
        if rng.random() < cfg.p:
            if cfg.is_strict:
                Ck[:, 0] = (kp[0], 0.0)
                Ck[:, 1] = (0.0, kp[1])
                kind = "strict"
            elif rng.random() < 0.5:
                Ck[:, 0] = (kp[0], 0.0)
                kind = "f"
            else:
                Ck[:, 0] = (0.0, kp[0])
                kind = "one"
        C.append(Ck[:, rng.permutation(N)])
        kinds.append(kind)
    truth = ModelParams(f, v, C)
    clean = reconstruct(truth)
    sigma2 = snr_to_sigma2(clean, cfg.snr)
    if sigma2 == 0.0:
        return clean, GroundTruth(truth, 0.0, tuple(kinds))
    noise_rng = rng if cfg.noise_seed is None else np.random.default_rng(cfg.noise_seed)
    sd = math.sqrt(sigma2)
    noisy = PatchSet([Y + sd * noise_rng.standard_normal(Y.shape) for Y in clean])
    return noisy, GroundTruth(truth, sigma2, tuple(kinds))
