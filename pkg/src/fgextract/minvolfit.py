"""Volume-regularized projected block coordinate descent.

Minimizes

    g = sum_k ||Y_k - diag(v_k) [f 1] C_k||_F^2 + lam * volume(f)

over ``C_k >= 0`` and unit-norm nonnegative ``v_k`` and ``f``. A sweep updates
``C_k`` then ``v_k`` for every patch in order, then ``f``; each block takes
one projected-gradient step with backtracking.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import DimensionError, InvalidInputError, NumericError, RankError
from .model import ModelParams, PatchSet, patch_rank2_check, residual
from .numerics import StepControl, backtrack_step, project_nonneg, project_unit_nonneg

__all__ = [
    "MinVolConfig",
    "FitResult",
    "objective_g",
    "volume_gradient",
    "block_gradients",
    "initial_params",
    "minvolfit",
    "minvolfit_multistart",
    "minvolfit_path",
    "refine_unregularized",
    "wallclock_scaling_probe",
]


@dataclass(frozen=True)
class MinVolConfig:
    """Solver settings.

    ``init`` is either ``"uniform_random"`` or a :class:`ModelParams` used as
    a warm start (it is projected onto the constraint set first).
    ``engine="python"`` runs the slow reference loop built on
    :func:`backtrack_step`; it exists for cross-checking.

    ``normalize_data=True`` fits the bag divided by its Frobenius norm, which
    makes ``lam`` a weight relative to the total data energy (equivalently,
    the raw objective with ``lam * ||Y||_F^2``). Returned coefficients are
    scaled back to the raw data; the objective trace stays in normalized units.

    ``objective_rtol`` stops the run once the objective falls below
    ``objective_rtol * ||Y||_F^2`` (with ``lam=0``, a relative-residual target).
    """

    lam: float = 0.0
    n_iters: int = 1_000_000
    step: StepControl = field(default_factory=StepControl)
    seed: int = 0
    init: object = "uniform_random"
    early_stop_rel_tol: float | None = None
    objective_rtol: float | None = None
    skip_rank_check: bool = False
    rank_tol: float = 1e-10
    engine: str = "numba"
    normalize_data: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.n_iters < 1:
            raise ValueError("n_iters must be at least 1")
        if self.objective_rtol is not None and self.objective_rtol < 0:
            raise ValueError("objective_rtol must be nonnegative")
        if self.engine not in ("numba", "python"):
            raise ValueError(f"unknown engine {self.engine!r}")
        if not (self.init == "uniform_random" or isinstance(self.init, ModelParams)):
            raise ValueError("init must be 'uniform_random' or a ModelParams warm start")


@dataclass
class FitResult:
    params: ModelParams
    objective_trace: np.ndarray
    final_residual: float
    iterations_run: int
    seed_used: int

    @property
    def objective(self) -> float:
        return float(self.objective_trace[-1])


def _volume_relaxed(f):
    # Same measure as model.volume but defined on the closed orthant.
    f = np.asarray(f, dtype=float)
    n2 = f @ f
    if n2 == 0:
        raise NumericError("volume undefined at f = 0")
    return float(max(1.0 - f.sum() ** 2 / (f.size * n2), 0.0))


def volume_gradient(f):
    """Gradient of ``1 - (f.1)^2 / (M ||f||^2)``; zero when ``f`` is parallel to 1."""
    f = np.asarray(f, dtype=float)
    M = f.size
    s = f.sum()
    n2 = f @ f
    return -2.0 * s / (M * n2) + (2.0 * s * s / (M * n2 * n2)) * f


def objective_g(bag, params: ModelParams, lam: float) -> float:
    return residual(bag, params) + lam * _volume_relaxed(params.f)


def block_gradients(bag, params: ModelParams, lam: float, block: str, k: int | None = None):
    """Partial gradient of :func:`objective_g` for block ``"C"``, ``"v"`` (patch ``k``) or ``"f"``."""
    bag = bag if isinstance(bag, PatchSet) else PatchSet(bag)
    f = params.f
    if block in ("C", "v"):
        if k is None or not 0 <= k < params.K:
            raise InvalidInputError(f"block {block!r} needs a patch index in [0, {params.K})")
        vk, Ck = params.v[k], params.C[k]
        P = np.outer(f, Ck[0]) + Ck[1]  # [f 1] C_k
        R = bag[k] - vk[:, None] * P
        if block == "C":
            B = np.column_stack([vk * f, vk])
            return -2.0 * B.T @ R
        return -2.0 * np.sum(R * P, axis=1)
    if block == "f":
        g = np.zeros_like(f)
        for Y, vk, Ck in zip(bag, params.v, params.C):
            R = Y - vk[:, None] * (np.outer(f, Ck[0]) + Ck[1])
            g -= 2.0 * vk * (R @ Ck[0])
        return g + lam * volume_gradient(f)
    raise InvalidInputError(f"unknown block {block!r}; expected 'C', 'v' or 'f'")


def initial_params(bag: PatchSet, rng) -> ModelParams:
    """Uniform(0.1, 1.1) entries projected onto each block's constraint set."""
    M = bag.M
    f = project_unit_nonneg(rng.uniform(0.1, 1.1, M))
    v = [project_unit_nonneg(rng.uniform(0.1, 1.1, M)) for _ in range(bag.K)]
    C = [rng.uniform(0.1, 1.1, (2, n)) for n in bag.sizes]
    return ModelParams(f, v, C)


def _project_params(p: ModelParams) -> ModelParams:
    return ModelParams(
        project_unit_nonneg(p.f),
        [project_unit_nonneg(vk) for vk in p.v],
        [project_nonneg(Ck) for Ck in p.C],
    )


def _start(bag: PatchSet, cfg: MinVolConfig) -> ModelParams:
    if isinstance(cfg.init, ModelParams):
        p = cfg.init
        if p.K != bag.K or p.M != bag.M or [c.shape[1] for c in p.C] != bag.sizes:
            raise DimensionError("warm start does not match the bag shape")
        return _project_params(p)
    return initial_params(bag, np.random.default_rng(cfg.seed))


def _run_numba(bag, p, cfg):
    Yt = np.ascontiguousarray(bag.concat().T)
    offsets = np.concatenate([[0], np.cumsum(bag.sizes)]).astype(np.int64)
    f = p.f.copy()
    V = np.ascontiguousarray(np.vstack(p.v))
    C = np.ascontiguousarray(np.hstack(p.C).T)
    trace = np.empty(cfg.n_iters + 1)
    s = cfg.step
    tol = cfg.early_stop_rel_tol or 0.0
    n_run, status = _kernels.minvol_sweeps(
        Yt, offsets, f, V, C, float(cfg.lam), int(cfg.n_iters),
        s.eta0, s.shrink, s.armijo_c, int(s.max_backtracks), float(tol), _stop_below(bag, cfg), trace,
    )
    if status != _kernels.STATUS_OK:
        raise NumericError("objective became non-finite", iteration=int(n_run))
    Cs = [C[a:b].T.copy() for a, b in zip(offsets[:-1], offsets[1:])]
    return ModelParams(f, list(V), Cs), trace[: n_run + 1].copy(), int(n_run)


def _stop_below(bag, cfg):
    return cfg.objective_rtol * bag.frobenius_sq() if cfg.objective_rtol else 0.0


def _run_python(bag, p, cfg):
    f = p.f.copy()
    v = [x.copy() for x in p.v]
    C = [x.copy() for x in p.C]
    lam, ctrl = cfg.lam, cfg.step

    def g_of(f_, v_, C_):
        return objective_g(bag, ModelParams(f_, v_, C_), lam)

    trace = [g_of(f, v, C)]
    n_run = 0
    for it in range(1, cfg.n_iters + 1):
        for k in range(bag.K):
            cur = ModelParams(f, v, C)
            grad = block_gradients(bag, cur, lam, "C", k)

            def val_C(x, k=k):
                return g_of(f, v, C[:k] + [x] + C[k + 1:])

            C[k], _ = backtrack_step(val_C, grad, C[k], project_nonneg, ctrl)
            grad = block_gradients(bag, ModelParams(f, v, C), lam, "v", k)

            def val_v(x, k=k):
                return g_of(f, v[:k] + [x] + v[k + 1:], C)

            v[k], _ = backtrack_step(val_v, grad, v[k], project_unit_nonneg, ctrl)
        grad = block_gradients(bag, ModelParams(f, v, C), lam, "f")
        f, _ = backtrack_step(lambda x: g_of(x, v, C), grad, f, project_unit_nonneg, ctrl)
        new = g_of(f, v, C)
        if not np.isfinite(new):
            raise NumericError("objective became non-finite", iteration=it)
        trace.append(new)
        n_run = it
        tol = cfg.early_stop_rel_tol
        if tol and trace[-2] - new < tol * abs(trace[-2]):
            break
        if new < _stop_below(bag, cfg):
            break
    return ModelParams(f, v, C), np.asarray(trace), n_run


def minvolfit(bag, cfg: MinVolConfig = MinVolConfig()) -> FitResult:
    """Fit ``(f, {v_k}, {C_k})`` to a bag by projected block coordinate descent.

    Parameters
    ----------
    bag : PatchSet or sequence of arrays
    cfg : MinVolConfig

    Returns
    -------
    FitResult
        ``objective_trace[0]`` is the objective at the starting point and
        ``objective_trace[i]`` the value after sweep ``i``.
    """
    bag = bag if isinstance(bag, PatchSet) else PatchSet(bag)
    if not cfg.skip_rank_check:
        bad = [k for k, Y in enumerate(bag) if not patch_rank2_check(Y, cfg.rank_tol)]
        if bad:
            raise RankError(f"patches {bad} fail the rank-2 check; set skip_rank_check for noisy data")
    scale = np.sqrt(bag.frobenius_sq()) if cfg.normalize_data else 1.0
    if scale == 0:
        raise InvalidInputError("cannot normalize an all-zero bag")
    work = bag if scale == 1.0 else PatchSet([Y / scale for Y in bag])
    if isinstance(cfg.init, ModelParams) and scale != 1.0:
        w = cfg.init
        cfg = replace(cfg, init=ModelParams(w.f, w.v, [c / scale for c in w.C]))
    p0 = _start(work, cfg)
    run = _run_numba if cfg.engine == "numba" else _run_python
    params, trace, n_run = run(work, p0, cfg)
    if scale != 1.0:
        params = ModelParams(params.f, params.v, [c * scale for c in params.C])
    return FitResult(params, trace, residual(bag, params), n_run, cfg.seed)


def minvolfit_multistart(bag, cfg: MinVolConfig, seeds: Sequence[int]) -> FitResult:
    """Run one fit per seed and keep the lowest final objective (first on ties)."""
    best = None
    for s in seeds:
        res = minvolfit(bag, replace(cfg, seed=int(s)))
        if best is None or res.objective < best.objective:
            best = res
    return best


def minvolfit_path(bag, lams: Sequence[float], cfg: MinVolConfig, first_iters=None, next_iters=None):
    """Fit a descending sequence of ``lams``, warm starting each from the last.

    Small weights leave the volume term almost flat next to the residual, and
    a cold start then drifts along the solution family very slowly; a larger
    weight first pulls the iterate toward the low-volume end cheaply. Returns
    ``{lam: FitResult}``. ``first_iters`` and ``next_iters`` default to
    ``cfg.n_iters``.
    """
    bag = bag if isinstance(bag, PatchSet) else PatchSet(bag)
    out = {}
    init = cfg.init
    for i, lam in enumerate(sorted(lams, reverse=True)):
        n = (first_iters if i == 0 else next_iters) or cfg.n_iters
        res = minvolfit(bag, replace(cfg, lam=float(lam), n_iters=int(n), init=init,
                                     skip_rank_check=cfg.skip_rank_check or i > 0))
        out[float(lam)] = res
        init = res.params
    return out


def _gn_system(Y, pid, f, V, C):
    """Gauss-Newton normal equations with the per-column coefficient blocks
    eliminated. Returns the reduced matrix and right-hand side for the
    ``(f, V)`` step plus what is needed to back out the ``C`` step."""
    M, N = Y.shape
    K = V.shape[0]
    Vc = V[pid].T  # M x N, background of each column's patch
    c0, c1 = C[:, 0], C[:, 1]
    P = f[:, None] * c0 + c1
    R = Y - Vc * P
    # Jacobian entries of R (each row of R touches f_i, V_{k,i} and c_j only)
    jf = -Vc * c0
    jv = -P
    j0 = -Vc * f[:, None]
    j1 = -Vc
    na = M + K * M
    A = np.zeros((na, na))
    B = np.zeros((na, N, 2))
    fi = np.arange(M)
    A[fi, fi] = np.sum(jf * jf, axis=1)
    B[fi, :, 0] = jf * j0
    B[fi, :, 1] = jf * j1
    ga = np.zeros(na)
    ga[:M] = np.sum(jf * R, axis=1)
    for k in range(K):
        cols = pid == k
        vi = M + k * M + fi
        A[vi, vi] = np.sum(jv[:, cols] ** 2, axis=1)
        cross = np.sum(jf[:, cols] * jv[:, cols], axis=1)
        A[fi, vi] = cross
        A[vi, fi] = cross
        B[vi[:, None], np.flatnonzero(cols)[None, :], 0] = (jv * j0)[:, cols]
        B[vi[:, None], np.flatnonzero(cols)[None, :], 1] = (jv * j1)[:, cols]
        ga[vi] = np.sum(jv[:, cols] * R[:, cols], axis=1)
    D = np.empty((N, 2, 2))
    D[:, 0, 0] = np.sum(j0 * j0, axis=0)
    D[:, 0, 1] = D[:, 1, 0] = np.sum(j0 * j1, axis=0)
    D[:, 1, 1] = np.sum(j1 * j1, axis=0)
    gc = np.stack([np.sum(j0 * R, axis=0), np.sum(j1 * R, axis=0)], axis=1)
    Dinv = np.linalg.inv(D)
    BD = np.einsum("anp,npq->anq", B, Dinv)
    S = A - np.einsum("anq,bnq->ab", BD, B)
    rhs = -ga + np.einsum("anq,nq->a", BD, gc)
    return S, rhs, B, Dinv, gc


def refine_unregularized(bag, params: ModelParams, max_iter: int = 30):
    """Polish an unregularized fit with Gauss-Newton steps.

    Projected coordinate descent converges linearly, and on some bags the
    rate is close to one. Near an exact factorization Gauss-Newton converges
    quadratically, so a few steps take the residual from ``1e-8`` relative
    to rounding level. Only the backgrounds are kept positive (steps that
    would break this are halved); ``f`` and ``C`` are left unconstrained, so
    use the result where only the fitted backgrounds matter. Returns
    ``(params, residuals)`` with the residual before each step and after the
    last.
    """
    bag = bag if isinstance(bag, PatchSet) else PatchSet(bag)
    Y = bag.concat()
    pid = np.repeat(np.arange(bag.K), bag.sizes)
    f = params.f.copy()
    V = np.vstack(params.v)
    C = np.hstack(params.C).T.copy()
    M, K = bag.M, bag.K

    def res(f, V, C):
        return float(np.sum((Y - V[pid].T * (f[:, None] * C[:, 0] + C[:, 1])) ** 2))

    hist = [res(f, V, C)]
    for _ in range(max_iter):
        S, rhs, B, Dinv, gc = _gn_system(Y, pid, f, V, C)
        # the factorization is not unique, so S is singular; take the minimum-norm step
        da = np.linalg.lstsq(S, rhs, rcond=1e-12)[0]
        dc = -np.einsum("npq,nq->np", Dinv, gc + np.einsum("anq,a->nq", B, da))
        t = 1.0
        while t > 1e-8:
            nf = f + t * da[:M]
            nV = V + t * da[M:].reshape(K, M)
            nC = C + t * dc
            if np.all(nV > 0):
                new = res(nf, nV, nC)
                if new < hist[-1]:
                    break
            t *= 0.5
        else:
            break
        f, V, C = nf, nV, nC
        hist.append(new)
        if new <= 1e-28 * hist[0] or new == 0.0:
            break
    # back to the unit-norm gauge
    nf_, nv_ = np.linalg.norm(f), np.linalg.norm(V, axis=1)
    offsets = np.concatenate([[0], np.cumsum(bag.sizes)])
    Cs = []
    for k in range(K):
        Ck = C[offsets[k] : offsets[k + 1]].T * nv_[k]
        Cs.append(np.vstack([Ck[0] * nf_, Ck[1]]))
    out = ModelParams(f / nf_, list(V / nv_[:, None]), Cs)
    return out, np.asarray(hist)


def wallclock_scaling_probe(shapes, n_sweeps=2000, repeats=3, seed=0):
    """Mean per-sweep wall time for random bags of the given ``(K, N, M)`` shapes.

    Each shape is timed ``repeats`` times and the minimum is kept, which is
    the usual way to suppress scheduler noise. Returns a list of dicts with
    keys ``K``, ``N``, ``M``, ``pixels`` and ``sec_per_sweep``.
    """
    rng = np.random.default_rng(seed)
    rows = []
    warm = PatchSet([rng.uniform(0.5, 1.5, (3, 2))])
    minvolfit(warm, MinVolConfig(n_iters=1, skip_rank_check=True))  # compile
    for K, N, M in shapes:
        bag = PatchSet([rng.uniform(0.5, 1.5, (M, N)) for _ in range(K)])
        cfg = MinVolConfig(lam=1e-4, n_iters=n_sweeps, seed=seed, skip_rank_check=True)
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            minvolfit(bag, cfg)
            best = min(best, time.perf_counter() - t0)
        rows.append(dict(K=K, N=N, M=M, pixels=K * N, sec_per_sweep=best / n_sweeps))
    return rows
