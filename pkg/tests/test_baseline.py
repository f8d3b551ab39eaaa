import numpy as np
import pytest

from fgextract.baseline import NmfConfig, benchmark_extract, minvol_nmf, nmf_objective
from fgextract.datagen import SynthConfig, generate_bag
from fgextract.errors import DimensionError
from fgextract.metrics import angular_difference, signature_error


def planted(rng, M=12, N=40):
    W = rng.uniform(0.2, 1.5, (M, 2))
    H = rng.uniform(0.0, 1.0, (2, N))
    H /= np.maximum(H.sum(axis=0), 1.0)
    return W, H


def best_of(Y, cfg, seeds=range(5)):
    runs = [minvol_nmf(Y, NmfConfig(lam=cfg.lam, delta=cfg.delta, n_iters=cfg.n_iters, seed=s)) for s in seeds]
    return min(runs, key=lambda r: r.objective)


def test_config_validation():
    with pytest.raises(ValueError):
        NmfConfig(delta=0)
    with pytest.raises(ValueError):
        NmfConfig(lam=-1)
    with pytest.raises(ValueError):
        NmfConfig(n_iters=0)


def test_logdet_term_vanishes_for_orthonormal_w():
    rng = np.random.default_rng(0)
    Q, _ = np.linalg.qr(rng.normal(size=(6, 2)))
    H = rng.uniform(size=(2, 5))
    assert nmf_objective(Q @ H, Q, H, lam=1.0, delta=1e-12) == pytest.approx(0.0, abs=1e-10)


def test_planted_factorization_lambda0():
    rng = np.random.default_rng(1)
    W, H = planted(rng)
    Y = W @ H
    res = best_of(Y, NmfConfig(lam=0.0, n_iters=20_000))
    assert res.objective <= 1e-8 * np.sum(Y * Y)


def test_monotone_and_nonnegative():
    rng = np.random.default_rng(2)
    W, H = planted(rng)
    Y = W @ H + 0.01 * rng.normal(size=(W.shape[0], H.shape[1]))
    res = minvol_nmf(Y, NmfConfig(lam=0.5, n_iters=500, seed=3))
    assert np.all(np.diff(res.objective_trace) <= 1e-10)
    assert np.all(res.W >= 0) and np.all(res.H >= 0)
    assert np.all(res.H.sum(axis=0) <= 1 + 1e-12)
    assert res.clamped_entries == int(np.sum(Y < 0))
    assert res.objective == pytest.approx(nmf_objective(np.maximum(Y, 0), res.W, res.H, 0.5, 0.1), rel=1e-9)


def test_every_iterate_nonnegative():
    rng = np.random.default_rng(4)
    W, H = planted(rng, M=5, N=12)
    Y = W @ H
    # runs are deterministic, so a prefix of a longer run is a shorter run
    for n in (1, 2, 5, 17):
        res = minvol_nmf(Y, NmfConfig(lam=0.2, n_iters=n, seed=1))
        assert np.all(res.W >= 0) and np.all(res.H >= 0)
        gram = res.W.T @ res.W + 0.1 * np.eye(2)
        assert np.all(np.linalg.eigvalsh(gram) > 0)


def test_separable_cone_extremes():
    rng = np.random.default_rng(5)
    M, N = 10, 60
    x, y = rng.uniform(0.5, 1.5, M), rng.uniform(0.5, 1.5, M)
    w = rng.uniform(0.05, 0.95, N)
    w[:2] = (1.0, 0.0)
    Y = (np.outer(x, w) + np.outer(y, 1 - w)) * rng.uniform(0.5, 2, N)
    res = best_of(Y, NmfConfig(lam=0.1, n_iters=20_000))
    a = [angular_difference(res.W[:, i], x) for i in (0, 1)]
    b = [angular_difference(res.W[:, i], y) for i in (0, 1)]
    assert min(max(a[0], b[1]), max(a[1], b[0])) < 1.0


def test_single_patch_extraction():
    bag, truth = generate_bag(SynthConfig(K=1, p=1.0, seed=6))
    best = None
    for s in range(5):
        res = minvol_nmf(bag.concat(), NmfConfig(lam=0.1, n_iters=20_000, seed=s))
        if best is None or res.objective < best[0].objective:
            best = (res, s)
    f = benchmark_extract(bag, NmfConfig(lam=0.1, n_iters=20_000, seed=best[1]))
    assert signature_error(f, truth.params.f) <= 1.0


def test_column_swap_inverts_extraction():
    rng = np.random.default_rng(7)
    W = rng.uniform(0.2, 1.0, (6, 2))
    Wd = np.maximum(W, 0.1)
    a = Wd[:, 0] / Wd[:, 1]
    b = Wd[:, 1] / Wd[:, 0]
    assert np.allclose(a, 1 / b, rtol=1e-15)
    f = rng.uniform(0.5, 1.5, 6)
    assert signature_error(a, f) == signature_error(b, f)


def test_extract_shapes_and_errors():
    bag, _ = generate_bag(SynthConfig(K=2, N=6, M=5, seed=8))
    f = benchmark_extract(bag, NmfConfig(n_iters=50))
    assert f.shape == (5,) and np.all(f > 0)
    with pytest.raises(DimensionError):
        minvol_nmf(np.ones((4, 1)))
