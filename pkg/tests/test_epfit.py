import numpy as np
import pytest

from fgextract.datagen import SynthConfig, generate_bag
from fgextract.epfit import (
    EPFitConfig,
    endpoint_pair_solution,
    endpoint_prune,
    epfit,
    epfit_detailed,
    normalized_concat,
)
from fgextract.errors import DegenerateError, InvalidInputError
from fgextract.metrics import angular_difference, signature_error
from fgextract.minvolfit import MinVolConfig
from fgextract.model import PatchSet, canonical_solution, tightness_ratios
from fgextract.numerics import min_cosine_pair_exact, min_cosine_pair_greedy

FAST = EPFitConfig(inner=MinVolConfig(n_iters=20_000))
# stop on a relative-residual target instead of a fixed sweep count
TIGHT = MinVolConfig(n_iters=200_000, objective_rtol=1e-20)
REFINED = EPFitConfig(inner=MinVolConfig(n_iters=20_000), refine=True)


def test_config_forces_unregularized_inner_fit():
    assert EPFitConfig(inner=MinVolConfig(lam=0.3)).inner.lam == 0.0
    with pytest.raises(ValueError):
        EPFitConfig(removal_count=-1)
    with pytest.raises(ValueError):
        EPFitConfig(pair_search="random")
    with pytest.raises(ValueError):
        EPFitConfig(ratio_floor=0)


# ---------------------------------------------------------------- normalization

def test_normalized_concat_examples():
    rng = np.random.default_rng(0)
    bag = PatchSet([rng.uniform(size=(4, 3)), rng.uniform(size=(4, 2))])
    nb = normalized_concat(bag, [np.ones(4), np.ones(4)])
    assert np.array_equal(nb.data, bag.concat())
    assert list(nb.patch) == [0, 0, 0, 1, 1] and list(nb.column) == [0, 1, 2, 0, 1]
    one = PatchSet([bag[0]])
    assert np.array_equal(normalized_concat(one, [np.full(4, 2.0)]).data, bag[0] / 2)


def test_normalized_concat_floors_and_counts():
    bag = PatchSet([np.ones((3, 2))])
    nb = normalized_concat(bag, [np.array([1.0, 0.0, 1e-12])], ratio_floor=1e-9)
    assert nb.floor_events == 2
    assert np.all(np.isfinite(nb.data))


def test_true_backgrounds_give_rank2_cone():
    bag, truth = generate_bag(SynthConfig(seed=1))
    nb = normalized_concat(bag, truth.params.v)
    F = np.column_stack([truth.params.f, np.ones(bag.M)])
    coef, *_ = np.linalg.lstsq(F, nb.data, rcond=None)
    assert np.linalg.norm(nb.data - F @ coef) <= 1e-10 * np.linalg.norm(nb.data)


# ---------------------------------------------------------------- pruning

def _cone_with_outliers(rng, M=8, N=30):
    f = rng.uniform(0.5, 1.5, M)
    one = np.ones(M)
    w = rng.uniform(0.1, 0.9, N)
    X = np.outer(f, w) + np.outer(one, 1 - w)
    # beyond the extremes: slightly outside the cone on each side
    out_f = 1.3 * f - 0.3 * one
    out_1 = 1.3 * one - 0.3 * f
    X = np.column_stack([X[:, :10], out_f, X[:, 10:20], out_1, X[:, 20:]])
    return X, (10, 21)


def test_prune_identity_and_outliers():
    rng = np.random.default_rng(2)
    X, bad = _cone_with_outliers(rng)
    assert np.array_equal(endpoint_prune(X, 0), X)
    kept, idx = endpoint_prune(X, 2, return_index=True)
    assert kept.shape[1] == X.shape[1] - 4
    assert not set(bad) & set(idx.tolist())


def test_prune_too_few_columns():
    with pytest.raises(InvalidInputError):
        endpoint_prune(np.random.default_rng(3).uniform(size=(4, 6)), 2)
    endpoint_prune(np.random.default_rng(3).uniform(size=(4, 9)), 2)


# ---------------------------------------------------------------- pair solution

def test_pair_solution_hand_built():
    f = np.array([2.0, 1.0, 0.5])
    Y = np.column_stack([f, np.ones(3), 0.5 * f + 0.5])
    out = endpoint_pair_solution(Y)
    assert min(angular_difference(out, f), angular_difference(1 / out, f)) < 1e-12


def test_pair_solution_orthogonal_and_duplicates():
    Y = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    assert np.array_equal(endpoint_pair_solution(Y), np.maximum(Y[:, 0] / np.maximum(Y[:, 1], 1e-9), 1e-9))
    f = np.array([2.0, 1.0, 0.5, 1.4])
    base = np.column_stack([f, np.ones(4), 0.3 * f + 0.7])
    dup = np.column_stack([base, f, np.ones(4)])
    a, b = endpoint_pair_solution(base), endpoint_pair_solution(dup)
    assert angular_difference(a, b) < 1e-12


def test_pair_solution_degenerate():
    with pytest.raises(DegenerateError):
        endpoint_pair_solution(np.ones((4, 3)))


# ---------------------------------------------------------------- full pipeline

@pytest.fixture(scope="module")
def strict_fit():
    bag, truth = generate_bag(SynthConfig(p=1.0, seed=4))
    return bag, truth, epfit_detailed(bag, EPFitConfig(inner=TIGHT))


def test_strict_noiseless_recovery(strict_fit):
    _, truth, res = strict_fit
    assert signature_error(res.f, truth.params.f) <= 1e-4
    assert np.all(res.f > 0)


def test_endpoint_certificate(strict_fit):
    bag, _, res = strict_fit
    X = res.normalized.data
    # the extracted ratio may come out inverted; use the orientation that spans the data
    fits = []
    for g in (res.f, 1 / res.f):
        F = np.column_stack([g, np.ones(bag.M)])
        coef, *_ = np.linalg.lstsq(F, X, rcond=None)
        fits.append((np.linalg.norm(X - F @ coef), coef))
    err, coef = min(fits, key=lambda t: t[0])
    assert err <= 1e-8 * np.linalg.norm(X)
    coef = coef / np.abs(coef).max(axis=0)
    assert np.any((np.abs(coef[1]) <= 1e-6) & (coef[0] > 0))
    assert np.any((np.abs(coef[0]) <= 1e-6) & (coef[1] > 0))


def test_inverse_duality(strict_fit):
    _, _, res = strict_fit
    i, j = res.pair
    Y = res.normalized.data
    assert np.allclose(Y[:, i] / Y[:, j], 1 / (Y[:, j] / Y[:, i]), rtol=1e-15)


def test_exact_cosine_bounds_greedy(strict_fit):
    _, _, res = strict_fit
    Y = res.normalized.data
    U = Y / np.linalg.norm(Y, axis=0)
    G = U.T @ U
    assert G[min_cosine_pair_exact(Y)] <= G[min_cosine_pair_greedy(Y)]


def test_partial_tightness_matches_canonical():
    bag, truth = generate_bag(SynthConfig(p=1.0, is_strict=False, seed=5))
    f0 = canonical_solution(truth.params.f, tightness_ratios(truth.params.C))
    f = epfit(bag, REFINED)
    assert min(angular_difference(f, f0), angular_difference(1 / f, f0)) <= 1e-6


def test_pixel_scale_invariance():
    bag, _ = generate_bag(SynthConfig(K=4, N=12, p=1.0, seed=6))
    rng = np.random.default_rng(6)
    scaled = PatchSet([Y * rng.uniform(0.3, 3.0, Y.shape[1]) for Y in bag])
    a, b = epfit(bag, REFINED), epfit(scaled, REFINED)
    # scale is irrelevant; compare directions up to inversion
    assert min(angular_difference(a, b), angular_difference(a, 1 / b)) <= 1e-6


def test_shared_inner_fit():
    bag, truth = generate_bag(SynthConfig(K=4, N=12, snr=1e4, seed=7))
    base = epfit_detailed(bag, FAST)
    again = epfit_detailed(bag, EPFitConfig(inner=FAST.inner, removal_count=1), inner=base.inner)
    assert again.inner is base.inner
    assert np.all(again.f > 0)


def test_greedy_mode_runs():
    bag, truth = generate_bag(SynthConfig(K=4, N=12, p=1.0, seed=8))
    f = epfit(bag, EPFitConfig(inner=MinVolConfig(n_iters=20_000), pair_search="greedy"))
    assert np.all(f > 0) and f.shape == (bag.M,)


def test_refined_inner_fit_is_exact():
    bag, truth = generate_bag(SynthConfig(K=4, N=12, p=1.0, is_strict=False, seed=9))
    res = epfit_detailed(bag, EPFitConfig(inner=MinVolConfig(n_iters=5_000), refine=True))
    assert res.inner.final_residual <= 1e-24 * bag.frobenius_sq()
    f0 = canonical_solution(truth.params.f, tightness_ratios(truth.params.C))
    assert min(angular_difference(res.f, f0), angular_difference(1 / res.f, f0)) <= 1e-9
