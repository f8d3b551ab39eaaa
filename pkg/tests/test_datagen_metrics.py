import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fgextract.datagen import SynthConfig, generate_bag, log_grid, snr_grid, snr_to_sigma2
from fgextract.errors import DomainError, InvalidInputError
from fgextract.metrics import (
    EvalRecord,
    angle_from_nmse,
    angular_difference,
    lower_median,
    median_by,
    nmse,
    signature_error,
)
from fgextract.model import (
    canonical_solution,
    is_fully_tight,
    patch_rank2_check,
    reconstruct,
    tightness_ratios,
)

pos = arrays(float, 6, elements=st.floats(0.01, 100.0))


# ---------------------------------------------------------------- generator

def test_config_validation():
    for bad in (dict(K=0), dict(N=1), dict(M=2), dict(r=-1), dict(p=1.5), dict(snr=0)):
        with pytest.raises(ValueError):
            SynthConfig(**bad)


def test_strict_full_tightness():
    bag, truth = generate_bag(SynthConfig(p=1.0, seed=0))
    assert is_fully_tight(truth.params.C, tol=0)
    r = tightness_ratios(truth.params.C)
    assert r.r_a == 0 and r.r_b == 0
    assert np.allclose(canonical_solution(truth.params.f, r), truth.params.f, rtol=0, atol=1e-12)
    # every patch holds both endpoint kinds
    for Ck in truth.params.C:
        assert np.any((Ck[1] == 0) & (Ck[0] > 0)) and np.any((Ck[0] == 0) & (Ck[1] > 0))


def test_noiseless_invariants():
    bag, truth = generate_bag(SynthConfig(seed=1))
    assert truth.sigma2 == 0.0
    assert truth.params.is_valid(strict=True)
    assert all(patch_rank2_check(Y, 1e-10) for Y in bag)
    clean = reconstruct(truth.params)
    assert all(np.array_equal(a, b) for a, b in zip(bag, clean))
    assert bag.K == 10 and bag.sizes == [25] * 10 and bag.M == 30


def test_partial_tightness_kinds():
    _, truth = generate_bag(SynthConfig(p=1.0, is_strict=False, seed=2, K=40))
    for kind, Ck in zip(truth.tight, truth.params.C):
        on_f = np.sum((Ck[1] == 0) & (Ck[0] > 0))
        on_1 = np.sum((Ck[0] == 0) & (Ck[1] > 0))
        assert (on_f, on_1) == ((1, 0) if kind == "f" else (0, 1))
    assert {"f", "one"} == set(truth.tight)


def test_untight_patches_have_interior_coefficients():
    _, truth = generate_bag(SynthConfig(p=0.0, seed=3))
    for Ck in truth.params.C:
        w = Ck[0] / Ck.sum(axis=0)
        assert np.all((w >= 0.05) & (w <= 0.95))


def test_noise_level_and_determinism():
    cfg = SynthConfig(snr=100.0, seed=4)
    bag, truth = generate_bag(cfg)
    clean = reconstruct(truth.params)
    assert truth.sigma2 == pytest.approx(snr_to_sigma2(clean, 100.0), rel=1e-15)
    noise = bag.concat() - clean.concat()
    assert np.var(noise) == pytest.approx(truth.sigma2, rel=0.1)
    again, _ = generate_bag(cfg)
    assert np.array_equal(again.concat(), bag.concat())


def test_noise_seed_keeps_clean_bag():
    a, ta = generate_bag(SynthConfig(snr=1e3, seed=5, noise_seed=1))
    b, tb = generate_bag(SynthConfig(snr=1e4, seed=5, noise_seed=2))
    assert np.array_equal(ta.params.f, tb.params.f)
    assert all(np.array_equal(x, y) for x, y in zip(ta.params.C, tb.params.C))


def test_shared_plus_individual_backgrounds():
    _, t0 = generate_bag(SynthConfig(r=0.0, seed=6))
    assert all(np.array_equal(t0.params.v[0], vk) for vk in t0.params.v)
    _, t1 = generate_bag(SynthConfig(r=0.2, seed=6))
    spread = np.ptp(np.vstack(t1.params.v), axis=0)
    assert np.all(spread <= 0.2 * 1.0 + 1e-12)


def test_snr_mapping():
    assert snr_to_sigma2([np.ones((3, 2))], math.inf) == 0.0
    assert snr_to_sigma2([np.full((3, 2), 2.0)], 100.0) == pytest.approx(0.04, rel=1e-15)
    rng = np.random.default_rng(7)
    Y = rng.uniform(size=(4, 5))
    assert snr_to_sigma2([2 * Y], 10.0) == pytest.approx(4 * snr_to_sigma2([Y], 10.0), rel=1e-14)
    with pytest.raises(DomainError):
        snr_to_sigma2([np.ones((3, 2))], 0.0)
    with pytest.raises(DomainError):
        snr_to_sigma2([], 1.0)


def test_grids():
    g = snr_grid()
    assert len(g) == 10 and g[0] == pytest.approx(1e2) and g[-1] == pytest.approx(1e6)
    assert np.allclose(np.diff(np.log10(g)), 4 / 9)
    lam = log_grid(1e-5, 1e-3, 7)
    assert len(lam) == 7 and np.allclose(np.diff(np.log10(lam)), 1 / 3)


# ---------------------------------------------------------------- metrics

def test_angle_examples():
    u = np.array([0.2, 1.0, 3.0])
    assert angular_difference(u, u) == 0.0
    assert angular_difference([1.0, 0.0], [0.0, 1.0]) == pytest.approx(90.0, abs=1e-13)
    assert nmse(u, u) == 0.0 and angle_from_nmse(0.0) == 0.0
    assert nmse([1.0, 0.0], [-1.0, 0.0]) == 4.0 and angle_from_nmse(4.0) == pytest.approx(180.0)
    assert angle_from_nmse(2.0) == pytest.approx(90.0, abs=1e-13)
    with pytest.raises(DomainError):
        angle_from_nmse(4.5)
    with pytest.raises(DomainError):
        angular_difference([0.0, 0.0], [1.0, 1.0])


def test_angle_matches_arccos_oracle():
    rng = np.random.default_rng(8)
    for _ in range(200):
        u, v = rng.normal(size=(2, 5))
        c = np.clip(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)), -1, 1)
        assert angular_difference(u, v) == pytest.approx(np.degrees(np.arccos(c)), abs=1e-9)


def test_angle_equals_nmse_route():
    rng = np.random.default_rng(9)
    u, v = rng.uniform(0.01, 1, (2, 1000, 8))
    worst = max(abs(angular_difference(a, b) - angle_from_nmse(nmse(a, b))) for a, b in zip(u, v))
    assert worst <= 1e-9


@given(pos, pos, st.floats(0.01, 100))
def test_angle_symmetric_and_scale_free(u, v, c):
    d = angular_difference(u, v)
    assert 0.0 <= d <= 180.0
    assert d == pytest.approx(angular_difference(v, u), abs=1e-12)
    assert d == pytest.approx(angular_difference(c * u, v), abs=1e-9)


@given(pos, pos, st.floats(0.01, 100))
def test_signature_error_invariances(f_est, f_true, c):
    e = signature_error(f_est, f_true)
    # the two branches are computed separately; scaling and inversion only permute them
    assert signature_error(1.0 / f_est, f_true) == pytest.approx(e, abs=1e-12)
    assert signature_error(c * f_est, f_true) == pytest.approx(e, abs=1e-9)


def test_signature_error_examples():
    f = np.array([0.7, 1.2, 0.9, 1.4])
    assert signature_error(3 * f, f) == pytest.approx(0.0, abs=1e-12)
    assert signature_error(1 / f, f) == pytest.approx(0.0, abs=1e-12)
    one = np.ones(3)
    est = np.array([2.0, 1.0, 1.0])
    direct = np.degrees(np.arccos(est @ one / (np.linalg.norm(est) * np.sqrt(3))))
    inv = np.degrees(np.arccos((1 / est) @ one / (np.linalg.norm(1 / est) * np.sqrt(3))))
    assert signature_error(est, one) == pytest.approx(min(direct, inv), abs=1e-12)
    with pytest.raises(DomainError):
        signature_error(np.array([1.0, 0.0, 1.0]), one)


def test_median_convention():
    assert lower_median([5.0]) == 5.0
    assert lower_median([1.0, 3.0, 100.0]) == 3.0
    assert lower_median([4.0, 1.0, 3.0, 2.0]) == 2.0
    with pytest.raises(InvalidInputError):
        lower_median([])


def test_median_by_groups_and_failures():
    recs = [EvalRecord("epfit", 0.0, 1e2, b, 0, x) for b, x in enumerate([1.0, 2.0, 3.0, 4.0])]
    recs += [EvalRecord("epfit", 0.0, 1e3, 0, 0, 7.0), EvalRecord("epfit", 0.0, 1e3, 1, 0, float("nan"))]
    rows = median_by(recs)
    assert [(r["snr"], r["median"], r["count"], r["failed"]) for r in rows] == [(1e2, 2.0, 4, 0), (1e3, 7.0, 1, 1)]


def test_record_range():
    with pytest.raises(InvalidInputError):
        EvalRecord("epfit", 0.0, 1.0, 0, 0, 181.0)
