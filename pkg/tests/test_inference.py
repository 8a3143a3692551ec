"""Sampling, quantile contours, inversion, ranks, credible regions."""

import os

import numpy as np
import pytest
from scipy.stats import chi2, kstest

from otpost import inference
from otpost.inference import (
    NonConvergence,
    bayes_pvalue,
    contour_from_csv,
    contour_radius,
    contour_to_csv,
    inverse,
    inverse_many,
    quantile_contour,
    rank,
    sample,
    sign_curves,
    simultaneous_ci,
)
from otpost.potential import AffineMap
from otpost.rng import stream
from tests.test_potential import random_map


def identity_map(p=2):
    return AffineMap(m=np.zeros(p), chol_factor=np.eye(p))


def shifted_map():
    return AffineMap(
        m=np.array([2.0, -1.0]),
        chol_factor=np.array([[1.5, 0.0], [0.3, 0.6]]),
    )


# ---------------------------------------------------------------------------
# contour radius and contours


def test_contour_radius_oracle_2d():
    # p=2: chi2 quantile is -2 log(1-q), so r(0.5) = sqrt(2 log 2)
    assert np.isclose(contour_radius(0.5, 2), np.sqrt(2.0 * np.log(2.0)))
    assert np.isclose(contour_radius(0.9, 2), np.sqrt(2.0 * np.log(10.0)))
    # scipy cross-check in 5 dimensions
    assert np.isclose(contour_radius(0.7, 5), np.sqrt(chi2.ppf(0.7, 5)))


def test_contour_radius_monotone_in_q():
    rs = [contour_radius(q, 3) for q in (0.1, 0.3, 0.5, 0.7, 0.9)]
    assert np.all(np.diff(rs) > 0)


def test_quantile_contour_on_identity_map_is_circle():
    c = quantile_contour(identity_map(), 0.5, 128, seed=0)
    radii = np.linalg.norm(c.points, axis=1)
    assert np.allclose(radii, contour_radius(0.5, 2), atol=1e-12)
    assert c.points.shape == (128, 2)


def test_quantile_contour_coverage_on_affine_map():
    # pushforward of N(0, I) through an affine map: the q-contour image
    # must contain exactly mass q of the pushforward
    amap = shifted_map()
    draws = sample(amap, 20000, seed=1).data
    for q in (0.2, 0.5, 0.9):
        c = quantile_contour(amap, q, 512, seed=0)
        from otpost.experiments import point_in_polygon

        frac = np.mean(point_in_polygon(draws, c.points))
        assert abs(frac - q) <= 0.02


def test_sign_curves_start_near_center():
    amap = shifted_map()
    curves = sign_curves(amap, 32)
    assert len(curves) == 4
    for c in curves:
        assert np.allclose(c[0], amap.m, atol=1e-6)


# ---------------------------------------------------------------------------
# inversion


def test_inverse_affine_is_exact():
    amap = shifted_map()
    z = np.array([1.0, 0.5])
    x = inverse(amap, z)
    assert np.max(np.abs(amap.apply(x) - z)) <= 1e-12


def test_inverse_round_trip_maxpot():
    mp = random_map(2, 2, 3, seed=50)
    rg = stream(51, 0)
    from otpost.potential import transport_hard

    for _ in range(10):
        x = rg.normal(0.0, 1.0, 2)
        z, _ = transport_hard(mp, x)
        x_back = inverse(mp, z, tol=1e-7, max_steps=5000)
        z_back, _ = transport_hard(mp, x_back)
        assert np.linalg.norm(z_back - z) <= 1e-6


def test_inverse_many_matches_single():
    mp = random_map(2, 1, 3, seed=52)
    from otpost.potential import transport_hard

    X = stream(53, 0).standard_normal((8, 2))
    Z = np.array([transport_hard(mp, x)[0] for x in X])
    Xb = inverse_many(mp, Z, tol=1e-7, max_steps=5000)
    for i in range(8):
        assert np.linalg.norm(Xb[i] - inverse(mp, Z[i], tol=1e-7, max_steps=5000)) <= 1e-6


def test_inverse_nonconvergence_raises():
    mp = random_map(2, 2, 3, seed=54)
    with pytest.raises(NonConvergence):
        inverse(mp, np.array([0.5, 0.5]), tol=1e-14, max_steps=1)


# ---------------------------------------------------------------------------
# ranks and p-values


def test_rank_on_identity_map_oracle():
    res = rank(identity_map(), np.array([1.0, 0.0]))
    assert np.isclose(res.radius, 1.0)
    assert np.isclose(res.rank_level, chi2.cdf(1.0, 2))
    assert np.allclose(res.preimage, [1.0, 0.0])


def test_rank_uniformity_kolmogorov_smirnov():
    # ranks of target draws through the exact map are Unif(0, 1)
    amap = shifted_map()
    draws = sample(amap, 400, seed=2).data
    levels = np.array([rank(amap, z).rank_level for z in draws])
    stat = kstest(levels, "uniform").statistic
    assert stat <= 0.05


def test_bayes_pvalue_oracle():
    # identity map: pvalue at radius-r point is chi2 survival at r^2
    p = bayes_pvalue(identity_map(), np.array([2.0, 0.0]))
    assert np.isclose(p, chi2.sf(4.0, 2))
    # far point: essentially zero
    assert bayes_pvalue(identity_map(), np.array([20.0, 0.0])) < 1e-15


def test_simultaneous_ci_identity_gaussian_oracle():
    # 95% simultaneous box from the 95% chi2 ball in 2-D has half-width
    # equal to the ball radius sqrt(chi2.ppf(0.95, 2)) = 2.4477...
    iv = simultaneous_ci(identity_map(2), 0.95, 40000, seed=3)
    r = np.sqrt(chi2.ppf(0.95, 2))
    for lo, hi in iv:
        assert abs(-lo - r) <= 0.02
        assert abs(hi - r) <= 0.02


def test_simultaneous_ci_affine_is_shifted_and_scaled():
    amap = AffineMap(m=np.array([5.0, 0.0]), chol_factor=np.eye(2))
    iv = simultaneous_ci(amap, 0.9, 20000, seed=4)
    mid0 = 0.5 * (iv[0][0] + iv[0][1])
    assert abs(mid0 - 5.0) <= 0.05


# ---------------------------------------------------------------------------
# sampling and CSV round-trips


def test_sample_deterministic_and_shaped():
    amap = shifted_map()
    s1 = sample(amap, 100, seed=9)
    s2 = sample(amap, 100, seed=9)
    assert np.array_equal(s1.data, s2.data)
    assert s1.columns == ["theta_0", "theta_1"]
    s3 = sample(amap, 100, seed=10)
    assert not np.array_equal(s1.data, s3.data)


def test_sample_mixed_map_layout():
    from otpost.mixed import random_semidiscrete_map

    mp = random_semidiscrete_map(K=3, p=2, M=2, seed=55)
    s = sample(mp, 50, seed=11)
    assert s.columns == ["tau_0", "zeta_0", "zeta_1"]
    taus = s.data[:, 0]
    assert np.array_equal(taus, taus.astype(int))
    assert set(taus.astype(int)) <= {0, 1, 2}


def test_contour_csv_round_trip(tmp_path):
    c = quantile_contour(shifted_map(), 0.5, 64, seed=0)
    path = os.path.join(tmp_path, "c.csv")
    contour_to_csv(c, path)
    c2 = contour_from_csv(path)
    assert c2.q == c.q
    assert np.allclose(c2.points, c.points)
    assert np.isclose(c2.radius, c.radius)
