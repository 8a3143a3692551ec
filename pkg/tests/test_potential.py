"""Convex units, local potentials, max-potential maps, affine maps."""

import json

import numpy as np
import pytest

from otpost.potential import (
    Activation,
    AffineMap,
    ConvexUnit,
    LocalPotential,
    MaxPotentialMap,
    activation_antiderivative,
    activation_deriv,
    activation_second_deriv,
    activation_value,
    local_grad,
    local_hessian,
    local_value,
    map_from_json,
    map_to_json,
    objective_sample,
    param_grad,
    smooth_batch,
    transport_hard,
    transport_smooth,
)
from otpost.rng import stream
from otpost.target import std_normal


def random_unit(p, seed, activation=Activation.TANH):
    rg = stream(seed, 90)
    return ConvexUnit(
        alpha=rg.normal(0.0, 0.7, p),
        beta=rg.normal(0.0, 0.7, p),
        w=float(rg.normal()),
        v=float(rg.normal()),
        activation=activation,
    )


def random_local(p, M, seed, activation=Activation.TANH):
    return LocalPotential(
        units=tuple(random_unit(p, seed + 7 * m, activation) for m in range(M))
    )


def random_map(p, L, M, seed, gamma=10.0, activation=Activation.TANH):
    return MaxPotentialMap(
        locals=tuple(random_local(p, M, seed + 101 * k, activation) for k in range(L)),
        gamma_sharp=gamma,
    )


# ---------------------------------------------------------------------------
# activations


def test_activation_values_at_zero():
    for act in Activation:
        assert activation_value(act, 0.0) == 0.0
        assert activation_antiderivative(act, 0.0) == 0.0


def test_activation_oracles():
    # tanh(0.5) and softsign(0.5) = 0.5/1.5, sqnl in closed form
    assert np.isclose(activation_value(Activation.TANH, 0.5), 0.46211715726000974)
    assert np.isclose(activation_value(Activation.SOFTSIGN, 0.5), 1.0 / 3.0)
    assert np.isclose(activation_value(Activation.SQNL, 0.5), 0.5 - 0.25 / 4.0)
    assert activation_value(Activation.SQNL, 5.0) == 1.0
    assert activation_value(Activation.SQNL, -5.0) == -1.0


@pytest.mark.parametrize("act", list(Activation))
def test_activation_derivative_chain(act):
    h = 1e-6
    # avoid u = 0 where softsign/sqnl second derivatives jump
    u = np.linspace(-1.8, 1.8, 41) + 0.013
    fd_phi = (activation_antiderivative(act, u + h) - activation_antiderivative(act, u - h)) / (2 * h)
    assert np.allclose(fd_phi, activation_value(act, u), atol=1e-8)
    fd_dphi = (activation_value(act, u + h) - activation_value(act, u - h)) / (2 * h)
    assert np.allclose(fd_dphi, activation_deriv(act, u), atol=1e-6)
    fd_ddphi = (activation_deriv(act, u + h) - activation_deriv(act, u - h)) / (2 * h)
    assert np.allclose(fd_ddphi, activation_second_deriv(act, u), atol=1e-5)


@pytest.mark.parametrize("act", list(Activation))
def test_activation_monotone_increasing(act):
    u = np.linspace(-3, 3, 201)
    assert np.all(np.diff(activation_value(act, u)) >= 0)


# ---------------------------------------------------------------------------
# local potential derivatives


@pytest.mark.parametrize("act", list(Activation))
def test_local_grad_matches_finite_difference(act):
    p, M = 3, 4
    pot = random_local(p, M, seed=5, activation=act)
    rg = stream(11, 0)
    h = 1e-6
    for _ in range(10):
        x = rg.normal(0.0, 1.0, p)
        g = local_grad(pot, x)
        fd = np.empty(p)
        for j in range(p):
            e = np.zeros(p)
            e[j] = h
            fd[j] = (local_value(pot, x + e) - local_value(pot, x - e)) / (2 * h)
        assert np.max(np.abs(fd - g) / (1.0 + np.abs(g))) <= 1e-5


def test_local_hessian_matches_finite_difference():
    p, M = 3, 4
    pot = random_local(p, M, seed=6)
    rg = stream(12, 0)
    h = 1e-5
    for _ in range(5):
        x = rg.normal(0.0, 1.0, p)
        H = local_hessian(pot, x)
        fd = np.empty((p, p))
        for j in range(p):
            e = np.zeros(p)
            e[j] = h
            fd[:, j] = (local_grad(pot, x + e) - local_grad(pot, x - e)) / (2 * h)
        assert np.max(np.abs(fd - H)) <= 1e-4
        # symmetric positive semidefinite
        assert np.allclose(H, H.T)
        assert np.min(np.linalg.eigvalsh(H)) >= -1e-10


def test_local_potential_is_convex():
    p, M = 4, 3
    pot = random_local(p, M, seed=7)
    rg = stream(13, 0)
    X = rg.normal(0.0, 2.0, (1000, p))
    Y = rg.normal(0.0, 2.0, (1000, p))
    lam = rg.random(1000)
    mid = lam[:, None] * X + (1 - lam[:, None]) * Y
    ux = np.array([local_value(pot, x) for x in X])
    uy = np.array([local_value(pot, y) for y in Y])
    um = np.array([local_value(pot, m) for m in mid])
    assert np.all(um <= lam * ux + (1 - lam) * uy + 1e-9)


# ---------------------------------------------------------------------------
# max-potential transport


def test_transport_hard_picks_argmax_local():
    mp = random_map(2, 3, 2, seed=21)
    rg = stream(14, 0)
    for _ in range(20):
        x = rg.normal(0.0, 1.5, 2)
        value, k = transport_hard(mp, x)
        vals = [local_value(lp, x) for lp in mp.locals]
        assert k == int(np.argmax(vals))
        assert np.allclose(value, local_grad(mp.locals[k], x))


def test_transport_smooth_approaches_hard_for_large_gamma():
    mp = random_map(2, 2, 3, seed=22, gamma=200.0)
    rg = stream(15, 0)
    for _ in range(10):
        x = rg.normal(0.0, 1.5, 2)
        hard, _ = transport_hard(mp, x)
        smooth, _, _ = transport_smooth(mp, x)
        assert np.max(np.abs(hard - smooth)) <= 1e-2


def test_two_point_monotonicity_hard_and_smooth():
    mp = random_map(3, 2, 3, seed=23)
    rg = stream(16, 0)
    X = rg.normal(0.0, 2.0, (1000, 3))
    Y = rg.normal(0.0, 2.0, (1000, 3))
    tx_h = np.array([transport_hard(mp, x)[0] for x in X])
    ty_h = np.array([transport_hard(mp, y)[0] for y in Y])
    assert np.all(np.sum((tx_h - ty_h) * (X - Y), axis=1) >= -1e-9)
    tx_s = smooth_batch(mp, X)[0]
    ty_s = smooth_batch(mp, Y)[0]
    assert np.all(np.sum((tx_s - ty_s) * (X - Y), axis=1) >= -1e-9)


def test_single_local_smooth_jacobian_matches_finite_difference():
    # with L=1 the smooth Jacobian is the exact derivative of the transport
    mp = random_map(3, 1, 4, seed=24)
    rg = stream(17, 0)
    h = 1e-5
    for _ in range(5):
        x = rg.normal(0.0, 1.0, 3)
        _, J, _ = transport_smooth(mp, x)
        fd = np.empty((3, 3))
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            fd[:, j] = (transport_smooth(mp, x + e)[0] - transport_smooth(mp, x - e)[0]) / (2 * h)
        assert np.max(np.abs(fd - J)) <= 1e-4


def test_param_grad_matches_finite_difference():
    mp = random_map(2, 2, 2, seed=25)
    tgt = std_normal(2)
    X = stream(18, 0).standard_normal((16, 2))

    def mean_obj(theta):
        m = mp.with_flat_params(theta)
        return np.mean([objective_sample(m, tgt, x) for x in X])

    theta0 = mp.flat_params()
    g = param_grad(mp, tgt, X)
    h = 1e-6
    rg = stream(19, 0)
    idx = rg.choice(theta0.size, size=12, replace=False)
    for j in idx:
        e = np.zeros_like(theta0)
        e[j] = h
        fd = (mean_obj(theta0 + e) - mean_obj(theta0 - e)) / (2 * h)
        assert abs(fd - g[j]) / (1.0 + abs(g[j])) <= 1e-5


def test_flat_params_round_trip():
    mp = random_map(3, 2, 2, seed=26)
    theta = mp.flat_params()
    mp2 = mp.with_flat_params(theta)
    assert np.array_equal(theta, mp2.flat_params())
    x = np.array([0.3, -0.4, 1.1])
    assert np.allclose(transport_hard(mp, x)[0], transport_hard(mp2, x)[0])


# ---------------------------------------------------------------------------
# serialization


def test_map_json_round_trip_bit_faithful():
    mp = random_map(2, 2, 3, seed=27)
    text = map_to_json(mp)
    mp2 = map_from_json(text)
    assert np.array_equal(mp.flat_params(), mp2.flat_params())
    assert mp2.gamma_sharp == mp.gamma_sharp
    assert map_to_json(mp2) == text


def test_map_json_rejects_unknown_version():
    mp = random_map(2, 1, 1, seed=28)
    doc = json.loads(map_to_json(mp))
    doc["version"] = 999
    with pytest.raises(ValueError):
        map_from_json(json.dumps(doc))


def test_affine_json_round_trip():
    amap = AffineMap(
        m=np.array([0.3, -1.2]),
        chol_factor=np.array([[1.5, 0.0], [0.4, 0.8]]),
        n_scale=4,
    )
    amap2 = map_from_json(map_to_json(amap))
    assert np.array_equal(amap.m, amap2.m)
    assert np.array_equal(amap.chol_factor, amap2.chol_factor)
    assert amap2.n_scale == 4


# ---------------------------------------------------------------------------
# affine map


def test_affine_apply_invert_round_trip():
    amap = AffineMap(
        m=np.array([1.0, -2.0, 0.5]),
        chol_factor=np.array([[2.0, 0.0, 0.0], [0.3, 1.1, 0.0], [-0.2, 0.5, 0.7]]),
        n_scale=9,
    )
    X = stream(20, 0).standard_normal((50, 3))
    Z = amap.apply(X)
    assert np.max(np.abs(amap.invert(Z) - X)) <= 1e-10


def test_affine_logdet_oracle():
    C = np.array([[2.0, 0.0], [1.0, 0.5]])
    amap = AffineMap(m=np.zeros(2), chol_factor=C, n_scale=4)
    # log det(C / sqrt(4)) = log(2 * 0.5) - 2 log 2 = -2 log 2
    assert np.isclose(amap.logdet(), -2.0 * np.log(2.0))


def test_affine_validation_errors():
    with pytest.raises(ValueError):
        AffineMap(m=np.zeros(2), chol_factor=np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        AffineMap(m=np.zeros(2), chol_factor=np.array([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(ValueError):
        MaxPotentialMap(locals=(), gamma_sharp=10.0)
