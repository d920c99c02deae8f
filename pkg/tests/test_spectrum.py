import json
import math

import numpy as np
import pytest
from scipy import stats

from olslab.errors import CapacityError, ValidationError
from olslab.gramians import gramian_sum, inv_sqrt_psd
from olslab.lti import NoiseFamily, SystemSpec, simulate, simulate_from_noise, spectral_radius
from olslab.spectrum import (
    IsometryReport,
    build_net,
    chaos_statistic,
    covering_radius,
    hw_tail_estimate,
    isometry_defect,
    net_cardinality_cap,
    net_opnorm_bound,
)


def orthonormal(rng, t, d):
    Q, _ = np.linalg.qr(rng.normal(size=(t, d)))
    return Q


def unit_sphere(rng, n, d):
    P = rng.normal(size=(n, d))
    return P / np.linalg.norm(P, axis=1, keepdims=True)


# isometry defect

def test_isometry_exact():
    X = orthonormal(np.random.default_rng(0), 10, 3)
    rep = isometry_defect(X, np.eye(3))
    assert rep.defect <= 1e-14
    np.testing.assert_allclose(rep.singulars, 1.0, atol=1e-14)
    assert rep.containment


def test_isometry_scaling_cancels():
    X = 2 * orthonormal(np.random.default_rng(1), 8, 2)
    rep = isometry_defect(X, np.eye(2) / 2)
    assert rep.defect <= 1e-14
    np.testing.assert_allclose(rep.singulars, 2.0, atol=1e-14)


def test_isometry_self_whitening():
    rng = np.random.default_rng(2)
    for _ in range(20):
        d = int(rng.integers(1, 6))
        X = rng.normal(size=(int(rng.integers(d, 40)), d))
        assert isometry_defect(X, inv_sqrt_psd(X.T @ X)).defect <= 1e-10


def test_isometry_dimension_mismatch():
    with pytest.raises(ValidationError):
        isometry_defect(np.ones((5, 2)), np.eye(3))


def test_sandwich_never_fails_when_defect_condition_holds():
    rng = np.random.default_rng(3)
    counterexamples = 0
    for _ in range(500):
        d = int(rng.integers(1, 6))
        t = int(rng.integers(d, 30))
        X = rng.normal(size=(t, d)) * rng.uniform(0.1, 3.0)
        B = rng.normal(size=(d, d))
        M = inv_sqrt_psd(B @ B.T + rng.uniform(0.1, 5.0) * np.eye(d))
        rep = isometry_defect(X, M)
        eps = rep.epsilon_implied
        assert rep.defect <= max(eps, eps**2) * (1 + 1e-12)
        counterexamples += not rep.containment
    assert counterexamples == 0


def test_isometry_report_roundtrip():
    rep = isometry_defect(np.random.default_rng(4).normal(size=(20, 2)), np.eye(2) / 4, epsilon=0.3)
    assert IsometryReport.from_dict(json.loads(json.dumps(rep.to_dict()))) == rep


# nets

def test_net_dimension_one():
    net = build_net(1, 0.5)
    assert sorted(net.points.ravel()) == [-1.0, 1.0]


def test_hexagon_covers_circle():
    angles = np.arange(6) * math.pi / 3
    hexagon = np.c_[np.cos(angles), np.sin(angles)]
    theta = np.linspace(0, 2 * math.pi, 200_001)
    radius = covering_radius(hexagon, np.c_[np.cos(theta), np.sin(theta)])
    assert radius == pytest.approx(2 * math.sin(math.radians(15)), abs=1e-9)
    assert radius <= 1.0


def test_net_eps_one_flagged():
    net = build_net(2, 1.0, seed=1)
    assert "eps>=1" in net.flags
    assert net.cardinality <= net_cardinality_cap(2, 1.0)


@pytest.mark.parametrize("d,eps", [(2, 0.25), (3, 0.5), (4, 0.75)])
def test_net_covers_and_respects_cap(d, eps):
    net = build_net(d, eps, seed=d)
    assert net.cardinality <= net.cardinality_cap
    probes = unit_sphere(np.random.default_rng(100 + d), 100_000, d)
    assert covering_radius(net.points, probes) <= eps
    np.testing.assert_allclose(np.linalg.norm(net.points, axis=1), 1.0, atol=1e-12)


def test_net_capacity():
    with pytest.raises(CapacityError):
        build_net(9, 0.5)


def test_net_bound_identity():
    for eps in (0.1, 0.25, 0.4):
        net = build_net(3, eps, seed=0)
        b = net_opnorm_bound(np.eye(3), net, symmetric=True)
        assert 1.0 <= b <= 1.0 / (1 - 2 * eps) + 1e-12


def test_net_bound_diagonal():
    net = build_net(2, 0.25, seed=0)
    assert 3.0 <= net_opnorm_bound(np.diag([3.0, 1.0]), net) <= 4.0
    assert 3.0 <= net_opnorm_bound(np.diag([3.0, 1.0]), net, symmetric=True) <= 6.0


def test_net_bound_random_symmetric():
    rng = np.random.default_rng(5)
    nets = {d: build_net(d, 0.3, seed=d) for d in (2, 3, 4)}
    for _ in range(50):
        d = int(rng.integers(2, 5))
        B = rng.normal(size=(d, d))
        W = B + B.T
        true = max(abs(np.linalg.eigvalsh(W)))
        assert true <= net_opnorm_bound(W, nets[d], symmetric=True) * (1 + 1e-12)
        assert true <= net_opnorm_bound(W, nets[d]) * (1 + 1e-12)


def test_net_bound_symmetric_needs_small_eps():
    with pytest.raises(ValidationError):
        net_opnorm_bound(np.eye(2), build_net(2, 0.5, seed=0), symmetric=True)


# chaos

def test_chaos_scalar_hand_value():
    a = 0.5
    traj = simulate_from_noise(SystemSpec([[a]]), [0.8, -1.1, 0.3])
    x1, x2 = 0.8, a * 0.8 - 1.1
    G = 1 + (1 + a**2)
    M = gramian_sum([[a]], 2).whitener
    assert M[0, 0] == pytest.approx(1 / math.sqrt(G), rel=1e-15)
    res = chaos_statistic(traj, [[a]], M, [1.0])
    assert res.direct == pytest.approx(abs((x1**2 + x2**2) / G - 1), rel=1e-13)
    assert res.via_toeplitz == pytest.approx(res.direct, abs=1e-12)


def test_chaos_paths_agree_and_frobenius_is_one():
    rng = np.random.default_rng(6)
    for k in range(20):
        d = int(rng.integers(1, 4))
        A = rng.normal(size=(d, d))
        A *= rng.uniform(0, 0.9) / max(spectral_radius(A), 1e-12)
        t = int(rng.integers(2, 60))
        traj = simulate(SystemSpec(A, NoiseFamily("uniform")), t, k)
        M = gramian_sum(A, t).whitener
        u = rng.normal(size=d)
        res = chaos_statistic(traj, A, M, u / np.linalg.norm(u))
        assert res.toeplitz_computed
        assert res.frobenius_sq == pytest.approx(1.0, abs=1e-10)
        assert abs(res.direct - res.via_toeplitz) <= 1e-9


def test_chaos_zero_dynamics_large_t():
    traj = simulate(SystemSpec(np.zeros((1, 1))), 500, 0)
    res = chaos_statistic(traj, [[0.0]], [[1 / math.sqrt(500)]], [1.0])
    assert res.via_toeplitz == pytest.approx(res.direct, abs=1e-9)
    assert res.direct < 0.5


def test_chaos_cap_fallback():
    traj = simulate(SystemSpec([[0.5]]), 50, 0)
    res = chaos_statistic(traj, [[0.5]], gramian_sum([[0.5]], 50).whitener, [1.0], cap=10)
    assert not res.toeplitz_computed and res.via_toeplitz is None


def test_chaos_rejects_wrong_whitener():
    traj = simulate(SystemSpec([[0.5]]), 5, 0)
    with pytest.raises(ValidationError):
        chaos_statistic(traj, [[0.5]], [[1.0]], [1.0])


# quadratic-form tails

def test_hw_rademacher_identity_is_exact():
    res = hw_tail_estimate(np.eye(10), NoiseFamily("rademacher"), [1e-6, 0.1, 0.5, 2.0], 20_000, 0)
    np.testing.assert_array_equal(res.empirical, 0.0)


def test_hw_gaussian_matches_chi_square():
    res = hw_tail_estimate(np.eye(10), NoiseFamily("gaussian"), 0.5, 100_000, 7)
    exact = stats.chi2.cdf(5, 10) + stats.chi2.sf(15, 10)
    se = math.sqrt(exact * (1 - exact) / 100_000)
    assert abs(res.empirical[0] - exact) <= 3 * se


def test_hw_tail_monotone_and_bounded():
    B = np.random.default_rng(8).normal(size=(6, 4))
    eps = np.linspace(0.05, 3.0, 30)
    res = hw_tail_estimate(B, NoiseFamily("uniform"), eps, 20_000, 1)
    assert np.all(np.diff(res.empirical) <= 0)
    assert np.all((res.empirical >= 0) & (res.empirical <= 1))
    assert res.frobenius_sq == pytest.approx(np.sum(B**2))
    assert np.all(np.diff(res.bound) <= 1e-15)


def test_hw_validation():
    with pytest.raises(ValidationError):
        hw_tail_estimate(np.eye(2), NoiseFamily("gaussian"), 0.0, 10, 0)
