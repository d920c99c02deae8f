import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from olslab.errors import ValidationError
from olslab.estimator import (
    OlsEstimate,
    SelfNormStat,
    error_identity_check,
    estimation_error,
    ols,
    pinv_symmetric,
    self_normalized_stat,
)
from olslab.gramians import gramian_sum
from olslab.lti import NoiseFamily, SystemSpec, Trajectory, simulate, simulate_from_noise, spectral_radius


def stable(rng, d):
    A = rng.normal(size=(d, d))
    return A * (rng.uniform(0, 0.95) / max(spectral_radius(A), 1e-12))


def normal_equations(X, Y):
    # min sum ||y_s - A x_s||^2  <=>  (X^T X) A^T = X^T Y
    return np.linalg.solve(X.T @ X, X.T @ Y).T


def test_noiseless_continuation_recovers_a():
    traj = simulate_from_noise(SystemSpec([[0.7]]), [1.0, 0.0, 0.0])
    est = ols(traj)
    assert est.A_hat[0, 0] == pytest.approx(1.043 / 1.49, abs=1e-15)
    assert est.A_hat[0, 0] == pytest.approx(0.7, abs=1e-15)
    assert not est.degenerate


def test_zero_noise_is_degenerate():
    traj = simulate_from_noise(SystemSpec([[0.5, 0.1], [0.0, 0.3]]), np.zeros((6, 2)))
    est = ols(traj, [[0.5, 0.1], [0.0, 0.3]])
    np.testing.assert_array_equal(est.A_hat, 0)
    assert est.gram_rank == 0 and est.degenerate
    assert est.error_opnorm == pytest.approx(np.linalg.norm([[0.5, 0.1], [0.0, 0.3]], 2))
    assert error_identity_check(traj, [[0.5, 0.1], [0.0, 0.3]]) == 0.0


def test_rank_deficient_uses_pseudo_inverse():
    # states confined to the first axis
    A = np.array([[0.5, 0.0], [0.0, 0.2]])
    noise = np.zeros((5, 2))
    noise[:, 0] = [1.0, -0.3, 0.2, 0.4, 0.0]
    traj = simulate_from_noise(SystemSpec(A), noise)
    est = ols(traj)
    assert est.gram_rank == 1
    assert est.A_hat[1, 1] == 0.0 and est.A_hat[0, 1] == 0.0
    np.testing.assert_allclose(est.A_hat, traj.Y.T @ traj.X @ np.linalg.pinv(traj.X.T @ traj.X), atol=1e-14)
    assert error_identity_check(traj, A) <= 1e-12


def test_matches_normal_equations_oracle():
    rng = np.random.default_rng(0)
    spec = SystemSpec(stable(rng, 3))
    traj = simulate(spec, 50, 9)
    est = ols(traj)
    ref = normal_equations(traj.X, traj.Y)
    assert np.linalg.norm(est.A_hat - ref, 2) <= 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_invariant_under_pair_reordering(seed, d):
    rng = np.random.default_rng(seed)
    traj = simulate(SystemSpec(stable(rng, d)), 40, seed)
    perm = rng.permutation(traj.t)
    X, Y = traj.X[perm], traj.Y[perm]
    shuffled = Y.T @ X @ pinv_symmetric(X.T @ X)[0]
    np.testing.assert_allclose(ols(traj).A_hat, shuffled, atol=1e-10)


def test_error_identity_random_seeds():
    rng = np.random.default_rng(1)
    spec = SystemSpec(stable(rng, 2))
    for seed in range(20):
        assert error_identity_check(simulate(spec, 200, seed), spec.A) <= 1e-9


def test_error_identity_needs_noise_record():
    traj = simulate(SystemSpec([[0.5]]), 10, 0)
    bare = Trajectory(traj.states, None, traj.seed, traj.spec_hash)
    with pytest.raises(ValidationError, match="noise record"):
        error_identity_check(bare, [[0.5]])


def test_estimation_error_examples():
    A = np.array([[0.2, 0.1], [0.0, 0.4]])
    assert estimation_error(A, A) == 0.0
    assert estimation_error(A + np.diag([0.3, -0.1]), A) == pytest.approx(0.3, abs=1e-15)
    with pytest.raises(ValidationError):
        estimation_error(np.eye(2), np.eye(3))


def test_estimation_error_eigen_oracle():
    rng = np.random.default_rng(2)
    for _ in range(50):
        d = int(rng.integers(1, 6))
        D = rng.normal(size=(d, d))
        oracle = math.sqrt(max(np.linalg.eigvalsh(D.T @ D)))
        assert estimation_error(D, np.zeros((d, d))) == pytest.approx(oracle, abs=1e-10)


def test_ols_estimate_roundtrip():
    est = ols(simulate(SystemSpec([[0.5, 0.1], [0.0, 0.3]]), 30, 4), [[0.5, 0.1], [0.0, 0.3]])
    back = OlsEstimate.from_dict(json.loads(json.dumps(est.to_dict())))
    assert back.to_dict() == est.to_dict()


# self-normalized statistic

def test_selfnorm_zero_noise_record():
    traj = simulate_from_noise(SystemSpec([[0.5]]), [1.0, 0.0, 0.0, 0.0])
    sn = self_normalized_stat(traj, [[1.0]], 0.1, 1.0)
    assert sn.value == 0.0


def test_selfnorm_scalar_hand_value():
    eta = [0.4, -1.2, 0.5, 0.9]
    traj = simulate_from_noise(SystemSpec([[0.6]]), eta)
    x1 = 0.4
    x2 = 0.6 * x1 - 1.2
    x3 = 0.6 * x2 + 0.5
    S = 2.5
    num = eta[1] * x1 + eta[2] * x2 + eta[3] * x3
    den = x1**2 + x2**2 + x3**2 + S
    sn = self_normalized_stat(traj, [[S]], 0.1, 1.5, c=0.7)
    assert sn.value == pytest.approx(abs(num) / math.sqrt(den), rel=1e-13)
    logdet = math.log(den / S)
    bound = math.sqrt(16 * 0.7 * 1.5**2 * (math.log(5) + 0.5 * logdet + math.log(10)))
    assert sn.bound == pytest.approx(bound, rel=1e-13)


def test_selfnorm_monotone_in_S():
    traj = simulate(SystemSpec([[0.8]]), 100, 3)
    values = [self_normalized_stat(traj, [[s]], 0.1, 1.0).value for s in (0.1, 1.0, 10.0, 100.0, 1e4)]
    assert all(b <= a for a, b in zip(values, values[1:]))


@pytest.mark.parametrize("S", [[[0.0]], [[-1.0]], [[1.0, 2.0], [2.0, 1.0]]])
def test_selfnorm_rejects_non_pd(S):
    d = len(S)
    traj = simulate(SystemSpec(np.zeros((d, d))), 10, 0)
    with pytest.raises(ValidationError):
        self_normalized_stat(traj, S, 0.1, 1.0)


def test_selfnorm_coverage():
    spec = SystemSpec([[0.5, 0.2], [0.0, 0.3]])
    t = 200
    S = 0.5 * gramian_sum(spec.A, t).gramian_sum
    K = NoiseFamily("gaussian").psi2
    over = 0
    for seed in range(2000):
        sn = self_normalized_stat(simulate(spec, t, seed), S, 0.1, K)
        over += sn.value > sn.bound
    assert over / 2000 <= 0.1


def test_selfnorm_roundtrip():
    sn = self_normalized_stat(simulate(SystemSpec([[0.3]]), 20, 1), [[2.0]], 0.2, 1.0)
    back = SelfNormStat.from_dict(json.loads(json.dumps(sn.to_dict())))
    assert back.to_dict() == sn.to_dict()
