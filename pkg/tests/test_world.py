import math

import numpy as np
import pytest
import scipy.stats

from rollforge import schedule, world


def test_memoryless_regime_collapses_to_noise_covariance():
    r = world.make_regime(0, dim=2, rotation_angle=0.0, contraction=0.0,
                          process_noise=1.0)
    np.testing.assert_array_equal(r.A, np.zeros((2, 2)))
    np.testing.assert_allclose(r.SigmaInf, np.eye(2), atol=1e-12)


def test_scalar_lyapunov_closed_form():
    # A = 0.9 I, Q = I: SigmaInf = I / (1 - 0.81)
    r = world.make_regime(0, dim=2, rotation_angle=0.0, contraction=0.9,
                          process_noise=1.0)
    np.testing.assert_allclose(r.SigmaInf, np.eye(2) / (1.0 - 0.81), atol=1e-10)


def test_generic_regime_passes_stability_invariants():
    r = world.make_regime(1, dim=8, rotation_angle=math.pi / 8,
                          contraction=0.95, process_noise=0.05)
    radius = np.max(np.abs(np.linalg.eigvals(r.A)))
    assert radius < 1.0
    residual = np.max(np.abs(r.A @ r.SigmaInf @ r.A.T + r.Q - r.SigmaInf))
    assert residual <= 1e-8


def test_make_regime_rejects_unstable_or_bad_inputs():
    with pytest.raises(ValueError):
        world.make_regime(0, contraction=1.0)
    with pytest.raises(ValueError):
        world.make_regime(0, contraction=-0.1)
    with pytest.raises(ValueError):
        world.make_regime(0, dim=7)
    with pytest.raises(ValueError):
        world.make_regime(0, process_noise=0.0)
    with pytest.raises(ValueError):
        world.make_regime(-1)


def test_default_regimes_cover_four_labels():
    regimes = world.default_regimes(8)
    assert [r.label for r in regimes] == [0, 1, 2, 3]
    assert [r.rotation_angle for r in regimes] == [0.0, math.pi / 12, math.pi / 8,
                                                   math.pi / 6]
    for r in regimes:
        assert r.dim == 8
        # 0.05 / (1 - 0.95^2) on the diagonal for every rotation angle
        np.testing.assert_allclose(np.diag(r.SigmaInf),
                                   np.full(8, 0.05 / (1 - 0.95**2)), atol=1e-9)
        np.testing.assert_allclose(r.Sigma0, r.SigmaInf, atol=1e-12)


def test_regime_config_round_trip():
    r = world.make_regime(2, dim=4, rotation_angle=0.3, contraction=0.8,
                          process_noise=0.1)
    back = world.Regime.from_config(r.to_config())
    np.testing.assert_allclose(back.A, r.A, atol=1e-15)
    np.testing.assert_allclose(back.SigmaInf, r.SigmaInf, atol=1e-12)
    assert back.label == r.label


def test_sample_sequence_deterministic_given_seed():
    r = world.make_regime(0, dim=4)
    a = world.sample_sequence(r, 16, seed=123)
    b = world.sample_sequence(r, 16, seed=123)
    np.testing.assert_array_equal(a, b)
    c = world.sample_sequence(r, 16, seed=124)
    assert np.any(a != c)


def test_first_frame_covariance_matches_sigma0():
    r = world.make_regime(0, dim=2, rotation_angle=0.4, contraction=0.9,
                          process_noise=1.0)
    draws = np.stack([world.sample_sequence(r, 1, seed=s)[0] for s in range(100000)])
    emp = draws.T @ draws / len(draws)
    scale = np.max(np.abs(r.Sigma0))
    assert np.max(np.abs(emp - r.Sigma0)) < 0.05 * scale


def test_memoryless_sequence_has_no_lag_one_correlation():
    r = world.make_regime(0, dim=2, rotation_angle=0.0, contraction=0.0,
                          process_noise=1.0)
    x = world.sample_sequence(r, 10000, seed=7)
    lag1 = x[1:].T @ x[:-1] / (len(x) - 1)
    assert np.max(np.abs(lag1)) < 0.05


def test_joint_gaussian_single_frame_is_sigma0():
    r = world.make_regime(0, dim=4, rotation_angle=0.2)
    jg = world.joint_gaussian(r, 1)
    np.testing.assert_allclose(jg.cov, r.Sigma0, atol=1e-12)
    np.testing.assert_array_equal(jg.mean, np.zeros(4))


def test_joint_gaussian_memoryless_is_block_diagonal():
    # Sigma0 != Q so the two diagonal blocks are distinguishable
    A = np.zeros((2, 2))
    Q = np.eye(2)
    sigma0 = 2.0 * np.eye(2)
    r = world.Regime(label=0, A=A, Q=Q, Sigma0=sigma0, SigmaInf=Q.copy(),
                     rotation_angle=0.0, contraction=0.0, process_noise=1.0)
    jg = world.joint_gaussian(r, 2)
    expect = np.zeros((4, 4))
    expect[:2, :2] = sigma0
    expect[2:, 2:] = Q
    np.testing.assert_allclose(jg.cov, expect, atol=1e-12)


def test_joint_gaussian_matches_monte_carlo_covariance():
    r = world.make_regime(1, dim=2, rotation_angle=math.pi / 8, contraction=0.9,
                          process_noise=0.5)
    jg = world.joint_gaussian(r, 3)
    n = 100000
    rng = np.random.default_rng(0)
    # batched independent simulation of the same recursion
    x1 = rng.standard_normal((n, 2)) @ r.chol_sigma0.T
    x2 = x1 @ r.A.T + rng.standard_normal((n, 2)) @ r.chol_q.T
    x3 = x2 @ r.A.T + rng.standard_normal((n, 2)) @ r.chol_q.T
    flat = np.concatenate([x1, x2, x3], axis=1)
    emp = flat.T @ flat / n
    scale = np.max(np.abs(np.diag(jg.cov)))
    assert np.max(np.abs(emp - jg.cov)) < 0.05 * scale


def test_joint_gaussian_dimension_cap():
    r = world.make_regime(0, dim=8)
    world.joint_gaussian(r, 64)
    with pytest.raises(ValueError):
        world.joint_gaussian(r, 65)


def test_joint_gaussian_stationary_start_marginals():
    r = world.make_regime(0, dim=2, rotation_angle=0.1, contraction=0.9,
                          process_noise=1.0, initial_cov=np.eye(2))
    jg = world.joint_gaussian(r, 3, stationary_start=True)
    for i in range(3):
        np.testing.assert_allclose(jg.cov[2 * i:2 * i + 2, 2 * i:2 * i + 2],
                                   r.SigmaInf, atol=1e-9)


def test_score_vanishes_at_the_mode():
    r = world.make_regime(0, dim=2)
    jg = world.joint_gaussian(r, 2)
    s = world.analytic_data_score(np.zeros(4), 300.0, jg)
    np.testing.assert_allclose(s, np.zeros(4), atol=1e-12)


def test_score_scalar_closed_form():
    jg = world.JointGaussian(mean=np.zeros(1), cov=np.eye(1), n_frames=1, dim=1)
    t = 1000.0 / 6.0  # sigma = 1/2
    z = np.array([1.3])
    got = world.analytic_data_score(z, t, jg)
    np.testing.assert_allclose(got, -2.0 * z, atol=1e-10)


def test_score_requires_positive_level():
    r = world.make_regime(0, dim=2)
    jg = world.joint_gaussian(r, 1)
    with pytest.raises(ValueError):
        jg.noised_factor(0.0)


def test_score_matches_finite_difference_log_density():
    r = world.make_regime(1, dim=2, rotation_angle=math.pi / 8, contraction=0.9,
                          process_noise=0.5)
    jg = world.joint_gaussian(r, 3)
    rng = np.random.default_rng(3)
    h = 1e-4
    for _ in range(20):
        t = rng.uniform(50.0, 950.0)
        s = schedule.sigma(t)
        a = 1.0 - s
        noised = scipy.stats.multivariate_normal(mean=a * jg.mean,
                                                 cov=a * a * jg.cov + s * s * np.eye(6))
        z = noised.rvs(random_state=rng)
        got = world.analytic_data_score(z, t, jg)
        fd = np.empty(6)
        for i in range(6):
            zp, zm = z.copy(), z.copy()
            zp[i] += h
            zm[i] -= h
            fd[i] = (noised.logpdf(zp) - noised.logpdf(zm)) / (2 * h)
        np.testing.assert_allclose(got, fd, rtol=1e-5, atol=1e-8)


def test_score_batched_with_per_element_levels():
    r = world.make_regime(0, dim=2)
    jg = world.joint_gaussian(r, 2)
    rng = np.random.default_rng(5)
    z = rng.normal(size=(4, 4))
    t = np.array([100.0, 100.0, 600.0, 900.0])
    batched = world.analytic_data_score(z, t, jg)
    for b in range(4):
        np.testing.assert_allclose(batched[b],
                                   world.analytic_data_score(z[b], float(t[b]), jg),
                                   atol=1e-12)


def test_score_factor_cache_stays_bounded():
    r = world.make_regime(0, dim=2)
    jg = world.joint_gaussian(r, 2)
    for t in np.linspace(10.0, 990.0, 200):
        jg.noised_factor(float(t))
    assert len(jg._score_factors) <= 64


def test_stationary_law_examples():
    memoryless = world.make_regime(0, dim=2, contraction=0.0, process_noise=1.0)
    mean, cov = memoryless.stationary_law()
    np.testing.assert_array_equal(mean, np.zeros(2))
    np.testing.assert_allclose(cov, memoryless.Q, atol=1e-12)
    scalar = world.make_regime(0, dim=2, contraction=0.9, process_noise=1.0)
    np.testing.assert_allclose(scalar.stationary_law()[1],
                               np.eye(2) / (1 - 0.81), atol=1e-10)


def test_long_rollout_marginal_converges_to_stationary():
    r = world.make_regime(2, dim=4, rotation_angle=math.pi / 8)
    dists = []
    for n in (1000, 10000):
        x = world.sample_sequence(r, n, seed=11)
        emp = x.T @ x / n
        dists.append(np.linalg.norm(emp - r.SigmaInf))
    assert dists[1] < dists[0]
    assert dists[1] < 0.15 * np.linalg.norm(r.SigmaInf)
