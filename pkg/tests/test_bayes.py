import numpy as np
import pytest

from invgame.bayes import (GaussianPosterior, NoiseModel, batch_posterior, build_lq_prior,
                           build_nonlinear_prior, draw_costs, recursive_update, run_updates)
from invgame.exceptions import ConditioningError
from invgame.regression import RegressionSample, build_regression_samples, lq_reduced_weights


def random_problem(rng, dim=5, rows=3, n=40):
    M = rng.normal(size=(dim, dim))
    prior = GaussianPosterior(rng.normal(size=dim), M @ M.T + np.eye(dim))
    samples = [RegressionSample(rng.normal(size=(rows, dim)), rng.normal(size=rows)) for _ in range(n)]
    return prior, samples, NoiseModel.isotropic(0.5, rows)


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_scalar_update():
    post = recursive_update(GaussianPosterior([0.0], [[1.0]]), RegressionSample(np.array([[1.0]]), np.array([2.0])),
                            NoiseModel(np.array([[1.0]])))
    assert post.mean[0] == pytest.approx(1.0, abs=1e-15)
    assert post.covariance[0, 0] == pytest.approx(0.5, abs=1e-15)
    assert post.sample_count == 1


def test_uninformative_observation(rng):
    prior, samples, _ = random_problem(rng)
    post = recursive_update(prior, samples[0], NoiseModel(1e12 * np.eye(3)))
    assert np.linalg.norm(post.mean - prior.mean) <= 1e-6 * np.linalg.norm(prior.mean) + 1e-9


def test_trace_never_increases(rng):
    prior, samples, noise = random_problem(rng)
    post, tr = prior, np.trace(prior.covariance)
    for s in samples:
        post = recursive_update(post, s, noise)
        assert np.trace(post.covariance) <= tr * (1 + 1e-12)
        tr = np.trace(post.covariance)


def test_matches_explicit_joseph_formula(rng):
    prior, samples, noise = random_problem(rng)
    m, S = prior.mean, prior.covariance
    post = prior
    for s in samples[:5]:
        Phi, R = s.Phi, noise.Sigma
        K = S @ Phi.T @ np.linalg.inv(Phi @ S @ Phi.T + R)
        m = m + K @ (s.y - Phi @ m)
        IKH = np.eye(m.size) - K @ Phi
        S = IKH @ S @ IKH.T + K @ R @ K.T
        post = recursive_update(post, s, noise)
    assert rel(post.mean, m) <= 1e-12 and rel(post.covariance, S) <= 1e-12
    L = post.square_root()
    np.testing.assert_allclose(L @ L.T, post.covariance, rtol=0, atol=1e-13 * np.abs(S).max())


def test_singular_covariance_square_root():
    post = GaussianPosterior(np.zeros(3), np.diag([1.0, 0.0, 2.0]))
    L = post.square_root()
    np.testing.assert_allclose(L @ L.T, post.covariance, atol=1e-15)


def test_single_sample_batch_equivalence(rng):
    prior, samples, noise = random_problem(rng)
    a = recursive_update(prior, samples[0], noise)
    b = batch_posterior(prior, samples[:1], noise)
    assert rel(a.mean, b.mean) <= 1e-10 and rel(a.covariance, b.covariance) <= 1e-10


def test_batch_needs_samples(rng):
    prior, _, noise = random_problem(rng)
    with pytest.raises(ValueError):
        batch_posterior(prior, [], noise)


def test_order_invariance(rng):
    prior, samples, noise = random_problem(rng)
    perm = [samples[k] for k in rng.permutation(len(samples))]
    b1, b2 = batch_posterior(prior, samples, noise), batch_posterior(prior, perm, noise)
    assert rel(b1.mean, b2.mean) <= 1e-12 and rel(b1.covariance, b2.covariance) <= 1e-12
    r1, r2 = run_updates(prior, samples, noise), run_updates(prior, perm, noise)
    assert rel(r1.mean, r2.mean) <= 1e-8 and rel(r1.covariance, r2.covariance) <= 1e-8


def test_recursive_equals_batch_on_lq_data(lq_game, lq_features, lq_samples):
    # algebraic equivalence at a residual scale where the information matrix is well conditioned
    phiV, phiQ = lq_features
    (prior, _), _ = build_lq_prior(lq_game, n_mc=200, seed=0)
    regs = build_regression_samples(lq_samples[:300], 1, phiV, phiQ, lq_game.to_game().input_channels[0],
                                    prior.layout)
    noise = NoiseModel.isotropic(0.1, 3)
    a, b = run_updates(prior, regs, noise), batch_posterior(prior, regs, noise)
    assert rel(a.mean, b.mean) <= 1e-8 and rel(a.covariance, b.covariance) <= 1e-8


def test_psd_after_many_updates():
    rng = np.random.default_rng(0)
    prior, _, noise = random_problem(rng, dim=4, rows=2, n=0)
    post = prior
    for _ in range(10_000):
        post = recursive_update(post, RegressionSample(rng.normal(size=(2, 4)), rng.normal(size=2)), noise)
    assert post.is_valid()
    S = post.covariance
    assert np.linalg.eigvalsh(S).min() >= -1e-10 * np.trace(S)


def test_conditioning_error():
    post = GaussianPosterior(np.zeros(2), np.eye(2) * 1e20)
    with pytest.raises(ConditioningError):
        recursive_update(post, RegressionSample(np.array([[1.0, 0.0], [0.0, 1e-10]]), np.zeros(2)),
                         NoiseModel(np.eye(2) * 1e-20))


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        NoiseModel(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_json_roundtrip(rng):
    prior, samples, noise = random_problem(rng)
    post = run_updates(prior, samples[:3], noise)
    back = GaussianPosterior.from_json(post.to_json())
    np.testing.assert_array_equal(back.mean, post.mean)
    np.testing.assert_array_equal(back.covariance, post.covariance)
    assert back.sample_count == 3


def test_draw_costs_clamps():
    rng = np.random.default_rng(0)
    qs, rs = draw_costs(rng, [[0.0, 5.0]], [[100.0, 0.0]], [[1.0, -1.0]], [[0.0, 1e-12]], floor=1e-3)
    assert qs[0][1] == 5.0 and rs[0][0] == 1.0
    assert qs[0][0] >= 1e-3 and rs[0][1] == 1e-3


def test_zero_variance_prior(lq_game, lq_eq, lq_features):
    zero = {"Q_var": [np.zeros(4)] * 2, "R_var": [np.zeros(2)] * 2}
    (p1, p2), failures = build_lq_prior(lq_game, zero, n_mc=10, seed=0)
    assert failures == 0
    for player, p in ((1, p1), (2, p2)):
        assert np.linalg.norm(p.covariance) <= 1e-10
        np.testing.assert_allclose(p.mean, lq_reduced_weights(lq_game, lq_eq, player, lq_features[0]), atol=1e-12)


def test_lq_prior_properties(lq_game):
    (a1, a2), fa = build_lq_prior(lq_game, n_mc=200, seed=0)
    (b1, _), fb = build_lq_prior(lq_game, n_mc=200, seed=0)
    assert fa == fb
    np.testing.assert_array_equal(a1.mean, b1.mean)
    np.testing.assert_array_equal(a1.covariance, b1.covariance)
    for p in (a1, a2):
        assert p.is_valid()
        assert np.all(np.diag(p.covariance) > 0)
    # cost entries carry their prescribed spread around the nominal values
    np.testing.assert_allclose(a1.mean[10:14], [1, 0.4, 3, 1])
    np.testing.assert_allclose(a1.std[10:], np.sqrt([1, 0.16, 9, 1, 1]))


def test_nonlinear_prior(nl_game, legendre_basis, nl_eq):
    (p1, p2), failures = build_nonlinear_prior(nl_game, legendre_basis, n_mc=20, seed=1)
    assert failures == 0
    np.testing.assert_allclose(p1.mean[:10], nl_eq.value_weights[0], atol=1e-12)
    assert p2.mean[10] == pytest.approx(0.3)
    assert p1.std[10] == pytest.approx(np.sqrt(0.5))
    assert p1.is_valid()
