import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from invgame.bayes import GaussianPosterior, build_nonlinear_prior
from invgame.exceptions import EnsembleError, InfeasibleError
from invgame.forecast import (RolloutEnsemble, certified_epsilon, credible_band, forecast_envelope,
                              log_binomial_tail, required_samples, rollout_ensemble)
from invgame.regression import ParamLayout, lq_reduced_weights


@pytest.fixture(scope="module")
def lq_setup(lq_game, lq_eq, lq_features):
    phiV = lq_features[0]
    layout = ParamLayout(phiV.output_dim, 4, 2, 1.0)
    w = lq_reduced_weights(lq_game, lq_eq, 1, phiV)
    other = lq_eq.policies()[1]
    return lq_game, phiV, layout, w, other


@pytest.fixture(scope="module")
def nl_setup(nl_game, legendre_basis, nl_eq):
    (p1, _), _ = build_nonlinear_prior(nl_game, legendre_basis, n_mc=50, seed=3)
    # a tightened belief around the prior, as after a few informative samples
    post = GaussianPosterior(p1.mean, 0.05 * p1.covariance, 0, p1.layout)
    return post, nl_eq.policies(nl_game)[1], nl_game, legendre_basis


def test_zero_covariance_gives_identical_rollouts(lq_setup):
    game, phiV, layout, w, other = lq_setup
    post = GaussianPosterior(w, np.zeros((w.size, w.size)), 0, layout)
    ens = rollout_ensemble(post, other, game, phiV, layout, [3, -4, 2, 1.5], 1.0, 0.1, 7, seed=0)
    assert ens.n_included == 7 and ens.n_excluded == 0
    assert np.all(ens.states == ens.states[0])
    band = credible_band(ens, 0.95)
    np.testing.assert_array_equal(band.lower, band.upper)
    np.testing.assert_array_equal(band.lower, ens.states[0])


def test_ensemble_is_seed_deterministic(lq_setup):
    game, phiV, layout, w, other = lq_setup
    post = GaussianPosterior(w, 1e-4 * np.eye(w.size), 0, layout)
    a = rollout_ensemble(post, other, game, phiV, layout, [3, -4, 2, 1.5], 2.0, 0.1, 50, seed=4)
    b = rollout_ensemble(post, other, game, phiV, layout, [3, -4, 2, 1.5], 2.0, 0.1, 50, seed=4)
    c = rollout_ensemble(post, other, game, phiV, layout, [3, -4, 2, 1.5], 2.0, 0.1, 50, seed=5)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.player_inputs, b.player_inputs)
    assert not np.array_equal(a.states, c.states)
    assert a.times.shape == (21,) and a.states.shape == (50, 21, 4)


def test_too_many_divergent_rollouts(lq_setup):
    game, phiV, layout, w, other = lq_setup
    post = GaussianPosterior(w, 1e4 * np.eye(w.size), 0, layout)
    with pytest.raises(EnsembleError):
        rollout_ensemble(post, other, game, phiV, layout, [3, -4, 2, 1.5], 6.0, 0.1, 200, seed=0)
    ens = rollout_ensemble(post, other, game, phiV, layout, [3, -4, 2, 1.5], 6.0, 0.1, 200, seed=0,
                           max_exclusion=1.0)
    assert ens.n_excluded > 20 and ens.n_included + ens.n_excluded == 200
    env = forecast_envelope(ens, 0.01)
    assert not env.certified and env.certificate()["exclusions"] == ens.n_excluded
    assert np.all(np.isfinite(ens.states))


def test_band_interpolated_quantiles():
    data = np.array([1.0, 2, 3, 4, 5])[:, None, None]
    band = credible_band(data, 0.5)
    assert band.lower[0, 0] == 2.0 and band.upper[0, 0] == 4.0 and band.mean[0, 0] == 3.0


def test_single_trajectory_envelope():
    traj = np.arange(6.0).reshape(1, 3, 2)
    env = forecast_envelope(traj, 0.01)
    np.testing.assert_array_equal(env.lower, traj[0])
    np.testing.assert_array_equal(env.upper, traj[0])
    assert env.d == 12 and env.epsilon == 1.0 and not env.certified


def brute_force_box(data):
    """Minimum total width box by enumerating the active constraint of each bound."""
    n, T = data.shape
    best = None
    for pattern in itertools.product(range(n), repeat=2 * T):
        lower = np.array([data[pattern[t], t] for t in range(T)])
        upper = np.array([data[pattern[T + t], t] for t in range(T)])
        if np.all(data >= lower) and np.all(data <= upper):
            width = np.sum(upper - lower)
            if best is None or width < best[0]:
                best = (width, lower, upper)
    return best


def test_envelope_solves_scenario_program():
    data = np.array([[0.3, -1.2, 2.0], [0.1, 0.4, 1.1], [0.7, -0.5, 1.9]])
    width, lower, upper = brute_force_box(data)
    env = forecast_envelope(data[:, :, None], 0.1)
    np.testing.assert_allclose(env.lower[:, 0], lower)
    np.testing.assert_allclose(env.upper[:, 0], upper)
    # the same program through a generic LP solver: variables (lower_t, upper_t)
    T = 3
    c = np.r_[-np.ones(T), np.ones(T)]
    A, b = [], []
    for s in range(3):
        for t in range(T):
            row = np.zeros(2 * T); row[t] = 1.0; A.append(row); b.append(data[s, t])
            row = np.zeros(2 * T); row[T + t] = -1.0; A.append(row); b.append(-data[s, t])
    res = linprog(c, A_ub=np.array(A), b_ub=b, bounds=[(None, None)] * (2 * T))
    assert res.fun == pytest.approx(width, abs=1e-9)
    assert env.d == 2 * T


def direct_tail(n, d, eps):
    e = Fraction(eps)
    return float(sum(math.comb(n, i) * e ** i * (1 - e) ** (n - i) for i in range(d)))


@pytest.mark.parametrize("n,d", [(5, 1), (12, 3), (30, 7), (50, 1), (50, 20), (50, 49)])
@pytest.mark.parametrize("eps", [0.01, 0.2, 0.5, 0.93])
def test_tail_matches_exact_sum(n, d, eps):
    assert math.exp(log_binomial_tail(n, d, eps)) == pytest.approx(direct_tail(n, d, eps), abs=1e-12)


def test_tail_underflow_branch():
    # deep tail where the incomplete beta value underflows
    val = log_binomial_tail(10000, 5, 0.5)
    i = np.arange(5)
    from scipy.special import gammaln
    ref = np.logaddexp.reduce(gammaln(10001) - gammaln(i + 1) - gammaln(10001 - i) + 10000 * np.log(0.5))
    assert val == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("n", [1, 2, 10, 90, 1000, 10000])
@pytest.mark.parametrize("beta", [0.01, 0.1, 0.5])
def test_d1_closed_form(n, beta):
    if n == 1:
        with pytest.raises(InfeasibleError):
            certified_epsilon(n, beta, 1)
        return
    assert certified_epsilon(n, beta, 1) == pytest.approx(1 - beta ** (1 / n), abs=1e-9)


def test_epsilon_monotone_on_grid():
    ns = [50, 100, 400, 1000, 10000]
    ds = [1, 5, 20, 44]
    E = np.array([[certified_epsilon(n, 0.01, d) for d in ds] for n in ns])
    assert np.all(np.diff(E, axis=0) <= 0)
    assert np.all(np.diff(E, axis=1) >= 0)


def test_epsilon_is_smallest_feasible():
    eps = certified_epsilon(10000, 0.01, 488)
    assert log_binomial_tail(10000, 488, eps) <= math.log(0.01)
    assert log_binomial_tail(10000, 488, eps - 1e-9) > math.log(0.01)


def test_infeasible_when_n_not_above_d():
    with pytest.raises(InfeasibleError):
        certified_epsilon(10, 0.01, 10)
    env = forecast_envelope(np.zeros((3, 2, 1)), 0.01)
    assert env.epsilon == 1.0 and not env.certified and env.note


def test_required_samples_d1():
    assert required_samples(0.05, 0.01, 1) == 90 == math.ceil(math.log(0.01) / math.log(0.95))


@pytest.mark.parametrize("n,d", [(100, 1), (500, 22), (10000, 488), (2000, 3)])
def test_required_samples_inverse_pair(n, d):
    assert required_samples(certified_epsilon(n, 0.01, d), 0.01, d) <= n


def test_required_samples_nondecreasing_in_d():
    Ns = [required_samples(0.05, 0.01, d) for d in range(1, 40)]
    assert all(a <= b for a, b in zip(Ns, Ns[1:]))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 400), st.integers(1, 30), st.floats(0.001, 0.5))
def test_certificate_bound_holds(n, d, beta):
    if n <= d:
        return
    eps = certified_epsilon(n, beta, d)
    assert 0.0 < eps < 1.0
    assert log_binomial_tail(n, d, eps) <= math.log(beta) + 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(1, 6), st.integers(0, 2 ** 31 - 1), st.floats(0.05, 0.99))
def test_band_nested_in_envelope(n, steps, seed, level):
    data = np.random.default_rng(seed).normal(size=(n, steps, 2))
    band = credible_band(data, level)
    env = forecast_envelope(data, 0.01)
    assert np.all(env.lower <= band.lower) and np.all(band.upper <= env.upper)
    assert np.all(band.lower <= band.upper)
    assert not env.violated(data).any()


def test_nl_ensemble_band_inside_envelope(nl_setup):
    post, other, game, basis = nl_setup
    ens = rollout_ensemble(post, other, game, basis, post.layout, [3.0], 1.0, 0.1, 300, seed=0)
    for which in ("states", "inputs", "combined"):
        band = credible_band(ens, 0.95, which)
        env = forecast_envelope(ens, 0.01, which)
        assert np.all(env.lower <= band.lower) and np.all(band.upper <= env.upper)
    assert forecast_envelope(ens, 0.01, "combined").d == 2 * 11 * 2
    with pytest.raises(ValueError):
        ens.coordinates("velocity")


def test_held_out_violation_rate(nl_setup):
    post, other, game, basis = nl_setup
    failures = 0
    for seed in range(20):
        train = rollout_ensemble(post, other, game, basis, post.layout, [3.0], 1.0, 0.1, 500, seed=seed)
        env = forecast_envelope(train, 0.01)
        assert env.d == 22 and env.certified
        fresh = rollout_ensemble(post, other, game, basis, post.layout, [3.0], 1.0, 0.1, 2000,
                                 seed=1000 + seed)
        rate = env.violated(fresh.states).mean()
        failures += rate > env.epsilon
    assert failures <= 1


def test_ensemble_type_fields(lq_setup):
    game, phiV, layout, w, other = lq_setup
    post = GaussianPosterior(w, 1e-6 * np.eye(w.size), 0, layout)
    ens = rollout_ensemble(post, other, game, phiV, layout, [3, -4, 2, 1.5], 0.5, 0.1, 3, seed=0,
                           player=1)
    assert isinstance(ens, RolloutEnsemble)
    assert ens.parameter_draws.shape == (3, w.size)
    assert ens.inputs[1].shape == (3, 6, 2)
