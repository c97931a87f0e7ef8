import numpy as np
import pytest

from invgame.equilibrium import (ValueFeedback, coupled_riccati_residual, equilibrium_policy,
                                 hjb_residuals, lq_cost_matrix, solve_lq_nash, solve_nonlinear_hjb)
from invgame.exceptions import ConvergenceError, StabilizationError
from invgame.features import LegendreFeatures, QuadraticFeatures
from invgame.game import LqGame


def scalar_game(a, b1, b2, q, r):
    return LqGame(A=[[a]], B=([[b1]], [[b2]]), Q=([[q[0]]], [[q[1]]]), R=([[r[0]]], [[r[1]]]),
                  domain=(-5.0, 5.0))


def test_single_player_scalar_riccati():
    # root of 2 a p + q - p^2 b^2 / r = 0 for a=0.5, b=2, q=3, r=0.7 (30-digit arithmetic)
    eq = solve_lq_nash(scalar_game(0.5, 2.0, 0.0, (3.0, 1.0), (0.7, 1.0)))
    assert eq.P[0][0, 0] == pytest.approx(0.817333028849749989, abs=1e-12)
    assert eq.P[1][0, 0] == pytest.approx(1.0 / (2 * (4 * 0.817333028849749989 / 0.7 - 0.5)), rel=1e-10)


def test_benchmark_solution(lq_game, lq_eq):
    assert max(lq_eq.residual) <= 1e-8
    assert np.max(np.linalg.eigvals(lq_eq.closed_loop).real) < 0
    for P, K, B, R in zip(lq_eq.P, lq_eq.K, lq_game.B, lq_game.R):
        np.testing.assert_allclose(P, P.T, atol=1e-10)
        np.testing.assert_allclose(K, np.linalg.solve(R, B.T @ P), atol=1e-12)
        assert np.linalg.eigvalsh(P).min() > 0


def test_zero_costs_give_zero_values():
    A = -np.eye(2) + np.array([[0, 1], [-1, 0]])
    game = LqGame(A=A, B=(np.eye(2)[:, :1], np.eye(2)[:, 1:]), Q=(np.zeros((2, 2)),) * 2,
                  R=(np.eye(1), np.eye(1)))
    eq = solve_lq_nash(game)
    for P in eq.P:
        np.testing.assert_allclose(P, 0.0, atol=1e-14)


def test_residual_examples(lq_game, lq_eq):
    zero = lq_game.with_cost_diagonals([np.zeros(4)] * 2, [np.ones(2)] * 2)
    assert coupled_riccati_residual(zero, np.zeros((4, 4)), np.zeros((4, 4))) == (0.0, 0.0)
    E = np.full((4, 4), 1e-3)
    assert min(coupled_riccati_residual(lq_game, lq_eq.P[0] + E, lq_eq.P[1] + E)) > 1e-6


def test_lyapunov_trace_monotone(lq_eq):
    trace = np.array(lq_eq.trace)
    assert np.all(np.diff(trace[1:]) <= 1e-12)


def test_max_iter_reports_trace(lq_game):
    with pytest.raises(ConvergenceError) as info:
        solve_lq_nash(lq_game, max_iter=3)
    assert len(info.value.trace) == 4
    assert info.value.residual == info.value.trace[-1]


def test_unstabilisable_game_rejected():
    game = scalar_game(1.0, 0.0, 0.0, (1.0, 1.0), (1.0, 1.0))
    with pytest.raises(StabilizationError):
        solve_lq_nash(game)


def test_unilateral_deviation_never_helps(lq_game, lq_eq):
    rng = np.random.default_rng(8)
    K1, K2 = lq_eq.K
    base = [lq_cost_matrix(lq_game, K1, K2, p) for p in (1, 2)]
    for _ in range(20):
        for player in (1, 2):
            D = rng.normal(size=lq_eq.K[player - 1].shape)
            D *= 1e-2 / np.linalg.norm(D)
            gains = (K1 + D, K2) if player == 1 else (K1, K2 + D)
            diff = lq_cost_matrix(lq_game, *gains, player) - base[player - 1]
            assert np.linalg.eigvalsh(0.5 * (diff + diff.T)).min() >= -1e-10


def test_policy_matches_gain(lq_game, lq_eq, rng):
    phi = QuadraticFeatures(4)
    for i in range(2):
        w = phi.weights_from_symmetric(lq_eq.P[i])
        g = lq_game.to_game().input_channels[i]
        for _ in range(100):
            x = rng.normal(size=4) * 3
            u = equilibrium_policy(x, w, phi, g, np.diag(lq_game.R[i]))
            np.testing.assert_allclose(u, -lq_eq.K[i] @ x, atol=1e-10)
        assert np.all(equilibrium_policy(np.zeros(4), w, phi, g, np.diag(lq_game.R[i])) == 0)


def test_galerkin_recovers_scalar_lq():
    game = scalar_game(-0.4, 0.8, 0.5, (1.5, 0.6), (1.0, 2.0))
    eq = solve_lq_nash(game)
    h = 5.0
    basis = LegendreFeatures(order=4, domain=(-h, h), include_constant=False, anchor=[0.0])
    nl = solve_nonlinear_hjb(game.to_game(), basis, tol=1e-12, max_iter=500)
    for i in range(2):
        # x^2 = h^2 (2 P2(xi) + 1) / 3, so the P2 weight is p h^2 2/3
        expected = np.zeros(4)
        expected[1] = eq.P[i][0, 0] * h ** 2 * 2.0 / 3.0
        np.testing.assert_allclose(nl.value_weights[i], expected, atol=1e-4)


def test_nonlinear_value_positive(nl_eq):
    X = nl_eq.grid
    for i in (1, 2):
        v = nl_eq.value(i, X)
        assert nl_eq.value(i, np.zeros((1, 1)))[0] == pytest.approx(0.0, abs=1e-12)
        assert np.all(v[np.abs(X[:, 0]) > 1e-9] > 0)


def test_nonlinear_policy_consistent(nl_game, nl_eq, legendre_basis):
    pols = nl_eq.policies(nl_game)
    x = np.array([1.0])
    for i in range(2):
        u = equilibrium_policy(x, nl_eq.value_weights[i], legendre_basis, nl_game.input_channels[i],
                               nl_game.true_costs[i].input_cost_diag)
        assert np.isfinite(u).all()
        np.testing.assert_allclose(pols[i](x[None, :])[0], u, rtol=1e-12)


def test_nonlinear_residuals_reported(nl_game, nl_eq, legendre_basis):
    res = hjb_residuals(nl_game, legendre_basis, nl_eq.value_weights, nl_eq.grid)
    assert nl_eq.hjb_residual_sup == tuple(float(np.abs(r).max()) for r in res)
    assert nl_eq.trace[-1] <= 1e-6


def test_nonlinear_solver_deterministic(nl_game, legendre_basis, nl_eq):
    again = solve_nonlinear_hjb(nl_game, legendre_basis)
    for a, b in zip(again.value_weights, nl_eq.value_weights):
        np.testing.assert_array_equal(a, b)


def test_value_feedback_batched_weights(nl_game, nl_eq, legendre_basis):
    W = np.stack([nl_eq.value_weights[0], 2 * nl_eq.value_weights[0]])
    pol = ValueFeedback(W, legendre_basis, nl_game.input_channels[0], np.array([[1.0], [1.0]]))
    u = pol(np.array([[1.0], [1.0]]))
    np.testing.assert_allclose(u[1], 2 * u[0])
