import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from invgame.equilibrium import solve_lq_nash
from invgame.regression import (ParamLayout, build_regression_sample, build_regression_samples, hamiltonian,
                                lq_reduced_weights)
from invgame.simulator import MeasurementSample, integrate_closed_loop, sample_dataset


def layout_for(game, phiV, phiQ, player=1):
    return ParamLayout(phiV.output_dim, phiQ.output_dim, game.input_dims[player - 1],
                       float(game.R[player - 1][0, 0]))


def test_origin_sample_vanishes(lq_game, lq_features):
    phiV, phiQ = lq_features
    z = np.zeros(4)
    s = MeasurementSample(z, z, np.zeros(2), np.zeros(2))
    reg = build_regression_sample(s, 1, phiV, phiQ, lq_game.to_game().input_channels[0],
                                  layout_for(lq_game, phiV, phiQ))
    assert not reg.Phi.any() and not reg.y.any()


def test_dimensions(lq_game, lq_features, lq_samples):
    phiV, phiQ = lq_features
    lay = layout_for(lq_game, phiV, phiQ)
    assert lay.dim == 15
    reg = build_regression_sample(lq_samples[5], 1, phiV, phiQ, lq_game.to_game().input_channels[0], lay)
    assert reg.Phi.shape == (3, 15) and reg.y.shape == (3,)


def test_block_structure(lq_game, lq_features, lq_samples):
    phiV, phiQ = lq_features
    lay = layout_for(lq_game, phiV, phiQ, 2)
    s = lq_samples[17]
    reg = build_regression_sample(s, 2, phiV, phiQ, lq_game.to_game().input_channels[1], lay)
    u = s.u2
    r11 = lay.fixed_r11
    np.testing.assert_allclose(reg.y, [-r11 * u[0] ** 2, -2 * r11 * u[0], 0.0])
    assert reg.Phi[0, -1] == u[1] ** 2
    assert reg.Phi[1, -1] == 0.0 and reg.Phi[2, -1] == 2 * u[1]
    assert not reg.Phi[1:, lay.state_cost].any()
    np.testing.assert_allclose(reg.Phi[0, lay.state_cost], s.x ** 2)


def test_nash_data_consistency(lq_game, lq_eq, lq_features, lq_samples):
    phiV, phiQ = lq_features
    for player in (1, 2):
        lay = layout_for(lq_game, phiV, phiQ, player)
        W = lq_reduced_weights(lq_game, lq_eq, player, phiV)
        regs = build_regression_samples(lq_samples, player, phiV, phiQ,
                                        lq_game.to_game().input_channels[player - 1], lay)
        assert max(np.linalg.norm(r.Phi @ W - r.y) for r in regs) <= 1e-8


@pytest.mark.parametrize("c", [0.5, 2.0])
def test_scale_equivariance(lq_game, lq_features, c):
    phiV, phiQ = lq_features
    scaled = lq_game.with_cost_diagonals([c * np.diag(q) for q in lq_game.Q], [c * np.diag(r) for r in lq_game.R])
    eq = solve_lq_nash(scaled)
    traj = integrate_closed_loop(scaled, *eq.policies(), lq_game.metadata["x0"], 3.0, 0.01)
    samples = sample_dataset(traj, scaled)
    lay = layout_for(scaled, phiV, phiQ)
    assert lay.fixed_r11 == c
    W = lq_reduced_weights(scaled, eq, 1, phiV)
    regs = build_regression_samples(samples, 1, phiV, phiQ, scaled.to_game().input_channels[0], lay)
    assert max(np.linalg.norm(r.Phi @ W - r.y) for r in regs) <= 1e-8


def test_hjb_row_is_hamiltonian(lq_game, lq_features, rng):
    phiV, phiQ = lq_features
    lay = layout_for(lq_game, phiV, phiQ)
    g = lq_game.to_game().input_channels[0]
    for _ in range(20):
        s = MeasurementSample(rng.normal(size=4), rng.normal(size=4), rng.normal(size=2), rng.normal(size=2))
        W = rng.normal(size=lay.dim)
        reg = build_regression_sample(s, 1, phiV, phiQ, g, lay)
        assert reg.Phi[0] @ W - reg.y[0] == pytest.approx(hamiltonian(s, 1, W, phiV, phiQ, lay), abs=1e-10)


def test_nonlinear_feedback_rows_exact(nl_game, nl_eq, legendre_basis):
    from invgame.features import DiagonalQuadraticFeatures
    phiQ = DiagonalQuadraticFeatures(1)
    lay = ParamLayout(legendre_basis.output_dim, 1, 1, 1.0)
    traj = integrate_closed_loop(nl_game, *nl_eq.policies(nl_game), [4.0], 2.0, 0.01)
    for player in (1, 2):
        W = lay.pack(nl_eq.value_weights[player - 1], [nl_game.true_costs[player - 1].state_weights[0]], [1.0])
        regs = build_regression_samples(sample_dataset(traj, nl_game), player, legendre_basis, phiQ,
                                        nl_game.input_channels[player - 1], lay)
        assert max(abs(r.Phi[1] @ W - r.y[1]) for r in regs) <= 1e-10


@given(st.integers(1, 6), st.integers(1, 4), st.integers(1, 4), st.floats(0.1, 10))
def test_layout_pack(p, s, m, r11):
    lay = ParamLayout(p, s, m, r11)
    r = np.concatenate([[r11], np.arange(1, m) + 0.5])
    w = lay.pack(np.ones(p), np.full(s, 2.0), r)
    assert w.size == lay.dim == p + s + m - 1
    np.testing.assert_array_equal(lay.input_cost_diag(w), r)
    np.testing.assert_array_equal(w[lay.state_cost], 2.0)


def test_layout_rejects_bad_input():
    with pytest.raises(ValueError):
        ParamLayout(3, 1, 1, 0.0)
    with pytest.raises(ValueError):
        ParamLayout(3, 1, 2, 1.0).pack(np.zeros(3), [1.0], [2.0, 1.0])
