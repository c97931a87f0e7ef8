import numpy as np
import pytest

from invgame.equilibrium import solve_lq_nash, solve_nonlinear_hjb
from invgame.features import DiagonalQuadraticFeatures, LegendreFeatures, QuadraticFeatures
from invgame.game import lq_benchmark_game, nonlinear_benchmark_game
from invgame.simulator import run_target_schedule, sample_dataset

ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def lq_game():
    return lq_benchmark_game()


@pytest.fixture(scope="session")
def lq_eq(lq_game):
    return solve_lq_nash(lq_game)


@pytest.fixture(scope="session")
def lq_features():
    return QuadraticFeatures(4), DiagonalQuadraticFeatures(4)


@pytest.fixture(scope="session")
def lq_samples(lq_game, lq_eq):
    meta = lq_game.metadata
    traj = run_target_schedule(lq_game, lq_eq.policies(), meta["x0"], meta["targets"], [4.0, 4.0, 4.0], 0.01)
    return sample_dataset(traj, lq_game)


@pytest.fixture(scope="session")
def nl_game():
    return nonlinear_benchmark_game()


@pytest.fixture(scope="session")
def legendre_basis():
    return LegendreFeatures(order=10, domain=(-5.0, 5.0), include_constant=False, anchor=[0.0])


@pytest.fixture(scope="session")
def nl_eq(nl_game, legendre_basis):
    return solve_nonlinear_hjb(nl_game, legendre_basis)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
