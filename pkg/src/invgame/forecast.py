"""Posterior rollouts, credible bands, forecast envelopes and scenario certificates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc, gammaln, logsumexp

from ._validation import as_vector, check_fraction
from .equilibrium import ValueFeedback
from .exceptions import EnsembleError, InfeasibleError
from .game import as_game, closed_loop_rhs
from .simulator import _n_steps, rk4_rollout

R_FLOOR = 1e-3


@dataclass(frozen=True)
class RolloutEnsemble:
    """Monte Carlo closed-loop rollouts sharing one time grid.

    ``states`` and ``inputs`` only hold the included (non-diverged) rollouts;
    ``parameter_draws`` holds every draw, with ``diverged`` marking the
    excluded ones.
    """

    times: np.ndarray
    states: np.ndarray
    inputs: tuple
    parameter_draws: np.ndarray
    diverged: np.ndarray
    seed: int
    player: int

    @property
    def n_included(self):
        return self.states.shape[0]

    @property
    def n_excluded(self):
        return int(self.diverged.sum())

    @property
    def player_inputs(self):
        return self.inputs[self.player - 1]

    def coordinates(self, which="states"):
        """Array ``(n_included, steps + 1, n_coords)`` for ``states``, ``inputs`` or ``combined``."""
        if which == "states":
            return self.states
        if which == "inputs":
            return self.player_inputs
        if which == "combined":
            return np.concatenate([self.states, self.player_inputs], axis=2)
        raise ValueError(f"unknown coordinate set {which!r}")


@dataclass(frozen=True)
class CredibleBand:
    lower: np.ndarray
    upper: np.ndarray
    mean: np.ndarray
    level: float


@dataclass(frozen=True)
class ForecastEnvelope:
    """Componentwise bounds ``lower <= x_t <= upper`` and their certificate.

    ``certified`` is false when rollouts were excluded or the ensemble is too
    small for a nontrivial bound; ``epsilon`` is then reported as 1.
    """

    lower: np.ndarray
    upper: np.ndarray
    d: int
    epsilon: float
    beta: float
    n: int
    excluded: int = 0
    certified: bool = True
    note: str = ""

    def contains(self, trajectory):
        """Boolean array ``(steps + 1, n_coords)`` of containment."""
        return (trajectory >= self.lower) & (trajectory <= self.upper)

    def violated(self, trajectories):
        """Per-trajectory flag: leaves the envelope at some time step."""
        t = np.asarray(trajectories)
        return np.any((t < self.lower) | (t > self.upper), axis=(1, 2))

    def certificate(self):
        return {"n": self.n, "beta": self.beta, "d": self.d, "epsilon": self.epsilon,
                "exclusions": self.excluded, "certified": self.certified, "note": self.note}


def sample_parameters(post, n, rng):
    """Draw ``n`` weight vectors from ``N(mean, covariance)``.

    Uses a Cholesky factor when it exists, otherwise an eigen-decomposition
    with negative eigenvalues floored at zero.
    """
    S = post.covariance
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        lam, V = np.linalg.eigh(0.5 * (S + S.T))
        L = V * np.sqrt(np.clip(lam, 0.0, None))
    Z = rng.standard_normal((n, post.dim))
    return post.mean + Z @ L.T


def rollout_ensemble(post, other_policy, game, phiV, layout, x0, horizon, dt, n_mc,
                     seed=0, player=1, max_exclusion=0.1, r_floor=R_FLOOR):
    """Simulate the stochastic policy model of ``player`` against a known opponent.

    All ``n_mc`` parameter vectors are drawn up front from one seeded stream;
    rollouts are then integrated as one vectorised batch. The drawn input-cost
    entries are floored at ``r_floor`` so every draw defines a policy.

    Raises
    ------
    EnsembleError
        More than ``max_exclusion`` of the rollouts diverged.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be at least 1")
    game = as_game(game)
    x0 = as_vector(x0, game.state_dim, "x0")
    n_steps = _n_steps(horizon, dt)
    rng = np.random.default_rng(seed)
    draws = sample_parameters(post, n_mc, rng)
    r_diag = np.maximum(layout.input_cost_diag(draws), r_floor)
    learned = ValueFeedback(draws[:, layout.value], phiV,
                            game.input_channels[player - 1], r_diag)
    policies = (learned, other_policy) if player == 1 else (other_policy, learned)
    rhs = closed_loop_rhs(game, *policies)
    X0 = np.broadcast_to(x0, (n_mc, game.state_dim))
    states, inputs, diverged = rk4_rollout(rhs, X0, n_steps, dt)
    if diverged.sum() > max_exclusion * n_mc:
        raise EnsembleError(f"{int(diverged.sum())} of {n_mc} rollouts diverged")
    keep = ~diverged
    return RolloutEnsemble(
        times=dt * np.arange(n_steps + 1),
        states=states[keep],
        inputs=(inputs[0][keep], inputs[1][keep]),
        parameter_draws=draws,
        diverged=diverged,
        seed=seed,
        player=player,
    )


def credible_band(ens, level=0.95, which="states"):
    """Pointwise equal-tailed quantile band plus the ensemble mean.

    Quantiles use linear interpolation between order statistics.
    """
    level = check_fraction(level, "level")
    data = ens.coordinates(which) if isinstance(ens, RolloutEnsemble) else np.asarray(ens, dtype=float)
    if data.shape[0] == 0:
        raise ValueError("ensemble is empty")
    alpha = (1.0 - level) / 2.0
    lower, upper = np.quantile(data, [alpha, 1.0 - alpha], axis=0, method="linear")
    return CredibleBand(lower=lower, upper=upper, mean=data.mean(axis=0), level=level)


def forecast_envelope(ens, beta=0.01, which="states", excluded=None):
    """Minimal-width box envelope containing every rollout, with its certificate.

    The componentwise min/max is the exact optimiser of the scenario program
    that minimises total width subject to containing all rollouts. The
    decision dimension is ``d = 2 (steps + 1) n_coords``.
    """
    beta = check_fraction(beta, "beta")
    if isinstance(ens, RolloutEnsemble):
        data = ens.coordinates(which)
        excluded = ens.n_excluded if excluded is None else excluded
    else:
        data = np.asarray(ens, dtype=float)
        excluded = excluded or 0
    if data.shape[0] == 0:
        raise ValueError("ensemble is empty")
    n = data.shape[0]
    d = 2 * data.shape[1] * data.shape[2]
    note = ""
    try:
        epsilon = certified_epsilon(n + excluded, beta, d)
        certified = excluded == 0
        if not certified:
            note = f"{excluded} diverged rollouts excluded; certificate void"
    except InfeasibleError as exc:
        epsilon, certified, note = 1.0, False, str(exc)
    return ForecastEnvelope(lower=data.min(axis=0), upper=data.max(axis=0), d=d,
                            epsilon=float(epsilon), beta=beta, n=n, excluded=excluded,
                            certified=certified, note=note)


def log_binomial_tail(n, d, epsilon):
    """``log sum_{i<d} C(n,i) eps^i (1-eps)^(n-i)``.

    Evaluated through ``I_{1-eps}(n-d+1, d)``; when that underflows the sum
    is taken term by term in log space.
    """
    if epsilon <= 0.0:
        return 0.0
    if epsilon >= 1.0:
        return -np.inf
    if d > n:
        return 0.0
    with np.errstate(divide="ignore"):
        val = betainc(n - d + 1, d, 1.0 - epsilon)
    if val > 1e-280:
        return float(np.log(val))
    i = np.arange(d)
    terms = (gammaln(n + 1) - gammaln(i + 1) - gammaln(n - i + 1)
             + i * np.log(epsilon) + (n - i) * np.log1p(-epsilon))
    return float(logsumexp(terms))


def certified_epsilon(n, beta, d, tol=1e-13):
    """Smallest ``eps`` with binomial tail ``<= beta`` (bisection).

    Raises
    ------
    InfeasibleError
        ``n <= d``: no nontrivial violation level can be certified.
    """
    beta = check_fraction(beta, "beta")
    if d < 1:
        raise ValueError("d must be at least 1")
    if n <= d:
        raise InfeasibleError(f"n={n} samples cannot certify a {d}-dimensional envelope")
    target = math.log(beta)
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if log_binomial_tail(n, d, mid) <= target:
            hi = mid
        else:
            lo = mid
    return hi


def required_samples(epsilon, beta, d):
    """Smallest ``N`` with binomial tail ``<= beta`` (doubling, then bisection)."""
    epsilon = check_fraction(epsilon, "epsilon")
    beta = check_fraction(beta, "beta")
    if d < 1:
        raise ValueError("d must be at least 1")
    target = math.log(beta)

    def ok(N):
        return log_binomial_tail(N, d, epsilon) <= target

    hi = d
    while not ok(hi):
        hi *= 2
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi
