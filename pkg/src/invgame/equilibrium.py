"""Forward feedback-Nash solvers used to generate ground truth.

Two solvers are provided: a Lyapunov iteration on the coupled algebraic
Riccati equations of an LQ game, and Galerkin policy iteration on the
coupled HJB equations of a low-dimensional nonlinear game.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .exceptions import ConditioningError, ConvergenceError, StabilizationError
from .features import eval_feature_jacobian
from .game import LqGame, as_game


@dataclass(frozen=True)
class LqEquilibrium:
    """Quadratic values ``V_i = x^T P_i x`` and gains ``u_i = -K_i x``."""

    P: tuple
    K: tuple
    residual: tuple
    iterations: int = 0
    trace: tuple = ()
    closed_loop: np.ndarray = field(default=None, repr=False)

    def policies(self):
        return tuple(LinearFeedback(K) for K in self.K)


@dataclass(frozen=True)
class NlEquilibrium:
    """Value-function weights over a shared basis plus grid diagnostics."""

    value_weights: tuple
    basis: object
    hjb_residual_sup: tuple
    running_cost_scale: tuple
    iterations: int = 0
    trace: tuple = ()
    grid: np.ndarray = field(default=None, repr=False)

    def policies(self, game):
        game = as_game(game)
        return tuple(
            ValueFeedback(w, self.basis, game.input_channels[i],
                          game.true_costs[i].input_cost_diag)
            for i, w in enumerate(self.value_weights)
        )

    def value(self, i, X):
        """Value of player ``i`` (1 or 2) at states ``X``."""
        return self.basis.transform(X) @ self.value_weights[i - 1]


@dataclass(frozen=True)
class LinearFeedback:
    """Policy ``u = -K x``, vectorised over leading state axes."""

    K: np.ndarray

    def __call__(self, x):
        return -np.asarray(x, dtype=float) @ np.asarray(self.K).T


@dataclass(frozen=True)
class ValueFeedback:
    """Equilibrium policy ``-1/2 R^{-1} g(x)^T grad phi(x)^T W``.

    ``weights`` may carry a leading batch axis matching the batch axis of the
    states (one parameter draw per rollout); ``r_diag`` likewise.
    """

    weights: np.ndarray
    basis: object
    channel: object
    r_diag: np.ndarray

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, x.shape[-1])
        jac = self.basis.jacobian(flat).reshape(x.shape[:-1] + (-1, x.shape[-1]))
        grad_v = np.einsum("...pk,...p->...k", jac, np.asarray(self.weights))
        gtv = np.einsum("...km,...k->...m", self.channel(x), grad_v)
        return -0.5 * gtv / np.asarray(self.r_diag)


def equilibrium_policy(x, value_weights, basis, channel, r_diag):
    """Equilibrium input of one player at a single state ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    grad_v = eval_feature_jacobian(basis, x).T @ np.asarray(value_weights, dtype=float)
    return -0.5 * (channel(x).T @ grad_v) / np.asarray(r_diag, dtype=float)


def _is_hurwitz(M):
    return np.max(np.linalg.eigvals(M).real) < 0


def _gain(B, R, P):
    return np.linalg.solve(R, B.T @ P)


def coupled_riccati_residual(game, P1, P2):
    """Frobenius norms of both coupled-Riccati residual matrices.

    The residual of player ``i`` is
    ``A_cl^T P_i + P_i A_cl + Q_i + K_i^T R_i K_i`` with
    ``A_cl = A - B_1 K_1 - B_2 K_2`` and ``K_i = R_i^{-1} B_i^T P_i``.
    """
    P = (np.asarray(P1, dtype=float), np.asarray(P2, dtype=float))
    K = [_gain(B, R, Pi) for B, R, Pi in zip(game.B, game.R, P)]
    A_cl = game.A - game.B[0] @ K[0] - game.B[1] @ K[1]
    out = []
    for Pi, Ki, Qi, Ri in zip(P, K, game.Q, game.R):
        res = A_cl.T @ Pi + Pi @ A_cl + Qi + Ki.T @ Ri @ Ki
        out.append(float(np.linalg.norm(res, "fro")))
    return tuple(out)


def _initial_riccati(A, B, Q, R):
    if not np.any(B):
        return np.zeros_like(A)
    try:
        return sla.solve_continuous_are(A, B, Q, R)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise StabilizationError(f"single-player Riccati initialisation failed: {exc}") from exc


def solve_lq_nash(game: LqGame, tol=1e-9, max_iter=500):
    """Feedback Nash equilibrium of an LQ game by Lyapunov iteration.

    Starts from each player's single-player Riccati solution and then
    alternates per-player Lyapunov solves: with the other player's gain
    frozen, player ``i`` solves
    ``A_cl^T P_i' + P_i' A_cl = -(Q_i + P_i S_i P_i)``
    where ``S_i = B_i R_i^{-1} B_i^T`` and ``A_cl`` is built from the
    current iterates. Stops when both residual norms are below ``tol``.

    Raises
    ------
    StabilizationError
        An iterate produces a non-Hurwitz closed loop.
    ConvergenceError
        ``max_iter`` reached; carries the residual trace.
    """
    A = game.A
    S = [B @ np.linalg.solve(R, B.T) for B, R in zip(game.B, game.R)]
    P = [_initial_riccati(A, B, Q, R) for B, Q, R in zip(game.B, game.Q, game.R)]
    trace = [max(coupled_riccati_residual(game, *P))]
    it = 0
    while trace[-1] > tol:
        if it >= max_iter:
            raise ConvergenceError(
                f"Lyapunov iteration did not converge in {max_iter} iterations "
                f"(residual {trace[-1]:.3e})", trace[-1], trace)
        for i in range(2):
            A_cl = A - S[0] @ P[0] - S[1] @ P[1]
            if not _is_hurwitz(A_cl):
                raise StabilizationError(f"closed loop not Hurwitz at iteration {it}")
            Pi = sla.solve_continuous_lyapunov(A_cl.T, -(game.Q[i] + P[i] @ S[i] @ P[i]))
            P[i] = 0.5 * (Pi + Pi.T)
        it += 1
        trace.append(max(coupled_riccati_residual(game, *P)))
    K = tuple(_gain(B, R, Pi) for B, R, Pi in zip(game.B, game.R, P))
    A_cl = A - game.B[0] @ K[0] - game.B[1] @ K[1]
    if not _is_hurwitz(A_cl):
        raise StabilizationError("converged solution is not stabilising")
    return LqEquilibrium(P=tuple(P), K=K, residual=coupled_riccati_residual(game, *P),
                         iterations=it, trace=tuple(trace), closed_loop=A_cl)


def lq_cost_matrix(game, K1, K2, player):
    """Cost matrix ``P`` with ``J_i(x0) = x0^T P x0`` under fixed gains.

    Solves ``A_cl^T P + P A_cl + Q_i + K_i^T R_i K_i = 0``; returns ``inf``
    filled matrix if the gains do not stabilise.
    """
    K = (np.asarray(K1, dtype=float), np.asarray(K2, dtype=float))
    A_cl = game.A - game.B[0] @ K[0] - game.B[1] @ K[1]
    if not _is_hurwitz(A_cl):
        return np.full_like(game.A, np.inf)
    i = player - 1
    rhs = game.Q[i] + K[i].T @ game.R[i] @ K[i]
    return sla.solve_continuous_lyapunov(A_cl.T, -rhs)


def default_grid(game, n_points=201):
    """Uniform collocation grid over the game's domain box (per coordinate)."""
    game = as_game(game)
    lo, hi = game.domain
    axes = [np.linspace(a, b, n_points) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _hjb_terms(game, basis, grid, jac, weights):
    """Policies, closed-loop drift and running costs on the grid."""
    costs = game.true_costs
    mus = []
    for i, w in enumerate(weights):
        grad_v = np.einsum("npk,p->nk", jac, w)
        g = game.input_channels[i](grid)
        mus.append(-0.5 * np.einsum("nkm,nk->nm", g, grad_v) / costs[i].input_cost_diag)
    drift = game.drift(grid).copy()
    for i, mu in enumerate(mus):
        drift += np.einsum("nkm,nm->nk", game.input_channels[i](grid), mu)
    running = [costs[i].state_cost(grid) + mus[i] ** 2 @ costs[i].input_cost_diag
               for i in range(2)]
    return mus, drift, running


def hjb_residuals(game, basis, weights, grid):
    """Pointwise coupled-HJB residuals of both players at ``grid``."""
    game = as_game(game)
    jac = basis.jacobian(grid)
    _, drift, running = _hjb_terms(game, basis, grid, jac, weights)
    return [running[i] + np.einsum("npk,p,nk->n", jac, w, drift)
            for i, w in enumerate(weights)]


def solve_nonlinear_hjb(game, basis, grid=None, tol=1e-6, max_iter=200,
                        init_weights=None, equilibrium=None, cond_limit=1e12):
    """Galerkin policy iteration for the coupled HJB equations.

    Each iteration evaluates the current policy pair by solving, for each
    player, the least-squares system
    ``Q_i + mu_i^T R_i mu_i + W_i . (grad phi (f + g1 mu1 + g2 mu2)) = 0``
    over the collocation grid, subject to ``grad V_i(x_eq) = 0`` at the
    equilibrium state ``x_eq`` (origin by default). Both policies are then
    updated from the new weights. Iteration stops when the largest weight
    change is below ``tol``.

    The constraint is imposed by restricting the weights to the null space
    of ``grad phi(x_eq)^T``; without it the least-squares fit leaves the
    value slope at the equilibrium free, because every residual row
    vanishes there.

    ``init_weights`` defaults to zero (both players passive), which requires
    a stable drift.
    """
    game = as_game(game)
    if game.true_costs is None:
        raise ValueError("forward HJB solve needs the players' true costs")
    grid = default_grid(game) if grid is None else np.asarray(grid, dtype=float).reshape(-1, game.state_dim)
    x_eq = np.zeros(game.state_dim) if equilibrium is None else np.asarray(equilibrium, dtype=float)
    jac = basis.jacobian(grid)
    null = sla.null_space(basis.jacobian(x_eq[None, :])[0].T)
    p = basis.output_dim
    if init_weights is None:
        weights = [np.zeros(p), np.zeros(p)]
    else:
        weights = [np.asarray(w, dtype=float).copy() for w in init_weights]
    trace = []
    for it in range(1, max_iter + 1):
        mus, drift, running = _hjb_terms(game, basis, grid, jac, weights)
        M = np.einsum("npk,nk->np", jac, drift) @ null
        cond = np.linalg.cond(M)
        if not np.isfinite(cond) or cond > cond_limit:
            raise ConditioningError(f"Galerkin system condition {cond:.3e} exceeds {cond_limit:.0e}")
        new = []
        for i in range(2):
            z, *_ = np.linalg.lstsq(M, -running[i], rcond=None)
            new.append(null @ z)
        change = max(np.max(np.abs(n - w)) for n, w in zip(new, weights))
        trace.append(float(change))
        weights = new
        if change <= tol:
            break
    else:
        raise ConvergenceError(
            f"policy iteration did not converge in {max_iter} iterations "
            f"(weight change {trace[-1]:.3e})", trace[-1], trace)
    _, _, running = _hjb_terms(game, basis, grid, jac, weights)
    res = hjb_residuals(game, basis, weights, grid)
    return NlEquilibrium(
        value_weights=tuple(weights),
        basis=basis,
        hjb_residual_sup=tuple(float(np.max(np.abs(r))) for r in res),
        running_cost_scale=tuple(float(np.max(np.abs(c))) for c in running),
        iterations=it,
        trace=tuple(trace),
        grid=grid,
    )
