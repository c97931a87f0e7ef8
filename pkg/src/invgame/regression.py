"""Linear-in-parameters regression pairs from single measurements.

For player ``i`` with value features ``phi_V`` (``p`` of them), state-cost
features ``phi_Q`` (``s``) and a diagonal input cost over ``m`` channels,
the reduced weight vector is ``[W_V, W_Q, r_2, ..., r_m]``; ``r_1`` is fixed
to remove the positive scale ambiguity of the inverse problem.

Each measurement yields ``1 + m`` rows:

* row 0, HJB stationarity:
  ``W_V . (grad phi_V xdot) + W_Q . phi_Q + sum_{j>=2} r_j u_j^2 = -r_1 u_1^2``
* rows 1..m, feedback optimality multiplied through by ``2R``:
  ``g^T grad phi_V^T W_V + 2 diag(r) u = 0`` with the ``r_1`` term moved
  to the target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_positive


@dataclass(frozen=True)
class ParamLayout:
    """Block sizes of the reduced weight vector."""

    p: int
    s: int
    m: int
    fixed_r11: float = 1.0

    def __post_init__(self):
        if min(self.p, self.s, self.m) < 1:
            raise ValueError("p, s and m must be positive")
        check_positive(self.fixed_r11, "fixed_r11")

    @property
    def dim(self):
        return self.p + self.s + self.m - 1

    @property
    def value(self):
        return slice(0, self.p)

    @property
    def state_cost(self):
        return slice(self.p, self.p + self.s)

    @property
    def input_cost(self):
        return slice(self.p + self.s, self.dim)

    def input_cost_diag(self, weights):
        """Full ``diag(R)`` from reduced weights (leading axes allowed)."""
        w = np.asarray(weights, dtype=float)
        fixed = np.full(w.shape[:-1] + (1,), self.fixed_r11)
        return np.concatenate([fixed, w[..., self.input_cost]], axis=-1)

    def pack(self, value_weights, state_weights, r_diag):
        """Assemble reduced weights; ``r_diag[0]`` must equal ``fixed_r11``."""
        r_diag = np.atleast_1d(np.asarray(r_diag, dtype=float))
        if not np.isclose(r_diag[0], self.fixed_r11):
            raise ValueError(f"r_diag[0]={r_diag[0]} differs from fixed_r11={self.fixed_r11}")
        return np.concatenate([np.asarray(value_weights, dtype=float),
                               np.atleast_1d(np.asarray(state_weights, dtype=float)),
                               r_diag[1:]])

    def to_dict(self):
        return {"p": self.p, "s": self.s, "m": self.m, "fixed_r11": self.fixed_r11}


@dataclass(frozen=True)
class RegressionSample:
    """One ``(Phi, y)`` pair, ``Phi`` of shape ``(1 + m, layout.dim)``."""

    Phi: np.ndarray
    y: np.ndarray
    t: float = 0.0


def _player_input(u1, u2, player):
    if player not in (1, 2):
        raise ValueError(f"player must be 1 or 2, got {player!r}")
    return u1 if player == 1 else u2


def build_regression_batch(X, Xdot, U, phiV, phiQ, channel, layout):
    """Vectorised regression pairs for ``N`` measurements of one player.

    Parameters
    ----------
    X, Xdot : ndarray, shape (N, n_x)
    U : ndarray, shape (N, m)
        The identified player's inputs.
    channel : callable
        ``g_i``, mapping ``(N, n_x)`` states to ``(N, n_x, m)``.

    Returns
    -------
    Phi : ndarray, shape (N, 1 + m, dim)
    Y : ndarray, shape (N, 1 + m)
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Xdot = np.atleast_2d(np.asarray(Xdot, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    N, m = U.shape
    if m != layout.m:
        raise ValueError(f"input dimension {m} does not match layout m={layout.m}")
    jac = phiV.jacobian(X)
    feats_q = phiQ.transform(X)
    if jac.shape[1] != layout.p or feats_q.shape[1] != layout.s:
        raise ValueError("feature dimensions do not match the layout")
    Phi = np.zeros((N, 1 + m, layout.dim))
    Y = np.zeros((N, 1 + m))
    r11 = layout.fixed_r11
    Phi[:, 0, layout.value] = np.einsum("npk,nk->np", jac, Xdot)
    Phi[:, 0, layout.state_cost] = feats_q
    Phi[:, 0, layout.input_cost] = U[:, 1:] ** 2
    Y[:, 0] = -r11 * U[:, 0] ** 2
    Phi[:, 1:, layout.value] = np.einsum("nkm,npk->nmp", channel(X), jac)
    rows = np.arange(2, 1 + m)
    cols = layout.p + layout.s + np.arange(m - 1)
    Phi[:, rows, cols] = 2.0 * U[:, 1:]
    Y[:, 1] = -2.0 * r11 * U[:, 0]
    return Phi, Y


def build_regression_sample(sample, player, phiV, phiQ, channel, layout):
    """Regression pair of one measurement for the given player (1 or 2)."""
    u = _player_input(sample.u1, sample.u2, player)
    Phi, Y = build_regression_batch(sample.x[None, :], sample.xdot[None, :], np.atleast_1d(u)[None, :],
                                    phiV, phiQ, channel, layout)
    return RegressionSample(Phi=Phi[0], y=Y[0], t=sample.t)


def build_regression_samples(samples, player, phiV, phiQ, channel, layout):
    """Regression pairs for a sequence of measurements (batched internally)."""
    samples = list(samples)
    if not samples:
        return []
    X = np.array([s.x for s in samples])
    Xdot = np.array([s.xdot for s in samples])
    U = np.array([_player_input(s.u1, s.u2, player) for s in samples])
    Phi, Y = build_regression_batch(X, Xdot, U, phiV, phiQ, channel, layout)
    return [RegressionSample(Phi=P, y=y, t=s.t) for P, y, s in zip(Phi, Y, samples)]


def hamiltonian(sample, player, weights, phiV, phiQ, layout):
    """Direct evaluation of ``Q + u^T R u + grad V . xdot`` under ``weights``."""
    u = np.atleast_1d(_player_input(sample.u1, sample.u2, player))
    w = np.asarray(weights, dtype=float)
    grad_v = phiV.jacobian(sample.x[None, :])[0].T @ w[layout.value]
    q = phiQ.transform(sample.x[None, :])[0] @ w[layout.state_cost]
    r = layout.input_cost_diag(w)
    return float(q + u @ (r * u) + grad_v @ sample.xdot)


def lq_reduced_weights(lq_game, equilibrium, player, phiV):
    """True reduced weights of an LQ player: ``vec(P_i)``, ``diag(Q_i)``, ``R_i[1:]``."""
    i = player - 1
    layout_r = np.diag(lq_game.R[i])
    return np.concatenate([phiV.weights_from_symmetric(equilibrium.P[i]),
                           np.diag(lq_game.Q[i]), layout_r[1:]])
