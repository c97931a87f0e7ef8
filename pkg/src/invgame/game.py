"""Two-player differential games and the two built-in benchmark instances.

All maps on a :class:`GameDefinition` are vectorised: ``drift`` takes an
array of shape ``(..., n_x)`` and returns the same shape, ``input_channels[i]``
returns ``(..., n_x, n_{u_i})``, and ``PlayerCost.state_cost`` returns ``(...)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Callable, Optional

import numpy as np

from ._validation import as_square, as_vector
from .exceptions import DimensionError


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PlayerCost:
    """Running cost ``Q_i(x) + u^T diag(r) u`` of one player.

    ``state_weights`` is set when the state cost is diagonal-quadratic,
    ``Q_i(x) = sum_j q_j x_j**2``; both benchmarks are of this form and the
    prior builders rely on it to resample costs.
    """

    state_cost: Callable[[np.ndarray], np.ndarray]
    input_cost_diag: np.ndarray
    state_weights: Optional[np.ndarray] = None

    def __post_init__(self):
        r = _frozen(np.atleast_1d(self.input_cost_diag))
        if np.any(r <= 0):
            raise ValueError("input cost diagonal must be strictly positive")
        object.__setattr__(self, "input_cost_diag", r)
        if self.state_weights is not None:
            object.__setattr__(self, "state_weights",
                               _frozen(np.atleast_1d(self.state_weights)))

    @classmethod
    def diagonal(cls, q_diag, r_diag):
        q = _frozen(np.atleast_1d(q_diag))

        def state_cost(x, q=q):
            return np.asarray(x) ** 2 @ q

        return cls(state_cost=state_cost, input_cost_diag=r_diag, state_weights=q)

    def running_cost(self, x, u):
        u = np.asarray(u, dtype=float)
        return self.state_cost(x) + (u ** 2) @ self.input_cost_diag


@dataclass(frozen=True)
class GameDefinition:
    """Input-affine two-player game ``xdot = f(x) + g1(x) u1 + g2(x) u2``."""

    state_dim: int
    input_dims: tuple
    drift: Callable[[np.ndarray], np.ndarray]
    input_channels: tuple
    true_costs: Optional[tuple] = None
    domain: tuple = None
    name: str = "custom"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.state_dim < 1 or len(self.input_dims) != 2 or min(self.input_dims) < 1:
            raise ValueError("need state_dim >= 1 and two positive input dimensions")
        if len(self.input_channels) != 2:
            raise ValueError("exactly two input channels are required")
        if self.true_costs is not None and len(self.true_costs) != 2:
            raise ValueError("true_costs must hold one PlayerCost per player")
        object.__setattr__(self, "input_dims", tuple(int(m) for m in self.input_dims))
        if self.domain is None:
            lo = np.full(self.state_dim, -np.inf)
            object.__setattr__(self, "domain", (_frozen(lo), _frozen(-lo)))
        else:
            lo, hi = (np.broadcast_to(np.asarray(b, dtype=float), (self.state_dim,))
                      for b in self.domain)
            if np.any(lo >= hi):
                raise ValueError("domain box must have lo < hi in every coordinate")
            object.__setattr__(self, "domain", (_frozen(lo), _frozen(hi)))
        object.__setattr__(self, "metadata", MappingProxyType(dict(self.metadata)))

    def channel(self, player, x):
        """Evaluate ``g_i`` (player index 1 or 2) at ``x``."""
        return self.input_channels[_player_index(player)](x)

    def with_costs(self, costs):
        return replace(self, true_costs=tuple(costs), metadata=dict(self.metadata))

    def __deepcopy__(self, memo):
        # immutable: read-only arrays and metadata, so copies may share storage
        return self


@dataclass(frozen=True)
class LqGame:
    """Linear-quadratic game data ``(A, B_i, Q_i, R_i)`` with diagonal ``R_i``."""

    A: np.ndarray
    B: tuple
    Q: tuple
    R: tuple
    domain: tuple = None
    name: str = "lq"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        A = as_square(self.A, name="A")
        n = A.shape[0]
        B = tuple(np.atleast_2d(np.asarray(b, dtype=float)) for b in self.B)
        if len(B) != 2 or any(b.shape[0] != n for b in B):
            raise DimensionError(f"need two input matrices with {n} rows")
        Q = tuple(as_square(q, n, name="Q") for q in self.Q)
        R = tuple(as_square(r, b.shape[1], name="R") for r, b in zip(self.R, B))
        for q in Q:
            if not np.allclose(q, q.T) or np.linalg.eigvalsh(q).min() < -1e-12:
                raise ValueError("Q_i must be symmetric positive semidefinite")
        for r in R:
            if np.any(r != np.diag(np.diag(r))) or np.any(np.diag(r) <= 0):
                raise ValueError("R_i must be diagonal with positive entries")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "B", tuple(_frozen(b) for b in B))
        object.__setattr__(self, "Q", tuple(_frozen(q) for q in Q))
        object.__setattr__(self, "R", tuple(_frozen(r) for r in R))
        object.__setattr__(self, "metadata", MappingProxyType(dict(self.metadata)))

    def __deepcopy__(self, memo):
        # immutable: read-only arrays and metadata, so copies may share storage
        return self

    @property
    def state_dim(self):
        return self.A.shape[0]

    @property
    def input_dims(self):
        return tuple(b.shape[1] for b in self.B)

    def to_game(self):
        """Return the equivalent :class:`GameDefinition` (``f = Ax``, ``g_i = B_i``)."""
        A = self.A

        def drift(x):
            return np.asarray(x, dtype=float) @ A.T

        def constant_channel(B):
            def g(x):
                x = np.asarray(x, dtype=float)
                return np.broadcast_to(B, x.shape[:-1] + B.shape)
            return g

        costs = []
        for q, r in zip(self.Q, self.R):
            def state_cost(x, q=q):
                x = np.asarray(x, dtype=float)
                return np.einsum("...i,ij,...j->...", x, q, x)
            diag = np.diag(q) if np.allclose(q, np.diag(np.diag(q))) else None
            costs.append(PlayerCost(state_cost, np.diag(r), diag))
        return GameDefinition(
            state_dim=self.state_dim,
            input_dims=self.input_dims,
            drift=drift,
            input_channels=tuple(constant_channel(b) for b in self.B),
            true_costs=tuple(costs),
            domain=self.domain,
            name=self.name,
            metadata=dict(self.metadata),
        )

    def with_cost_diagonals(self, q_diags, r_diags):
        """Copy of the game with diagonal ``Q_i``/``R_i`` replaced."""
        return replace(
            self,
            Q=tuple(np.diag(np.asarray(q, dtype=float)) for q in q_diags),
            R=tuple(np.diag(np.asarray(r, dtype=float)) for r in r_diags),
            metadata=dict(self.metadata),
        )


def _player_index(player):
    if player not in (1, 2):
        raise ValueError(f"player must be 1 or 2, got {player!r}")
    return player - 1


def lq_benchmark_game():
    """Four-state, two-input-per-player LQ game with its nominal costs.

    ``metadata`` carries the prior variances of the diagonal cost entries
    (``"Q_var"``, ``"R_var"``; zero variance marks a known entry) and the
    nominal initial state and target schedule.
    """
    A = [[0, 1, -1, 0],
         [1, 0, 2, 1],
         [0, -2, 0, 1],
         [0, 1, 0, -1]]
    B1 = 0.5 * np.array([[0, 1], [0, 0], [0, 0], [1, 0]])
    B2 = 0.5 * np.array([[0, 0], [0, 1], [1, 0], [0, 0]])
    q1, q2 = [1, 2 / 5, 3, 1], [1, 2 / 3, 1, 2]
    r1, r2 = [1, 1], [1, 0.5]
    metadata = {
        "Q_var": ((1, 0.16, 9, 1), (1, 4 / 9, 1, 4)),
        "R_var": ((0, 1), (0, 0.25)),
        "x0": (3, -4, 2, 1.5),
        "targets": ((0, 0, 0, 0), (1, -2, 2, 1), (-2, 1, 3, -2)),
    }
    return LqGame(
        A=np.array(A, dtype=float),
        B=(B1, B2),
        Q=(np.diag(q1), np.diag(q2)),
        R=(np.diag(r1), np.diag(r2)),
        domain=(-6.0, 6.0),
        name="lq_benchmark",
        metadata=metadata,
    )


NL_B0 = 2.0
NL_BETA = 0.3


def _inertia(x):
    return NL_B0 * (1.0 + NL_BETA * x ** 2)


def _nl_drift(x):
    x = np.asarray(x, dtype=float)
    return (-0.5 * x - 0.3 * x ** 3) / _inertia(x)


def _nl_g1(x):
    x = np.asarray(x, dtype=float)
    return ((1.2 + 0.8 * np.sin(1.5 * x)) / _inertia(x))[..., None]


def _nl_g2(x):
    x = np.asarray(x, dtype=float)
    return ((1.0 - 0.7 * np.sin(1.5 * x + np.pi / 3)) / _inertia(x))[..., None]


def nonlinear_benchmark_game(q=(1.0, 0.3)):
    """Scalar shared-control game with state-dependent inertia.

    Both players pay ``q_i x**2 + u_i**2``; ``q`` defaults to the nominal
    state-cost weights. ``metadata["Q_var"]`` holds their prior variances.
    """
    costs = tuple(PlayerCost.diagonal([qi], [1.0]) for qi in q)
    return GameDefinition(
        state_dim=1,
        input_dims=(1, 1),
        drift=_nl_drift,
        input_channels=(_nl_g1, _nl_g2),
        true_costs=costs,
        domain=(-5.0, 5.0),
        name="nonlinear_benchmark",
        metadata={
            "Q_mean": (1.0, 0.3),
            "Q_var": ((0.5,), (0.18,)),
            "R_var": ((0.0,), (0.0,)),
            "initial_states": ((4.0,), (-4.0,)),
        },
    )


def as_game(game):
    """Accept either a :class:`GameDefinition` or an :class:`LqGame`."""
    return game.to_game() if isinstance(game, LqGame) else game


def eval_dynamics(game, x, u1, u2):
    """Return ``f(x) + g1(x) u1 + g2(x) u2`` for a single state."""
    game = as_game(game)
    x = as_vector(x, game.state_dim, "x")
    u1 = as_vector(u1, game.input_dims[0], "u1")
    u2 = as_vector(u2, game.input_dims[1], "u2")
    g1, g2 = (g(x) for g in game.input_channels)
    return game.drift(x) + g1 @ u1 + g2 @ u2


def closed_loop_rhs(game, policy1, policy2):
    """Vectorised right-hand side ``x -> f + g1 mu1(x) + g2 mu2(x)``.

    Returns a function of ``(..., n_x)`` states giving ``(xdot, u1, u2)``.
    """
    game = as_game(game)
    g1, g2 = game.input_channels

    def rhs(x):
        u1 = policy1(x)
        u2 = policy2(x)
        xdot = (game.drift(x)
                + np.einsum("...ij,...j->...i", g1(x), u1)
                + np.einsum("...ij,...j->...i", g2(x), u2))
        return xdot, u1, u2

    return rhs
