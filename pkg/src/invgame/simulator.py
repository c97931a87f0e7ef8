"""Closed-loop simulation, task schedules and measurement sampling."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_vector, check_positive
from .exceptions import DivergenceError
from .game import as_game, closed_loop_rhs

DIVERGENCE_NORM = 1e6


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled closed-loop trajectory.

    ``states`` are physical coordinates. When the trajectory was produced by
    a target schedule, ``offsets`` holds the active target at each sample so
    that ``errors = states - offsets`` are the coordinates in which the game
    dynamics and costs are written.
    """

    times: np.ndarray
    states: np.ndarray
    inputs: tuple
    dt: float
    offsets: np.ndarray = None
    segment_starts: tuple = (0,)

    def __post_init__(self):
        n = len(self.times)
        if self.states.shape[0] != n or any(u.shape[0] != n for u in self.inputs):
            raise ValueError("times, states and inputs must have equal length")
        if self.offsets is None:
            object.__setattr__(self, "offsets", np.zeros_like(self.states))

    def __len__(self):
        return len(self.times)

    @property
    def errors(self):
        return self.states - self.offsets

    def segments(self):
        """Yield index slices of the schedule segments."""
        bounds = list(self.segment_starts) + [len(self)]
        for a, b in zip(bounds[:-1], bounds[1:]):
            yield slice(a, b)

    def to_csv(self, path, header_lines=()):
        """Write ``t, x_1.., u_1_1.., u_2_1..`` rows; ``header_lines`` become ``#`` comments."""
        n_x = self.states.shape[1]
        cols = ["t"] + [f"x{j + 1}" for j in range(n_x)]
        for i, u in enumerate(self.inputs, start=1):
            cols += [f"u{i}_{j + 1}" for j in range(u.shape[1])]
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            writer.writerow(cols)
            data = np.column_stack([self.times, self.states, *self.inputs])
            for row in data:
                writer.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True)
class MeasurementSample:
    """One measurement ``(x, xdot, u1, u2)`` taken at time ``t``."""

    x: np.ndarray
    xdot: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        for name in ("x", "xdot", "u1", "u2"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"measurement field {name} is not finite")


def rk4_rollout(rhs, x0, n_steps, dt, divergence_norm=DIVERGENCE_NORM):
    """Fixed-step RK4 on a batch of initial states.

    ``rhs(x)`` must return ``(xdot, u1, u2)`` for states of shape
    ``(batch, n_x)``; inputs are re-evaluated at every stage and recorded at
    the sample times. A trajectory whose norm exceeds ``divergence_norm`` (or
    becomes non-finite) is frozen as NaN and flagged.

    Returns
    -------
    states : ndarray, shape (batch, n_steps + 1, n_x)
    inputs : tuple of ndarray, each (batch, n_steps + 1, n_u)
    diverged : ndarray of bool, shape (batch,)
    """
    x = np.array(x0, dtype=float)
    batch, n_x = x.shape
    states = np.empty((batch, n_steps + 1, n_x))
    diverged = np.zeros(batch, dtype=bool)
    _, u1, u2 = rhs(x)
    inputs = (np.empty((batch, n_steps + 1, u1.shape[-1])),
              np.empty((batch, n_steps + 1, u2.shape[-1])))
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps + 1):
            states[:, k] = x
            k1, u1, u2 = rhs(x)
            inputs[0][:, k] = u1
            inputs[1][:, k] = u2
            if k == n_steps:
                break
            k2 = rhs(x + 0.5 * dt * k1)[0]
            k3 = rhs(x + 0.5 * dt * k2)[0]
            k4 = rhs(x + dt * k3)[0]
            x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            bad = ~np.isfinite(x).all(axis=1) | (np.linalg.norm(x, axis=1) > divergence_norm)
            if bad.any():
                diverged |= bad
                x[bad] = 0.0
                states[bad, k + 1:] = np.nan
    for arr in (inputs[0], inputs[1]):
        arr[diverged] = np.nan
    states[diverged] = np.nan
    return states, inputs, diverged


def _n_steps(duration, dt):
    check_positive(dt, "dt")
    n = int(round(duration / dt))
    if n < 1 or abs(n * dt - duration) > 1e-9 * max(1.0, duration):
        raise ValueError(f"duration {duration} must be a positive multiple of dt {dt}")
    return n


def integrate_closed_loop(game, policy1, policy2, x0, duration, dt):
    """Simulate one closed-loop trajectory with fixed-step RK4.

    Raises
    ------
    DivergenceError
        The state norm exceeds ``1e6``.
    """
    game = as_game(game)
    x0 = as_vector(x0, game.state_dim, "x0")
    n = _n_steps(duration, dt)
    states, inputs, diverged = rk4_rollout(closed_loop_rhs(game, policy1, policy2), x0[None, :], n, dt)
    if diverged[0]:
        raise DivergenceError(f"trajectory from {x0} diverged")
    return Trajectory(times=dt * np.arange(n + 1), states=states[0],
                      inputs=(inputs[0][0], inputs[1][0]), dt=dt)


def _concatenate(pieces, dt):
    """Join segment trajectories, dropping each segment's terminal sample but the last."""
    times, states, u1, u2, offsets, starts = [], [], [], [], [], []
    t0, count = 0.0, 0
    for k, (traj, offset) in enumerate(pieces):
        keep = slice(None) if k == len(pieces) - 1 else slice(0, -1)
        n = len(traj.times[keep])
        starts.append(count)
        times.append(t0 + traj.times[keep])
        states.append(traj.states[keep] + offset)
        offsets.append(np.broadcast_to(offset, traj.states[keep].shape))
        u1.append(traj.inputs[0][keep])
        u2.append(traj.inputs[1][keep])
        t0 += traj.times[-1]
        count += n
    return Trajectory(
        times=np.concatenate(times), states=np.concatenate(states),
        inputs=(np.concatenate(u1), np.concatenate(u2)), dt=dt,
        offsets=np.concatenate(offsets), segment_starts=tuple(starts),
    )


def run_target_schedule(game, policies, x0, targets, segment_durations, dt):
    """Regulate successively towards each target.

    Segment ``k`` simulates the error ``e = x - target_k`` from the previous
    segment's terminal physical state, then maps back to physical
    coordinates. The terminal sample of a segment is not repeated as the
    first sample of the next, so ``N`` segments of ``n`` steps give
    ``N * n + 1`` samples.
    """
    game = as_game(game)
    if len(targets) != len(segment_durations):
        raise ValueError("targets and segment_durations must have equal length")
    x = as_vector(x0, game.state_dim, "x0")
    pieces = []
    for target, duration in zip(targets, segment_durations):
        target = as_vector(target, game.state_dim, "target")
        traj = integrate_closed_loop(game, *policies, x - target, duration, dt)
        pieces.append((traj, target))
        x = traj.states[-1] + target
    return _concatenate(pieces, dt)


def run_episode_schedule(game, policies, initial_states, durations, dt):
    """Independent regulation episodes, each restarted from its own state.

    Episodes are concatenated on one time axis with the same boundary rule
    as :func:`run_target_schedule`.
    """
    game = as_game(game)
    if len(initial_states) != len(durations):
        raise ValueError("initial_states and durations must have equal length")
    zero = np.zeros(game.state_dim)
    pieces = [(integrate_closed_loop(game, *policies, x0, d, dt), zero)
              for x0, d in zip(initial_states, durations)]
    return _concatenate(pieces, dt)


def moving_average(values, window=5):
    """Centred moving average along axis 0 with symmetric shrinking at the ends.

    Shrinking the window symmetrically keeps the filter exact for signals
    that are linear in time.
    """
    values = np.asarray(values, dtype=float)
    half = window // 2
    n = len(values)
    out = np.empty_like(values)
    for k in range(n):
        h = min(half, k, n - 1 - k)
        out[k] = values[k - h:k + h + 1].mean(axis=0)
    return out


def finite_difference(values, dt, filtered=True):
    """Second-order differences (central inside, one-sided at the ends)."""
    values = np.asarray(values, dtype=float)
    if len(values) < 3:
        raise ValueError("finite differences need at least 3 samples")
    deriv = np.gradient(values, dt, axis=0, edge_order=2)
    return moving_average(deriv) if filtered else deriv


def sample_dataset(traj, game, derivative_mode="exact_dynamics"):
    """Turn a trajectory into measurements in the game's (error) coordinates.

    Parameters
    ----------
    derivative_mode : {"exact_dynamics", "finite_difference"}
        ``exact_dynamics`` evaluates ``f + g1 u1 + g2 u2`` at each sample;
        ``finite_difference`` differentiates each schedule segment
        separately and applies a 5-point moving average.
    """
    game = as_game(game)
    x = traj.errors
    u1, u2 = traj.inputs
    if derivative_mode == "exact_dynamics":
        g1, g2 = (g(x) for g in game.input_channels)
        xdot = (game.drift(x) + np.einsum("nij,nj->ni", g1, u1)
                + np.einsum("nij,nj->ni", g2, u2))
    elif derivative_mode == "finite_difference":
        xdot = np.empty_like(x)
        for seg in traj.segments():
            xdot[seg] = finite_difference(x[seg], traj.dt)
    else:
        raise ValueError(f"unknown derivative_mode {derivative_mode!r}")
    return [MeasurementSample(x[k], xdot[k], u1[k], u2[k], float(traj.times[k]))
            for k in range(len(traj))]


def measurements_to_array(samples):
    """Stack measurements into rows ``[x, xdot, u1, u2]``."""
    return np.array([np.concatenate([s.x, s.xdot, s.u1, s.u2]) for s in samples])


def array_to_measurements(X, state_dim, input_dims, times=None):
    """Inverse of :func:`measurements_to_array`."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, (m1, m2) = state_dim, input_dims
    if X.shape[1] != 2 * n + m1 + m2:
        raise ValueError(f"measurement rows need {2 * n + m1 + m2} columns, got {X.shape[1]}")
    times = np.zeros(len(X)) if times is None else np.asarray(times, dtype=float)
    return [MeasurementSample(r[:n], r[n:2 * n], r[2 * n:2 * n + m1], r[2 * n + m1:], float(t))
            for r, t in zip(X, times)]
