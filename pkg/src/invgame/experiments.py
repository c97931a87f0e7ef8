"""Experiment configuration and the end-to-end pipelines behind the CLI.

A configuration is a nested mapping (usually YAML). Missing entries fall
back to :data:`DEFAULTS` and, where the game carries them, to the game's
metadata (initial state, targets, prior variances). The resolved mapping is
hashed so every output can be traced back to the exact settings used.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .bayes import (GaussianPosterior, NoiseModel, build_lq_prior, build_nonlinear_prior,
                    draw_costs, recursive_update)
from .equilibrium import default_grid, solve_lq_nash, solve_nonlinear_hjb
from .exceptions import ConditioningError, ConfigError
from .features import FEATURE_KINDS, make_feature_map
from .forecast import credible_band, forecast_envelope, rollout_ensemble
from .game import LqGame, PlayerCost, as_game, lq_benchmark_game, nonlinear_benchmark_game
from .regression import ParamLayout, build_regression_samples, lq_reduced_weights
from .simulator import integrate_closed_loop, run_episode_schedule, run_target_schedule, sample_dataset

BUILTIN_GAMES = {
    "lq_benchmark": lq_benchmark_game,
    "nonlinear_benchmark": nonlinear_benchmark_game,
}

DERIVATIVE_MODES = ("exact_dynamics", "finite_difference")
COORDINATE_SETS = ("states", "inputs", "combined")
DEFAULT_NOISE_STD = {"exact_dynamics": 1e-3, "finite_difference": 1e-2}

DEFAULTS = {
    "name": None,
    "game": None,
    "features": {"value": None, "state": {"kind": "quadratic_diagonal"}},
    "solver": {"tol": None, "max_iter": None, "grid_points": 201},
    "truth": {"seed": None},
    "prior": {"n_mc": 200, "seed": 0, "q_var": None, "r_var": None},
    "simulation": {
        "x0": None, "targets": None, "initial_states": None, "durations": None,
        "segment_duration": 4.0, "dt": 0.01, "derivative_mode": "exact_dynamics",
    },
    "estimator": {"players": [1], "noise_std": None, "budget": None},
    "snapshot": {"grid_points": 101, "visited": None, "inner": [-2.0, 2.0]},
    "forecast": None,
    "output": None,
}

FORECAST_DEFAULTS = {
    "samples": 30, "player": 1, "x0": None, "horizon": 6.0, "dt": 0.1, "n_mc": 10000,
    "level": 0.95, "beta": 0.01, "seed": 0, "coordinates": ["states", "inputs"],
    "max_exclusion": 0.1, "reference_epsilon": None,
}


# --------------------------------------------------------------------------
# loading and validation


def _merge(base, update):
    out = copy.deepcopy(base)
    for key, value in (update or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def bundled_config_path(name):
    """Path of a bundled experiment config (``lq_paper`` or ``nonlinear_paper``)."""
    return resources.files("invgame") / "experiments" / f"{name}.yaml"


def bundled_configs():
    root = resources.files("invgame") / "experiments"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def read_config_file(path):
    """Parse a YAML config file; a bare name refers to a bundled config."""
    p = Path(path)
    if not p.exists() and p.suffix == "" and str(path) in bundled_configs():
        p = bundled_config_path(str(path))
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"invalid YAML: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a mapping")
    return data


def apply_override(data, assignment):
    """Apply one ``dotted.key=value`` override; the value is parsed as YAML."""
    if "=" not in assignment:
        raise ConfigError("override", f"expected key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    parts = [k for k in key.strip().split(".") if k]
    if not parts:
        raise ConfigError("override", f"empty key in {assignment!r}")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(key, f"cannot parse override value {raw!r}") from exc
    node = data
    for part in parts[:-1]:
        if node.get(part) is None:
            node[part] = {}
        if not isinstance(node[part], dict):
            raise ConfigError(key, f"{part} is not a section")
        node = node[part]
    node[parts[-1]] = value
    return data


def _number(value, field, positive=False, nonneg=False, integer=False, fraction=False):
    if isinstance(value, bool):
        raise ConfigError(field, f"expected a number, got {value!r}")
    try:
        num = float(value)
    except (TypeError, ValueError):
        raise ConfigError(field, f"expected a number, got {value!r}") from None
    if not np.isfinite(num):
        raise ConfigError(field, "must be finite")
    if integer:
        if num != int(num):
            raise ConfigError(field, f"expected an integer, got {value!r}")
        num = int(num)
    if positive and num <= 0:
        raise ConfigError(field, f"must be positive, got {value!r}")
    if nonneg and num < 0:
        raise ConfigError(field, f"must be nonnegative, got {value!r}")
    if fraction and not 0 < num < 1:
        raise ConfigError(field, f"must lie strictly between 0 and 1, got {value!r}")
    return num


def _vector(value, field, length=None):
    if not isinstance(value, (list, tuple)):
        raise ConfigError(field, f"expected a list of numbers, got {value!r}")
    out = [_number(v, f"{field}[{k}]") for k, v in enumerate(value)]
    if length is not None and len(out) != length:
        raise ConfigError(field, f"expected {length} entries, got {len(out)}")
    return out


def _matrix(value, field, rows=None, cols=None):
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(field, "expected a nonempty list of rows")
    out = [_vector(r, f"{field}[{k}]", cols) for k, r in enumerate(value)]
    width = len(out[0])
    if any(len(r) != width for r in out):
        raise ConfigError(field, "rows have unequal length")
    if rows is not None and len(out) != rows:
        raise ConfigError(field, f"expected {rows} rows, got {len(out)}")
    return out


def _inline_lq_game(spec):
    kind = spec.get("kind", "lq")
    if kind != "lq":
        raise ConfigError("game.kind", f"only inline 'lq' games are supported, got {kind!r}")
    A = _matrix(spec.get("A"), "game.A")
    n = len(A)
    _matrix(A, "game.A", n, n)
    B, Q, R = [], [], []
    for name, out in (("B", B), ("Q", Q), ("R", R)):
        pair = spec.get(name)
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ConfigError(f"game.{name}", "expected one entry per player")
        for i, item in enumerate(pair):
            field = f"game.{name}[{i}]"
            if name == "B":
                out.append(_matrix(item, field, rows=n))
            elif isinstance(item, (list, tuple)) and item and not isinstance(item[0], (list, tuple)):
                out.append(np.diag(_vector(item, field)).tolist())
            else:
                out.append(_matrix(item, field))
    try:
        return LqGame(A=np.array(A), B=tuple(np.array(b) for b in B),
                      Q=tuple(np.array(q) for q in Q), R=tuple(np.array(r) for r in R),
                      domain=tuple(spec.get("domain", (-6.0, 6.0))), name=str(spec.get("name", "inline_lq")),
                      metadata={k: spec[k] for k in ("Q_var", "R_var", "x0", "targets") if k in spec})
    except ValueError as exc:
        raise ConfigError("game", str(exc)) from exc


def resolve_game(spec):
    """Nominal game named (or defined inline) by the ``game`` entry."""
    if spec is None:
        raise ConfigError("game", "missing; name a built-in game or define one inline")
    if isinstance(spec, str):
        if spec not in BUILTIN_GAMES:
            raise ConfigError("game", f"unknown game {spec!r}; expected one of {sorted(BUILTIN_GAMES)}")
        return BUILTIN_GAMES[spec]()
    if isinstance(spec, dict):
        return _inline_lq_game(spec)
    raise ConfigError("game", f"expected a name or a mapping, got {spec!r}")


def _check_feature_spec(spec, field):
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(field, "expected a mapping with a 'kind' entry")
    if spec["kind"] not in FEATURE_KINDS:
        raise ConfigError(f"{field}.kind", f"unknown kind {spec['kind']!r}; expected one of {sorted(FEATURE_KINDS)}")


def _default_value_features(game):
    if isinstance(game, LqGame):
        return {"kind": "quadratic_monomial"}
    lo, hi = game.domain
    if game.state_dim != 1:
        raise ConfigError("features.value", "no default value basis for a multi-dimensional nonlinear game")
    return {"kind": "legendre", "order": 10, "domain": [float(lo[0]), float(hi[0])],
            "include_constant": False, "anchor": [0.0]}


def validate(data):
    """Fill defaults, check every field and return the resolved mapping."""
    cfg = _merge(DEFAULTS, data)
    unknown = sorted(set(data) - set(DEFAULTS))
    if unknown:
        raise ConfigError(unknown[0], "unknown top-level entry")
    game = resolve_game(cfg["game"])
    meta = game.metadata
    n = game.state_dim
    is_lq = isinstance(game, LqGame)
    cfg["name"] = str(cfg["name"] or (cfg["game"] if isinstance(cfg["game"], str) else game.name))

    feats = cfg["features"]
    if feats["value"] is None:
        feats["value"] = _default_value_features(game)
    for key in ("value", "state"):
        _check_feature_spec(feats[key], f"features.{key}")
    if is_lq and feats["value"]["kind"] != "quadratic_monomial":
        raise ConfigError("features.value.kind", "LQ games need quadratic value features")

    solver = cfg["solver"]
    solver["tol"] = _number(solver["tol"] if solver["tol"] is not None else (1e-9 if is_lq else 1e-6),
                            "solver.tol", positive=True)
    solver["max_iter"] = _number(solver["max_iter"] if solver["max_iter"] is not None else (500 if is_lq else 200),
                                 "solver.max_iter", positive=True, integer=True)
    solver["grid_points"] = _number(solver["grid_points"], "solver.grid_points", positive=True, integer=True)

    truth = cfg["truth"]
    if not isinstance(truth, dict):
        raise ConfigError("truth", "expected a mapping")
    if truth["seed"] is not None:
        truth["seed"] = _number(truth["seed"], "truth.seed", nonneg=True, integer=True)

    prior = cfg["prior"]
    prior["n_mc"] = _number(prior["n_mc"], "prior.n_mc", integer=True)
    if prior["n_mc"] < 2:
        raise ConfigError("prior.n_mc", "must be at least 2")
    prior["seed"] = _number(prior["seed"], "prior.seed", nonneg=True, integer=True)
    q_var = prior["q_var"] if prior["q_var"] is not None else meta.get("Q_var")
    r_var = prior["r_var"] if prior["r_var"] is not None else meta.get("R_var")
    if q_var is None:
        raise ConfigError("prior.q_var", "required when the game carries no prior variances")
    if r_var is None:
        r_var = [[0.0] * m for m in game.input_dims]
    prior["q_var"] = [_vector(v, f"prior.q_var[{i}]") for i, v in enumerate(q_var)]
    prior["r_var"] = [_vector(v, f"prior.r_var[{i}]", game.input_dims[i]) for i, v in enumerate(r_var)]
    for i in range(2):
        if any(v < 0 for v in prior["q_var"][i] + prior["r_var"][i]):
            raise ConfigError(f"prior.q_var[{i}]", "variances must be nonnegative")
        if prior["r_var"][i][0] != 0:
            raise ConfigError(f"prior.r_var[{i}]", "the first input-cost entry is fixed; its variance must be 0")

    sim = cfg["simulation"]
    sim["dt"] = _number(sim["dt"], "simulation.dt", positive=True)
    if sim["derivative_mode"] not in DERIVATIVE_MODES:
        raise ConfigError("simulation.derivative_mode", f"expected one of {DERIVATIVE_MODES}")
    seg = _number(sim["segment_duration"], "simulation.segment_duration", positive=True)
    sim["segment_duration"] = seg
    if sim["initial_states"] is None and sim["targets"] is None and "initial_states" in meta:
        sim["initial_states"] = [list(s) for s in meta["initial_states"]]
    if sim["initial_states"] is not None:
        sim["initial_states"] = [_vector(s, f"simulation.initial_states[{k}]", n)
                                 for k, s in enumerate(sim["initial_states"])]
        count = len(sim["initial_states"])
        sim["x0"] = sim["targets"] = None
    else:
        if sim["x0"] is None:
            sim["x0"] = list(meta.get("x0", [0.0] * n))
        sim["x0"] = _vector(sim["x0"], "simulation.x0", n)
        if sim["targets"] is None:
            sim["targets"] = [list(t) for t in meta.get("targets", [[0.0] * n])]
        sim["targets"] = [_vector(t, f"simulation.targets[{k}]", n) for k, t in enumerate(sim["targets"])]
        count = len(sim["targets"])
    if count == 0:
        raise ConfigError("simulation", "need at least one target or initial state")
    if sim["durations"] is None:
        sim["durations"] = [seg] * count
    sim["durations"] = _vector(sim["durations"], "simulation.durations", count)
    for k, d in enumerate(sim["durations"]):
        steps = d / sim["dt"]
        if d <= 0 or abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigError(f"simulation.durations[{k}]", "must be a positive multiple of simulation.dt")

    est = cfg["estimator"]
    players = est["players"]
    if not isinstance(players, list) or not players or any(p not in (1, 2) for p in players):
        raise ConfigError("estimator.players", "expected a nonempty list drawn from {1, 2}")
    if est["noise_std"] is None:
        est["noise_std"] = DEFAULT_NOISE_STD[sim["derivative_mode"]]
    if isinstance(est["noise_std"], (list, tuple)):
        est["noise_std"] = _vector(est["noise_std"], "estimator.noise_std")
        for p in players:
            if len(est["noise_std"]) != 1 + game.input_dims[p - 1]:
                raise ConfigError("estimator.noise_std",
                                  f"expected one entry per regression row ({1 + game.input_dims[p - 1]})")
        if any(s <= 0 for s in est["noise_std"]):
            raise ConfigError("estimator.noise_std", "entries must be positive")
    else:
        est["noise_std"] = _number(est["noise_std"], "estimator.noise_std", positive=True)
    if est["budget"] is not None:
        est["budget"] = _number(est["budget"], "estimator.budget", nonneg=True, integer=True)

    snap = cfg["snapshot"]
    snap["grid_points"] = _number(snap["grid_points"], "snapshot.grid_points", positive=True, integer=True)
    if snap["visited"] is not None:
        snap["visited"] = _vector(snap["visited"], "snapshot.visited", 2)
    snap["inner"] = _vector(snap["inner"], "snapshot.inner", 2)

    if cfg["forecast"] is not None:
        if not isinstance(cfg["forecast"], dict):
            raise ConfigError("forecast", "expected a mapping")
        fc = _merge(FORECAST_DEFAULTS, cfg["forecast"])
        unknown = sorted(set(fc) - set(FORECAST_DEFAULTS))
        if unknown:
            raise ConfigError(f"forecast.{unknown[0]}", "unknown entry")
        fc["samples"] = _number(fc["samples"], "forecast.samples", nonneg=True, integer=True)
        if fc["player"] not in (1, 2):
            raise ConfigError("forecast.player", "must be 1 or 2")
        fc["x0"] = _vector(fc["x0"] if fc["x0"] is not None else (sim["x0"] or sim["initial_states"][0]),
                           "forecast.x0", n)
        fc["horizon"] = _number(fc["horizon"], "forecast.horizon", positive=True)
        fc["dt"] = _number(fc["dt"], "forecast.dt", positive=True)
        steps = fc["horizon"] / fc["dt"]
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigError("forecast.horizon", "must be a multiple of forecast.dt")
        fc["n_mc"] = _number(fc["n_mc"], "forecast.n_mc", positive=True, integer=True)
        fc["level"] = _number(fc["level"], "forecast.level", fraction=True)
        fc["beta"] = _number(fc["beta"], "forecast.beta", fraction=True)
        fc["seed"] = _number(fc["seed"], "forecast.seed", nonneg=True, integer=True)
        fc["max_exclusion"] = _number(fc["max_exclusion"], "forecast.max_exclusion", nonneg=True)
        coords = fc["coordinates"]
        if not isinstance(coords, list) or not coords or any(c not in COORDINATE_SETS for c in coords):
            raise ConfigError("forecast.coordinates", f"expected a list drawn from {COORDINATE_SETS}")
        if fc["reference_epsilon"] is not None:
            fc["reference_epsilon"] = _number(fc["reference_epsilon"], "forecast.reference_epsilon", fraction=True)
        cfg["forecast"] = fc
    return cfg


def config_hash(cfg):
    """SHA-256 of the canonical JSON form of a resolved config (output dir excluded)."""
    payload = {k: v for k, v in cfg.items() if k != "output"}
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved configuration plus its hash."""

    data: dict
    hash: str

    def __getitem__(self, key):
        return self.data[key]

    def defaults_used(self):
        """Settings without a stated value, as actually used by this run."""
        sim, est = self.data["simulation"], self.data["estimator"]
        out = {
            "noise_std": est["noise_std"],
            "durations": sim["durations"],
            "dt": sim["dt"],
            "derivative_mode": sim["derivative_mode"],
            "truth_seed": self.data["truth"]["seed"],
            "prior_seed": self.data["prior"]["seed"],
            "solver_tol": self.data["solver"]["tol"],
            "grid_points": self.data["solver"]["grid_points"],
        }
        if self.data["forecast"] is not None:
            out["forecast_seed"] = self.data["forecast"]["seed"]
            out["forecast_player_policy_of_opponent"] = "true equilibrium"
        return out

    def header(self):
        return {"config_hash": self.hash, "defaults": self.defaults_used()}


def load_config(source=None, overrides=(), game=None, seed=None):
    """Build an :class:`ExperimentConfig`.

    Parameters
    ----------
    source : str, path or dict, optional
        YAML path, bundled config name, or an already parsed mapping.
    overrides : sequence of str
        ``dotted.key=value`` assignments applied after loading.
    game : str, optional
        Replaces the ``game`` entry.
    seed : int, optional
        Replaces ``truth.seed``.
    """
    if source is None:
        data = {}
    elif isinstance(source, dict):
        data = copy.deepcopy(source)
    else:
        data = read_config_file(source)
    if game is not None:
        data["game"] = game
    if seed is not None:
        data.setdefault("truth", {})
        if not isinstance(data["truth"], dict):
            raise ConfigError("truth", "expected a mapping")
        data["truth"]["seed"] = seed
    for assignment in overrides:
        apply_override(data, assignment)
    cfg = validate(data)
    return ExperimentConfig(cfg, config_hash(cfg))


# --------------------------------------------------------------------------
# pipeline


@dataclass
class Context:
    """Objects derived once from a config and shared by every stage."""

    config: ExperimentConfig
    nominal: object
    truth: object
    true_costs: tuple
    phiV: object
    phiQ: object
    layouts: tuple

    @property
    def is_lq(self):
        return isinstance(self.nominal, LqGame)

    @property
    def game(self):
        return as_game(self.truth)


def _nominal_costs(nominal):
    if isinstance(nominal, LqGame):
        return [np.diag(q) for q in nominal.Q], [np.diag(r) for r in nominal.R]
    costs = as_game(nominal).true_costs
    return [c.state_weights for c in costs], [c.input_cost_diag for c in costs]


def draw_truth(nominal, q_var, r_var, seed):
    """Ground-truth cost diagonals: nominal when ``seed`` is None, else one seeded prior draw."""
    q_means, r_means = _nominal_costs(nominal)
    if seed is None:
        return [np.asarray(q, float) for q in q_means], [np.asarray(r, float) for r in r_means]
    rng = np.random.default_rng(seed)
    return draw_costs(rng, q_means, q_var, r_means, r_var)


def _with_costs(nominal, qs, rs):
    if isinstance(nominal, LqGame):
        return nominal.with_cost_diagonals(qs, rs)
    return nominal.with_costs([PlayerCost.diagonal(q, r) for q, r in zip(qs, rs)])


def build_context(config):
    cfg = config.data
    nominal = resolve_game(cfg["game"])
    qs, rs = draw_truth(nominal, cfg["prior"]["q_var"], cfg["prior"]["r_var"], cfg["truth"]["seed"])
    truth = _with_costs(nominal, qs, rs)
    n = nominal.state_dim
    phiV = make_feature_map(cfg["features"]["value"], n)
    phiQ = make_feature_map(cfg["features"]["state"], n)
    layouts = tuple(ParamLayout(phiV.output_dim, phiQ.output_dim, nominal.input_dims[i], float(rs[i][0]))
                    for i in range(2))
    return Context(config, nominal, truth, (qs, rs), phiV, phiQ, layouts)


def _grid(ctx):
    return default_grid(as_game(ctx.nominal), ctx.config["solver"]["grid_points"])


def solve_truth(ctx):
    """Forward equilibrium of the ground-truth game."""
    s = ctx.config["solver"]
    if ctx.is_lq:
        return solve_lq_nash(ctx.truth, tol=s["tol"], max_iter=s["max_iter"])
    return solve_nonlinear_hjb(ctx.truth, ctx.phiV, grid=_grid(ctx), tol=s["tol"], max_iter=s["max_iter"])


def equilibrium_policies(ctx, eq):
    return eq.policies() if ctx.is_lq else eq.policies(ctx.game)


def simulate(ctx, eq):
    """Data-generating trajectory of the configured schedule."""
    sim = ctx.config["simulation"]
    policies = equilibrium_policies(ctx, eq)
    if sim["initial_states"] is not None:
        return run_episode_schedule(ctx.truth, policies, sim["initial_states"], sim["durations"], sim["dt"])
    return run_target_schedule(ctx.truth, policies, sim["x0"], sim["targets"], sim["durations"], sim["dt"])


def measurements(ctx, traj):
    return sample_dataset(traj, ctx.truth, ctx.config["simulation"]["derivative_mode"])


def true_weights(ctx, eq, player):
    """Reduced weights of the ground truth for ``player``."""
    qs, rs = ctx.true_costs
    i = player - 1
    if ctx.is_lq:
        return lq_reduced_weights(ctx.truth, eq, player, ctx.phiV)
    return ctx.layouts[i].pack(eq.value_weights[i], qs[i], rs[i])


def build_priors(ctx):
    """Monte Carlo priors of both players around the nominal costs."""
    p = ctx.config["prior"]
    if ctx.is_lq:
        return build_lq_prior(ctx.nominal, {"Q_var": p["q_var"], "R_var": p["r_var"]},
                              phiV=ctx.phiV, n_mc=p["n_mc"], seed=p["seed"])
    s = ctx.config["solver"]
    return build_nonlinear_prior(ctx.nominal, ctx.phiV, q_vars=p["q_var"], n_mc=p["n_mc"], seed=p["seed"],
                                 grid=_grid(ctx), tol=s["tol"], max_iter=s["max_iter"])


def noise_model(ctx, player):
    std = ctx.config["estimator"]["noise_std"]
    m = ctx.nominal.input_dims[player - 1]
    return NoiseModel(np.diag(np.broadcast_to(np.asarray(std, dtype=float), (1 + m,)) ** 2))


def regression_data(ctx, samples, player):
    return build_regression_samples(samples, player, ctx.phiV, ctx.phiQ,
                                    ctx.game.input_channels[player - 1], ctx.layouts[player - 1])


@dataclass
class IdentificationResult:
    """Posterior path of one player."""

    player: int
    prior: GaussianPosterior
    posterior: GaussianPosterior
    means: np.ndarray
    stds: np.ndarray
    truth: np.ndarray
    snapshots: dict


def identify(ctx, samples, prior, player, budget=None, snapshot_steps=(), truth=None):
    """Run recursive updates over the first ``budget`` samples.

    Raises
    ------
    ConditioningError
        With the failing step index in the message.
    """
    regs = regression_data(ctx, samples[:budget] if budget is not None else samples, player)
    noise = noise_model(ctx, player)
    post = prior
    means, stds = [prior.mean], [prior.std]
    snaps = {}
    for step, reg in enumerate(regs, start=1):
        try:
            post = recursive_update(post, reg, noise)
        except ConditioningError as exc:
            raise ConditioningError(f"player {player}, step {step}: {exc}") from exc
        means.append(post.mean)
        stds.append(post.std)
        if step in snapshot_steps:
            snaps[step] = post
    return IdentificationResult(player, prior, post, np.array(means), np.array(stds), truth, snaps)


def parameter_names(layout):
    return ([f"wV{j}" for j in range(layout.p)] + [f"wQ{j}" for j in range(layout.s)]
            + [f"r{j + 2}" for j in range(layout.m - 1)])


def cost_recovery(result, layout):
    """Relative errors and 2-sigma coverage of the identified cost entries."""
    sl = slice(layout.p, layout.dim)
    mean, std, true = result.posterior.mean[sl], result.posterior.std[sl], result.truth[sl]
    rel = np.abs(mean - true) / np.abs(true)
    inside = np.abs(mean - true) <= 2.0 * std
    return {"names": parameter_names(layout)[layout.p:], "true": true.tolist(), "mean": mean.tolist(),
            "std": std.tolist(), "relative_error": rel.tolist(), "inside_2sigma": inside.tolist(),
            "max_relative_error": float(rel.max()), "all_inside_2sigma": bool(inside.all())}


def value_snapshot(ctx, eq, post, player):
    """Value-function curve (scalar games): grid, truth, posterior mean and 2-sigma."""
    lo, hi = as_game(ctx.nominal).domain
    grid = np.linspace(lo[0], hi[0], ctx.config["snapshot"]["grid_points"])[:, None]
    F = ctx.phiV.transform(grid)
    sl = ctx.layouts[player - 1].value
    mean = F @ post.mean[sl]
    sd = np.sqrt(np.clip(np.einsum("np,pq,nq->n", F, post.covariance[sl, sl], F), 0.0, None))
    true = eq.value(player, grid)
    return grid[:, 0], true, mean, 2.0 * sd


def value_report(ctx, grid, true, mean, two_sigma, visited):
    """Relative L2 error on the visited interval and off-data band growth."""
    v_lo, v_hi = visited
    i_lo, i_hi = ctx.config["snapshot"]["inner"]
    lo, hi = grid.min(), grid.max()
    on = (grid >= v_lo - 1e-12) & (grid <= v_hi + 1e-12)
    off = ((grid >= lo) & (grid <= v_lo + 1e-12)) | ((grid >= v_hi - 1e-12) & (grid <= hi))
    inner = (grid >= i_lo - 1e-12) & (grid <= i_hi + 1e-12)
    rel = float(np.linalg.norm(mean[on] - true[on]) / np.linalg.norm(true[on]))
    ratio = float(two_sigma[off].mean() / two_sigma[inner].mean())
    return {"visited": [float(v_lo), float(v_hi)], "relative_l2_error": rel,
            "band_width_ratio_off_data_vs_inner": ratio}


@dataclass
class ForecastResult:
    ensemble: object
    truth_states: np.ndarray
    truth_inputs: np.ndarray
    bands: dict
    envelopes: dict
    containment: dict


def forecast(ctx, posterior, eq):
    """Posterior rollouts of the forecast player against the other player's true policy."""
    fc = ctx.config["forecast"]
    if fc is None:
        raise ConfigError("forecast", "section missing")
    player = fc["player"]
    layout = ctx.layouts[player - 1]
    if posterior.layout is not None and posterior.layout != layout:
        raise ConfigError("posterior", f"layout {posterior.layout.to_dict()} does not match {layout.to_dict()}")
    if posterior.dim != layout.dim:
        raise ConfigError("posterior", f"dimension {posterior.dim} does not match layout {layout.dim}")
    policies = equilibrium_policies(ctx, eq)
    other = policies[2 - player]
    ens = rollout_ensemble(posterior, other, ctx.truth, ctx.phiV, layout, fc["x0"], fc["horizon"], fc["dt"],
                           fc["n_mc"], seed=fc["seed"], player=player, max_exclusion=fc["max_exclusion"])
    tr = integrate_closed_loop(ctx.truth, *policies, fc["x0"], fc["horizon"], fc["dt"])
    truth_sets = {"states": tr.states, "inputs": tr.inputs[player - 1],
                  "combined": np.concatenate([tr.states, tr.inputs[player - 1]], axis=1)}
    bands, envs, contain = {}, {}, {}
    for which in fc["coordinates"]:
        band = credible_band(ens, fc["level"], which)
        env = forecast_envelope(ens, fc["beta"], which)
        t = truth_sets[which]
        in_band = (t >= band.lower) & (t <= band.upper)
        contain[which] = {
            "band_fraction_per_coordinate": in_band.mean(axis=0).tolist(),
            "envelope_fraction_per_coordinate": env.contains(t).mean(axis=0).tolist(),
        }
        bands[which], envs[which] = band, env
    return ForecastResult(ens, tr.states, tr.inputs[player - 1], bands, envs, contain)

