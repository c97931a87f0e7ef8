"""Command-line entry point: ``invgame <subcommand> [options]``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
Every JSON and CSV output carries the config hash and the defaults actually
used, and reruns with the same config and seeds reproduce them byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .bayes import GaussianPosterior
from .exceptions import ConfigError, DomainError, InfeasibleError, NumericalError
from .forecast import certified_epsilon, required_samples

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

logger = logging.getLogger("invgame")


# --------------------------------------------------------------------------
# output helpers


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, payload, config=None):
    body = dict(config.header()) if config is not None else {}
    body.update(payload)
    Path(path).write_text(json.dumps(_jsonable(body), indent=2, sort_keys=True) + "\n")


def _header_lines(config):
    if config is None:
        return []
    return [f"config_hash: {config.hash}",
            f"defaults: {json.dumps(_jsonable(config.defaults_used()), sort_keys=True)}"]


def write_csv(path, columns, rows, config=None):
    with open(path, "w", newline="") as fh:
        for line in _header_lines(config):
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(float(v)) if not isinstance(v, (int, np.integer)) else int(v) for v in row])


def _outdir(args, config):
    out = args.out or (config["output"] if config is not None else None) or f"out/{config['name']}"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


# --------------------------------------------------------------------------
# stages


def _load(args):
    if args.config is None and args.game is None:
        raise ConfigError("config", "give --config or --game")
    return ex.load_config(args.config, overrides=args.override or (), game=args.game, seed=args.seed)


def _equilibrium_payload(ctx, eq):
    tol = ctx.config["solver"]["tol"]
    if ctx.is_lq:
        eig = np.linalg.eigvals(eq.closed_loop)
        eig = eig[np.lexsort((eig.imag, eig.real))]
        return {
            "kind": "lq",
            "P": [p.tolist() for p in eq.P],
            "K": [k.tolist() for k in eq.K],
            "residual": list(eq.residual),
            "tol": tol,
            "iterations": eq.iterations,
            "residual_trace": list(eq.trace),
            "closed_loop_eigenvalues": {"real": eig.real.tolist(), "imag": eig.imag.tolist()},
            "hurwitz": bool(np.max(eig.real) < 0),
        }
    rel = [r / s for r, s in zip(eq.hjb_residual_sup, eq.running_cost_scale)]
    return {
        "kind": "nonlinear",
        "basis": ctx.phiV.describe(),
        "value_weights": [w.tolist() for w in eq.value_weights],
        "hjb_residual_sup": list(eq.hjb_residual_sup),
        "running_cost_scale": list(eq.running_cost_scale),
        "relative_residual": rel,
        "tol": tol,
        "residual_within_tol": [bool(r <= tol) for r in rel],
        "iterations": eq.iterations,
        "weight_change_trace": list(eq.trace),
    }


def _truth_payload(ctx):
    qs, rs = ctx.true_costs
    return {"game": ctx.config["name"], "true_state_cost": [q.tolist() for q in qs],
            "true_input_cost": [r.tolist() for r in rs]}


def stage_solve(ctx, out):
    eq = ex.solve_truth(ctx)
    payload = {**_truth_payload(ctx), "equilibrium": _equilibrium_payload(ctx, eq)}
    write_json(out / "equilibrium.json", payload, ctx.config)
    return eq, payload["equilibrium"]


def stage_simulate(ctx, eq, out):
    traj = ex.simulate(ctx, eq)
    traj.to_csv(out / "trajectory.csv", header_lines=_header_lines(ctx.config))
    write_json(out / "simulation.json", {"samples": len(traj), "segment_starts": list(traj.segment_starts),
                                         "dt": traj.dt, "duration": float(traj.times[-1])}, ctx.config)
    return traj


def _write_posterior(path, post, player, ctx):
    write_json(path, {"player": player, "posterior": post.to_dict()}, ctx.config)


def stage_identify(ctx, eq, traj, out):
    cfg = ctx.config
    samples = ex.measurements(ctx, traj)
    priors, failures = ex.build_priors(ctx)
    budget = cfg["estimator"]["budget"]
    used = samples[:budget] if budget is not None else samples
    fc = cfg["forecast"]
    snap_steps = (fc["samples"],) if fc is not None else ()
    summary = {"samples_available": len(samples), "samples_used": len(used),
               "prior_failed_draws": failures, "players": {}}
    results = {}
    for player in cfg["estimator"]["players"]:
        truth = ex.true_weights(ctx, eq, player)
        res = ex.identify(ctx, samples, priors[player - 1], player, budget, snap_steps, truth)
        results[player] = res
        layout = ctx.layouts[player - 1]
        names = ex.parameter_names(layout)
        cols = ["step"] + [f"mean_{n}" for n in names] + [f"two_sigma_{n}" for n in names]
        rows = [[k, *m, *(2.0 * s)] for k, (m, s) in enumerate(zip(res.means, res.stds))]
        write_csv(out / f"trace_player{player}.csv", cols, rows, cfg)
        _write_posterior(out / f"posterior_player{player}.json", res.posterior, player, ctx)
        for step, post in res.snapshots.items():
            _write_posterior(out / f"posterior_player{player}_step{step}.json", post, player, ctx)
        report = {"true_weights": truth.tolist(), "costs": ex.cost_recovery(res, layout)}
        if ctx.nominal.state_dim == 1 and not ctx.is_lq:
            grid, v_true, v_mean, v_2s = ex.value_snapshot(ctx, eq, res.posterior, player)
            write_csv(out / f"value_player{player}.csv", ["x", "v_true", "v_mean", "v_two_sigma"],
                      zip(grid, v_true, v_mean, v_2s), cfg)
            visited = cfg["snapshot"]["visited"]
            if visited is None:
                xs = np.array([s.x[0] for s in used]) if used else np.zeros(1)
                visited = [float(xs.min()), float(xs.max())]
            report["value_function"] = ex.value_report(ctx, grid, v_true, v_mean, v_2s, visited)
        summary["players"][str(player)] = report
    write_json(out / "identify.json", summary, cfg)
    return results, summary


def _read_posterior(path):
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"posterior file not found: {path}")
    try:
        data = json.loads(p.read_text())
        return GaussianPosterior.from_dict(data.get("posterior", data))
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError("posterior", f"cannot read {path}: {exc}") from exc


def stage_forecast(ctx, eq, post, out, source=None):
    cfg = ctx.config
    fc = cfg["forecast"]
    res = ex.forecast(ctx, post, eq)
    times = res.ensemble.times
    certificate = {"source_posterior": source, "samples_in_posterior": post.sample_count,
                   "n_mc": fc["n_mc"], "included": res.ensemble.n_included,
                   "excluded": res.ensemble.n_excluded, "coordinates": {}}
    truth = {"states": res.truth_states, "inputs": res.truth_inputs,
             "combined": np.concatenate([res.truth_states, res.truth_inputs], axis=1)}
    for which in fc["coordinates"]:
        band, env = res.bands[which], res.envelopes[which]
        k = band.mean.shape[1]
        cols = ["t"] + [f"{c}_{j}" for c in ("mean", "band_lower", "band_upper", "truth") for j in range(k)]
        write_csv(out / f"summary_{which}.csv", cols,
                  (np.concatenate([[t], band.mean[i], band.lower[i], band.upper[i], truth[which][i]])
                   for i, t in enumerate(times)), cfg)
        cols = ["t"] + [f"{c}_{j}" for c in ("lower", "upper") for j in range(k)]
        write_csv(out / f"envelope_{which}.csv", cols,
                  (np.concatenate([[t], env.lower[i], env.upper[i]]) for i, t in enumerate(times)), cfg)
        entry = env.certificate()
        entry["reference_epsilon"] = fc["reference_epsilon"]
        entry["truth_containment"] = res.containment[which]
        certificate["coordinates"][which] = entry
    write_json(out / "certificate.json", certificate, cfg)
    return res, certificate


# --------------------------------------------------------------------------
# subcommands


def cmd_solve(args):
    config = _load(args)
    ctx = ex.build_context(config)
    _, payload = stage_solve(ctx, _outdir(args, config))
    print(json.dumps(_jsonable({k: payload[k] for k in payload if k in
                                ("kind", "residual", "iterations", "hurwitz", "relative_residual")}),
                     sort_keys=True))


def cmd_simulate(args):
    config = _load(args)
    ctx = ex.build_context(config)
    out = _outdir(args, config)
    eq = ex.solve_truth(ctx)
    traj = stage_simulate(ctx, eq, out)
    print(f"wrote {len(traj)} samples to {out / 'trajectory.csv'}")


def cmd_identify(args):
    config = _load(args)
    ctx = ex.build_context(config)
    out = _outdir(args, config)
    eq = ex.solve_truth(ctx)
    traj = ex.simulate(ctx, eq)
    _, summary = stage_identify(ctx, eq, traj, out)
    print(json.dumps(_jsonable(summary["players"]), sort_keys=True))


def cmd_forecast(args):
    config = _load(args)
    if config["forecast"] is None:
        raise ConfigError("forecast", "section missing from the config")
    if not args.posterior:
        raise ConfigError("posterior", "forecast needs --posterior")
    post = _read_posterior(args.posterior)
    ctx = ex.build_context(config)
    eq = ex.solve_truth(ctx)
    _, cert = stage_forecast(ctx, eq, post, _outdir(args, config), source=Path(args.posterior).name)
    print(json.dumps(_jsonable({k: {"epsilon": v["epsilon"], "reference_epsilon": v["reference_epsilon"], "d": v["d"]}
                                for k, v in cert["coordinates"].items()}), sort_keys=True))


def cmd_certify(args):
    if args.epsilon is not None:
        result = {"epsilon": args.epsilon, "beta": args.beta, "d": args.d,
                  "required_samples": required_samples(args.epsilon, args.beta, args.d)}
    elif args.n is not None:
        result = {"n": args.n, "beta": args.beta, "d": args.d,
                  "epsilon": certified_epsilon(args.n, args.beta, args.d)}
    else:
        raise ConfigError("certify", "give --n (for epsilon) or --epsilon (for the sample count)")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "certify.json", result)
    print(json.dumps(result, sort_keys=True))


def cmd_run_experiment(args):
    config = _load(args)
    ctx = ex.build_context(config)
    out = _outdir(args, config)
    eq, eq_payload = stage_solve(ctx, out)
    traj = stage_simulate(ctx, eq, out)
    results, summary = stage_identify(ctx, eq, traj, out)
    run = {"equilibrium": {k: eq_payload[k] for k in eq_payload
                           if k in ("residual", "hjb_residual_sup", "relative_residual", "iterations")},
           "identify": summary["players"]}
    fc = config["forecast"]
    if fc is not None:
        player = fc["player"]
        if player not in results:
            raise ConfigError("forecast.player", "player is not identified by estimator.players")
        post = results[player].snapshots.get(fc["samples"])
        if post is None:
            raise ConfigError("forecast.samples", "exceeds the number of samples used for identification")
        _, cert = stage_forecast(ctx, eq, post, out,
                                 source=f"posterior_player{player}_step{fc['samples']}.json")
        run["forecast"] = {k: {"epsilon": v["epsilon"], "reference_epsilon": v["reference_epsilon"], "d": v["d"],
                               "certified": v["certified"]} for k, v in cert["coordinates"].items()}
    write_json(out / "run.json", run, config)
    print(json.dumps(_jsonable(run), sort_keys=True, indent=2))


# --------------------------------------------------------------------------
# parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config (path or bundled name: "
                                         + ", ".join(ex.bundled_configs()) + ")")
    common.add_argument("--game", help="built-in game name; replaces the config's game")
    common.add_argument("--seed", type=int, help="ground-truth cost draw seed (truth.seed)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--override", action="append", metavar="KEY=VALUE",
                        help="dotted config assignment, repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="invgame", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="forward equilibrium of the ground-truth game"
                   ).set_defaults(func=cmd_solve)
    sub.add_parser("simulate", parents=[common], help="data-generating trajectory CSV"
                   ).set_defaults(func=cmd_simulate)
    sub.add_parser("identify", parents=[common], help="recursive posterior traces and final posteriors"
                   ).set_defaults(func=cmd_identify)
    p = sub.add_parser("forecast", parents=[common], help="posterior rollouts, bands, envelopes, certificate")
    p.add_argument("--posterior", help="posterior JSON written by identify")
    p.set_defaults(func=cmd_forecast)
    p = sub.add_parser("certify", parents=[common], help="scenario bound calculator")
    p.add_argument("--n", type=int, help="number of scenarios")
    p.add_argument("--epsilon", type=float, help="target violation level")
    p.add_argument("--beta", type=float, default=0.01)
    p.add_argument("--d", type=int, default=1, help="decision dimension")
    p.set_defaults(func=cmd_certify)
    sub.add_parser("run-experiment", parents=[common], help="full pipeline"
                   ).set_defaults(func=cmd_run_experiment)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"file not found: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, DomainError, InfeasibleError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
