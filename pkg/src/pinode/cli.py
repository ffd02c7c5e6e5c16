"""Command-line entry point.

Configuration is resolved as: command-line flags, then ``--config`` TOML
file, then built-in defaults. ``--set section.key=value`` overrides any
single configuration value.

Exit codes: 0 success, 2 invalid input or configuration, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time

import numpy as np

from . import diffcore as dc
from .config import RunConfig
from .datagen import (
    Trajectory,
    dataset_stats,
    exact_dataset,
    excitation_signal,
    format_stats,
    generate_dataset,
    read_csv,
    write_csv,
)
from .dynamics import pure_ode_rhs
from .evaluation import as_rhs, emit_plot_data, format_error_table, rollout_compare, windowed_errors
from .exceptions import DatasetError, InvalidArgument, NumericFailure
from .integrator import rollout
from .training import baseline_loss, fit_baseline_friction, synthetic_batch, step_loss, train

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


def _write_json(path, payload):
    _ensure_parent(path)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def _load_dataset(path):
    if not os.path.exists(path):
        raise InvalidArgument(f"dataset file not found: {path}")
    return read_csv(path)


def _load_model(path):
    if not os.path.exists(path):
        raise InvalidArgument(f"model file not found: {path}")
    try:
        return dc.MLPParams.load(path)
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidArgument(f"cannot read model {path}: {e}") from None


def _init_net(cfg):
    net = cfg.network
    return dc.mlp_init(net["layer_sizes"], net["output_scale"], seed=cfg.stream_seed("init"))


# ---------------------------------------------------------------------------
# commands


def cmd_generate(cfg, args):
    out = args.out or cfg.paths["dataset"]
    rig = cfg.data["rig"]
    d = generate_dataset(cfg.rig, rig["duration"], rig["amplitude"], seed=cfg.stream_seed("datagen"))
    d.provenance += "\nconfig " + cfg.to_json()
    _ensure_parent(out)
    write_csv(d, out)
    print(format_stats(d))
    print(f"wrote {out}")


def cmd_stats(cfg, args):
    d = _load_dataset(args.data or cfg.paths["dataset"])
    stats = dataset_stats(d)
    print(format_stats(d, stats))
    if args.out:
        keys = ("mean", "std", "min", "max")
        _write_json(
            args.out,
            {
                "samples": len(d),
                "sample_rate": d.sample_rate,
                "channels": {c: dict(zip(keys, v)) for c, v in stats.items()},
            },
        )


def cmd_train(cfg, args):
    data_path = args.data or cfg.paths["dataset"]
    d = _load_dataset(data_path)
    out = args.out or cfg.paths["model"]
    tc = cfg.train_config
    net = _init_net(cfg)
    report = train(cfg.physical, d, tc, net, cfg.network["angle_input"])
    model = report.params
    model.meta = {"config": cfg.to_dict(), "dataset": os.path.basename(data_path)}
    _ensure_parent(out)
    model.save(out)
    summary = report.to_dict()
    summary["config"] = cfg.to_dict()
    summary["dataset"] = os.path.basename(data_path)
    summary["n_params"] = model.n_params
    if report.history:
        summary["loss_ratio"] = report.history[-1] / report.history[0]
    _write_json(_report_path(out, "train"), summary)
    if report.history:
        print(f"loss {report.history[0]:.6g} -> {report.history[-1]:.6g} after {tc.epochs} epochs")
    else:
        print("epochs = 0: saved the initialised model")
    print(f"wrote {out}")


def _report_path(model_path, kind):
    stem, _ = os.path.splitext(model_path)
    return f"{stem}.{kind}.json"


def _fit_baseline(cfg, d):
    p = cfg.physical
    mu_c, mu_p = fit_baseline_friction(p, d, w=cfg.train_config.loss_weights)
    fitted = p.replace(mu_c=mu_c, mu_p=mu_p)
    loss = baseline_loss(fitted, d.transitions(1), cfg.train_config.loss_weights, 1.0 / d.sample_rate)
    return fitted, {"mu_c": mu_c, "mu_p": mu_p, "loss": loss}


def cmd_fit_baseline(cfg, args):
    data_path = args.data or cfg.paths["dataset"]
    d = _load_dataset(data_path)
    _, result = _fit_baseline(cfg, d)
    print(f"mu_c = {result['mu_c']:.6g}  mu_p = {result['mu_p']:.6g}  loss = {result['loss']:.6g}")
    out = args.out or os.path.join(cfg.paths["reports"], "baseline.json")
    _write_json(out, {**result, "config": cfg.to_dict(), "dataset": os.path.basename(data_path)})
    print(f"wrote {out}")


def cmd_evaluate(cfg, args):
    data_path = args.data or cfg.paths["dataset"]
    d = _load_dataset(data_path)
    net = _load_model(args.model or cfg.paths["model"])
    p = cfg.physical
    if args.baseline:
        with open(args.baseline) as f:
            b = json.load(f)
        baseline = p.replace(mu_c=float(b["mu_c"]), mu_p=float(b["mu_p"]))
    else:
        baseline, _ = _fit_baseline(cfg, d)
    ev = cfg.evaluation
    models = {"pinode": net, "pure_ode": baseline}
    seed = cfg.stream_seed("evaluation")
    summaries = {
        name: windowed_errors(p, m, d, ev["window"], ev["count"], seed, ev["mode"], ev["tiled"])
        for name, m in models.items()
    }
    out_dir = args.out or cfg.paths["reports"]
    os.makedirs(out_dir, exist_ok=True)
    ext = ev["format"]
    emit_plot_data(summaries, os.path.join(out_dir, f"errors.{ext}"), ext)
    steps = min(ev["rollout_steps"], len(d) - 1 - ev["rollout_start"])
    comparison = rollout_compare(p, models, d, ev["rollout_start"], steps)
    emit_plot_data(comparison, os.path.join(out_dir, f"rollout.{ext}"), ext)
    report = {
        "config": cfg.to_dict(),
        "dataset": os.path.basename(data_path),
        "baseline": {"mu_c": baseline.mu_c, "mu_p": baseline.mu_p},
        "models": {name: s.to_dict() for name, s in summaries.items()},
        "ratio_pure_over_pinode": {
            c: summaries["pure_ode"].mean(c) / summaries["pinode"].mean(c)
            for c in summaries["pinode"].fits
        },
    }
    _write_json(os.path.join(out_dir, "evaluation.json"), report)
    print(format_error_table(summaries))
    print(f"wrote {out_dir}")


def cmd_simulate(cfg, args):
    p = cfg.physical
    if args.model in (None, "pure"):
        f = pure_ode_rhs(p)
    else:
        f = as_rhs(p, _load_model(args.model))
    rate = cfg.rig.sample_rate
    if args.data:
        controls = _load_dataset(args.data).u
        if args.steps:
            controls = controls[: args.steps]
    else:
        duration = (args.steps or int(round(cfg.data["rig"]["duration"] * rate))) / rate
        controls = excitation_signal(duration, rate, cfg.data["rig"]["amplitude"], cfg.stream_seed("datagen"))
    try:
        z0 = tuple(float(v) for v in args.z0.split(","))
    except ValueError:
        raise InvalidArgument(f"--z0 must be four comma-separated numbers, got {args.z0!r}") from None
    if len(z0) != 4:
        raise InvalidArgument(f"--z0 must have four components, got {len(z0)}")
    traj = rollout(f, np.array(z0), controls, 1.0 / rate)
    t = np.arange(traj.shape[0]) / rate
    d = exact_dataset(Trajectory(t, traj, np.append(controls, 0.0)), rate)
    d.provenance = f"simulated {args.model or 'pure'}\nconfig " + cfg.to_json()
    out = args.out or os.path.join(cfg.paths["reports"], "simulation.csv")
    _ensure_parent(out)
    write_csv(d, out)
    print(f"simulated {len(controls)} steps; wrote {out}")


def cmd_gradcheck(cfg, args):
    p = cfg.physical
    net = _init_net(cfg)
    tc = cfg.train_config
    h = 1.0 / cfg.rig.sample_rate
    angle_input = cfg.network["angle_input"]
    results = []
    started = time.perf_counter()
    for k in range(args.batches):
        batch = synthetic_batch(p, args.batch_size, h, seed=cfg.stream_seed("gradcheck") + k)

        def loss(theta, batch=batch):
            return step_loss(p, theta, batch, tc.loss_weights, h, angle_input)

        if args.corrupt:
            with dc.perturbed_derivative(args.corrupt, 1.01):
                r = dc.check_gradients(loss, net, args.epsilon, vectorized=True)
        else:
            r = dc.check_gradients(loss, net, args.epsilon, vectorized=True)
        results.append(r)
        print(
            f"batch {k}: max relative error {r.max_relative_error:.3e} at parameter {r.worst_index}"
            f" (analytic {r.analytic:.6g}, numeric {r.numeric:.6g})"
        )
    worst = max(results, key=lambda r: r.max_relative_error)
    passed = all(r.passed for r in results)
    print(f"{'PASS' if passed else 'FAIL'}: worst {worst.max_relative_error:.3e} at parameter {worst.worst_index}")
    if args.out:
        _write_json(
            args.out,
            {
                "passed": passed,
                "max_relative_error": worst.max_relative_error,
                "worst_index": worst.worst_index,
                "n_params": worst.n_params,
                "batches": [
                    {"max_relative_error": r.max_relative_error, "worst_index": r.worst_index}
                    for r in results
                ],
                "config": cfg.to_dict(),
                "duration_s": time.perf_counter() - started,
            },
        )
    return EXIT_OK if passed else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# argument parsing


def _global_flags(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="TOML configuration file")
    parser.add_argument("--seed", type=int, default=default, help="run seed (overrides the file)")
    parser.add_argument("--out", default=default, help="output path (file or directory, per command)")
    parser.add_argument(
        "--set",
        action="append",
        default=argparse.SUPPRESS if suppress else [],
        metavar="SECTION.KEY=VALUE",
        help="override one configuration value; may be repeated",
    )
    parser.add_argument("-v", "--verbose", action="store_true", default=default if suppress else False)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pinode",
        description="Cart-pole physics-informed neural ODE experiments.",
        epilog="Precedence: flags > --config file > defaults. "
        "Exit codes: 0 success, 2 invalid input, 3 numeric failure.",
    )
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        _global_flags(p, suppress=True)
        p.set_defaults(func=fn)
        return p

    p = add("generate", cmd_generate, "simulate the synthetic rig and write a dataset CSV")
    p.add_argument("--duration", type=float, help="seconds of data (overrides rig.duration)")

    p = add("stats", cmd_stats, "print dataset statistics")
    p.add_argument("data", nargs="?", help="dataset CSV (default: paths.dataset)")

    p = add("train", cmd_train, "train the learned force of the hybrid model")
    p.add_argument("--data", help="dataset CSV (default: paths.dataset)")
    p.add_argument("--epochs", type=int, help="overrides training.epochs")

    p = add("fit-baseline", cmd_fit_baseline, "least-squares friction factors of the pure ODE model")
    p.add_argument("--data", help="dataset CSV (default: paths.dataset)")

    p = add("evaluate", cmd_evaluate, "windowed error statistics and rollout plot data")
    p.add_argument("--data", help="dataset CSV (default: paths.dataset)")
    p.add_argument("--model", help="model JSON (default: paths.model)")
    p.add_argument("--baseline", help="baseline JSON from fit-baseline; fitted on the fly if absent")

    p = add("simulate", cmd_simulate, "open-loop rollout of a model")
    p.add_argument("--model", help="model JSON, or 'pure' for the friction model (default)")
    p.add_argument("--data", help="take the control sequence from this dataset")
    p.add_argument("--steps", type=int, help="number of steps")
    p.add_argument("--z0", default=f"0,{math.pi!r},0,0", help="initial state x,phi,x_dot,phi_dot")

    p = add("gradcheck", cmd_gradcheck, "compare reverse-mode and finite-difference gradients")
    p.add_argument("--batches", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--corrupt", help=argparse.SUPPRESS)  # test hook: scale one op's derivative
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = list(args.set)
    if getattr(args, "duration", None) is not None:
        overrides.append(f"rig.duration={args.duration!r}")
    if getattr(args, "epochs", None) is not None:
        overrides.append(f"training.epochs={args.epochs}")
    try:
        cfg = RunConfig.from_sources(args.config, overrides, args.seed)
        code = args.func(cfg, args)
    except (InvalidArgument, DatasetError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except NumericFailure as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
