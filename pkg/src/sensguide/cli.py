"""Command-line front end.

One subcommand per pipeline stage: simulate, gen-data, train, eval,
predict, reach, coverage, falsify, bounds. Exit codes: 0 success,
1 usage error, 2 unreadable or inconsistent input, 3 numerical
divergence, 4 budget exhausted without reaching the goal.

Figures are opt-in via --plot and land next to the main output file.
The NEXG_THREADS environment variable caps worker threads where a
command can fan out (error-curve evaluation).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .approximator import (
    ExactOracle,
    TrainConfig,
    evaluate_model,
    load_model,
    save_model,
    train,
)
from .dataset import generate_dataset, load_dataset_csv, save_dataset_csv
from .dynamics import resolve_system, save_trajectory_csv, simulate, simulate_backward
from .errors import (
    DivergenceError,
    InputError,
    SensGuideError,
    TrainingDivergedError,
)
from .explorer import (
    ConvergenceParams,
    RDParams,
    admissible_step_range,
    convergence_bound,
    coverage,
    fit_magnitude_model,
    k_star,
    predict_trajectory,
    reach_destination,
)
from .falsification import falsify_baseline, falsify_rd, load_spec
from .sensitivity import DEFAULT_RADII, DEFAULT_SAMPLES_PER_RADIUS, abs_error_curve

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_DIVERGED = 3
EXIT_BUDGET = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; route that to exit code 1 instead
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parse_vector(text: str, name: str) -> np.ndarray:
    try:
        return np.array([float(p) for p in text.split(",") if p.strip() != ""])
    except ValueError as exc:
        raise InputError(f"cannot parse {name} {text!r}: {exc}") from exc


def _threads() -> int:
    raw = os.environ.get("NEXG_THREADS")
    if raw is None:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise InputError(f"NEXG_THREADS must be an integer, got {raw!r}")
    if value < 1:
        raise InputError(f"NEXG_THREADS must be at least 1, got {value}")
    return value


def _write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _png_path(out) -> Path:
    return Path(out).with_suffix(".png")


def _load_approx(args, system):
    if getattr(args, "model", None):
        return load_model(args.model)
    return ExactOracle(system, kind="inverse")


def _rd_params(args) -> RDParams:
    return RDParams(s=args.s, p=args.p, delta=args.delta, bound=args.budget)


# ---------------------------------------------------------------------------
# Subcommand handlers


def cmd_simulate(args) -> int:
    system = resolve_system(args.system)
    if args.x0 is not None:
        x0 = _parse_vector(args.x0, "--x0")
    elif system.initial_set is not None:
        x0 = (system.initial_set.lo + system.initial_set.hi) / 2.0
    else:
        raise InputError("--x0 is required for a system without an initial set")
    run = simulate_backward if args.backward else simulate
    traj = run(system, x0, steps=args.steps)
    save_trajectory_csv(traj, args.out)
    print(f"simulated {traj.steps} steps of {system.name} -> {args.out}")
    if args.plot:
        from . import plots

        plots.plot_trajectory(traj, _png_path(args.out), title=system.name)
        print(f"figure -> {_png_path(args.out)}")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    system = resolve_system(args.system)
    ds = generate_dataset(
        system,
        num_anchors=args.anchors,
        num_neighbors=args.neighbors,
        neighbor_radius=args.radius,
        time_subsample=args.time_subsample,
        kind=args.kind,
        seed=args.seed,
    )
    save_dataset_csv(ds, args.out)
    print(
        f"generated {len(ds)} tuples ({ds.skipped_degenerate} degenerate "
        f"skipped) -> {args.out}"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    ds = load_dataset_csv(args.data)
    config = TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        train_fraction=args.train_fraction,
        dtype=args.dtype,
    )
    model, report = train(ds, config)
    save_model(model, args.out)
    print(
        f"trained on {len(ds)} tuples: held-out mse={report.mse:.6g} "
        f"mre={report.mre_percent:.3f}% -> {args.out}"
    )
    if args.report:
        payload = report.to_dict()
        payload["count"] = len(ds)
        payload["model"] = str(args.out)
        _write_json(args.report, payload)
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(args.model)
    code = EXIT_OK
    payload = {"model": str(args.model)}
    if args.data:
        ds = load_dataset_csv(args.data)
        metrics = evaluate_model(model, ds)
        payload.update(metrics)
        print(
            f"eval on {metrics['count']} tuples: mse={metrics['mse']:.6g} "
            f"mre={metrics['mre_percent']:.3f}%"
        )
    if args.curve_out:
        system = resolve_system(args.system or model.system_name)
        radii = (
            tuple(float(r) for r in _parse_vector(args.radii, "--radii"))
            if args.radii
            else DEFAULT_RADII
        )
        curve = abs_error_curve(
            model,
            system,
            radii=radii,
            samples_per_radius=args.samples,
            seed=args.seed,
            threads=_threads(),
        )
        curve.save_csv(args.curve_out)
        payload["curve"] = {
            "radii": list(curve.radii),
            "eps_abs": list(curve.eps_abs),
        }
        print(f"error curve -> {args.curve_out}")
        if args.plot:
            from . import plots

            plots.plot_error_curve(curve, _png_path(args.curve_out))
            print(f"figure -> {_png_path(args.curve_out)}")
    elif args.plot:
        raise InputError("--plot for eval requires --curve-out")
    if not args.data and not args.curve_out:
        raise InputError("eval needs --data and/or --curve-out")
    if args.report:
        _write_json(args.report, payload)
    return code


def cmd_predict(args) -> int:
    model = load_model(args.model)
    system = resolve_system(args.system or model.system_name)
    x0 = _parse_vector(args.x0, "--x0")
    v0 = _parse_vector(args.v0, "--v0")
    times = (
        [float(v) for v in _parse_vector(args.times, "--times")]
        if args.times
        else None
    )
    magnitude = None
    if args.gain_data:
        magnitude = fit_magnitude_model(load_dataset_csv(args.gain_data))
    t_vals, preds = predict_trajectory(
        model, system, x0, v0, times=times, magnitude=magnitude
    )
    n = preds.shape[1]
    header = "step,t," + ",".join(f"x{i + 1}" for i in range(n))
    lines = [header]
    for tv, row in zip(t_vals, preds):
        step = system.time_index(tv)
        lines.append(",".join([str(step), repr(float(tv))] + [repr(float(c)) for c in row]))
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"predicted {len(t_vals)} states -> {args.out}")
    if args.plot:
        from . import plots

        plots.plot_prediction(t_vals, preds, _png_path(args.out))
        print(f"figure -> {_png_path(args.out)}")
    return EXIT_OK


def cmd_reach(args) -> int:
    system = resolve_system(args.system)
    approx = _load_approx(args, system)
    z = _parse_vector(args.target, "--target")
    x0 = _parse_vector(args.x0, "--x0") if args.x0 else None
    result = reach_destination(
        system,
        approx,
        z,
        args.time,
        x0=x0,
        params=_rd_params(args),
        seed=args.seed,
    )
    print(
        f"k={result.k} d_init={result.d_init:.6g} d_a={result.d_a:.6g} "
        f"d_r={result.d_r:.4%} converged={result.converged}"
    )
    if args.out:
        _write_json(args.out, result.to_dict())
    if args.traj_out:
        save_trajectory_csv(result.trajectory, args.traj_out)
    if args.plot:
        if not args.out:
            raise InputError("--plot for reach requires --out")
        from . import plots

        plots.plot_reach(result, _png_path(args.out))
        print(f"figure -> {_png_path(args.out)}")
    return EXIT_OK if result.converged else EXIT_BUDGET


def cmd_coverage(args) -> int:
    system = resolve_system(args.system)
    approx = _load_approx(args, system)
    report = coverage(
        system,
        approx,
        args.time,
        num_targets=args.num_targets,
        seed=args.seed,
        params=_rd_params(args),
    )
    print(
        f"coverage at t={report.t}: fraction={report.fraction:.3f} "
        f"({len(report.targets)} targets)"
    )
    if args.out:
        _write_json(args.out, report.to_dict())
    if args.targets_csv:
        n = system.dimension
        header = (
            ",".join(f"x{i + 1}" for i in range(n)) + ",k,d_a,d_r,converged"
        )
        lines = [header]
        for row in report.targets:
            lines.append(
                ",".join(
                    [repr(float(c)) for c in row.target]
                    + [str(row.k), repr(row.d_a), repr(row.d_r), str(int(row.converged))]
                )
            )
        Path(args.targets_csv).write_text("\n".join(lines) + "\n")
    if args.plot:
        if not args.out:
            raise InputError("--plot for coverage requires --out")
        from . import plots

        plots.plot_coverage(report, _png_path(args.out))
        print(f"figure -> {_png_path(args.out)}")
    return EXIT_OK


def cmd_falsify(args) -> int:
    system = resolve_system(args.system)
    spec = load_spec(args.spec)
    if args.method == "baseline":
        result = falsify_baseline(
            system, spec, seed=args.seed, budget=args.budget, beta=args.beta
        )
    else:
        approx = _load_approx(args, system)
        params = RDParams(s=args.s, p=args.p, delta=args.delta, bound=args.budget)
        result = falsify_rd(system, spec, approx=approx, params=params, seed=args.seed)
    print(
        f"method={result.method} falsified={result.falsified} k={result.k} "
        f"rho={result.rho:.6g}"
    )
    if args.out:
        _write_json(args.out, result.to_dict())
    if args.plot:
        if not args.out:
            raise InputError("--plot for falsify requires --out")
        from . import plots

        plots.plot_falsification(result, _png_path(args.out))
        print(f"figure -> {_png_path(args.out)}")
    return EXIT_OK if result.falsified else EXIT_BUDGET


def cmd_bounds(args) -> int:
    if args.gamma is not None:
        if not 0 < args.gamma <= 1:
            raise InputError(f"--gamma must be in (0, 1], got {args.gamma}")
        r_eps = args.r_eps if args.r_eps is not None else 0.0
        params = ConvergenceParams(
            eps_rel=1.0 - args.gamma,
            eps_abs=r_eps * args.gamma,
            eta1=1.0,
            eta2=1.0,
            r=args.r if args.r is not None else 1e30,
        )
    else:
        params = ConvergenceParams(
            eps_rel=args.eps_rel,
            eps_abs=args.eps_abs,
            eta1=args.eta1,
            eta2=args.eta2,
            r=args.r if args.r is not None else 1e30,
        )
    payload = {
        "gamma": params.gamma,
        "r_eps": params.r_eps,
        "s": args.s,
        "p": args.p,
        "d_init": args.d_init,
        "delta": args.delta,
    }
    try:
        lo, hi = admissible_step_range(params, args.d_init, args.p)
        payload["s_range"] = [lo, hi]
    except SensGuideError as exc:
        payload["s_range"] = None
        payload["s_range_note"] = str(exc)
    ks = k_star(params, args.s, args.p, args.d_init, args.delta)
    payload["k_star"] = ks
    payload["bounds"] = [
        convergence_bound(params, args.s, args.p, args.d_init, k)
        for k in range(min(ks, args.max_table) + 1)
    ]
    if args.k is not None:
        payload["bound_at_k"] = convergence_bound(
            params, args.s, args.p, args.d_init, args.k
        )
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"k_star={ks} -> {args.out}")
    else:
        print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser assembly


def _add_rd_flags(sp, bound_default: int) -> None:
    sp.add_argument("--s", type=float, default=0.5, help="step fraction per virtual move")
    sp.add_argument("--p", type=int, default=2, help="virtual moves per simulation")
    sp.add_argument("--delta", type=float, default=0.004, help="success threshold")
    sp.add_argument("--budget", type=int, default=bound_default, help="simulation budget")
    sp.add_argument("--seed", type=int, default=0)


def _add_approx_flags(sp) -> None:
    group = sp.add_mutually_exclusive_group()
    group.add_argument("--model", help="trained model JSON to drive corrections")
    group.add_argument(
        "--oracle",
        choices=["exact"],
        default="exact",
        help="simulation-backed oracle (default when no model is given)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sensguide", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")

    sp = sub.add_parser("simulate", help="integrate the closed loop and save a CSV")
    sp.add_argument("--system", required=True, help="catalog name or system JSON path")
    sp.add_argument("--x0", help="comma-separated initial state")
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--backward", action="store_true", help="integrate the reversed field")
    sp.add_argument("--out", required=True)
    sp.add_argument("--plot", action="store_true")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("gen-data", help="sample sensitivity tuples from simulations")
    sp.add_argument("--system", required=True)
    sp.add_argument("--anchors", type=int, default=40)
    sp.add_argument("--neighbors", type=int, default=10)
    sp.add_argument("--radius", type=float, default=0.01)
    sp.add_argument("--time-subsample", type=int, default=5)
    sp.add_argument("--kind", choices=["inverse", "forward"], default="inverse")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="fit the direction predictor on a dataset")
    sp.add_argument("--data", required=True)
    sp.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    sp.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    sp.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    sp.add_argument("--train-fraction", type=float, default=TrainConfig.train_fraction)
    sp.add_argument("--dtype", choices=["float32", "float64"], default=TrainConfig.dtype)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="model JSON path")
    sp.add_argument("--report", help="metrics JSON path")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="score a model and optionally trace its error curve")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", help="dataset CSV to score against")
    sp.add_argument("--system", help="system for the error curve (defaults to the model's)")
    sp.add_argument("--curve-out", help="error-curve CSV path")
    sp.add_argument("--radii", help="comma-separated curve radii")
    sp.add_argument("--samples", type=int, default=DEFAULT_SAMPLES_PER_RADIUS)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--report", help="metrics JSON path")
    sp.add_argument("--plot", action="store_true")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("predict", help="displace a simulated trajectory by model output")
    sp.add_argument("--model", required=True, help="forward-kind model JSON")
    sp.add_argument("--system")
    sp.add_argument("--x0", required=True)
    sp.add_argument("--v0", required=True)
    sp.add_argument("--times", help="comma-separated times (default: every step)")
    sp.add_argument("--gain-data", help="forward dataset CSV to fit per-time gains")
    sp.add_argument("--out", required=True)
    sp.add_argument("--plot", action="store_true")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("reach", help="steer the initial state toward a target")
    sp.add_argument("--system", required=True)
    _add_approx_flags(sp)
    sp.add_argument("--target", required=True, help="comma-separated target state")
    sp.add_argument("--time", type=float, required=True)
    sp.add_argument("--x0", help="starting initial state (default: sampled)")
    _add_rd_flags(sp, bound_default=30)
    sp.add_argument("--out", help="result JSON path")
    sp.add_argument("--traj-out", help="final trajectory CSV path")
    sp.add_argument("--plot", action="store_true")
    sp.set_defaults(func=cmd_reach)

    sp = sub.add_parser("coverage", help="estimate and probe the reachable extent")
    sp.add_argument("--system", required=True)
    _add_approx_flags(sp)
    sp.add_argument("--time", type=float, required=True)
    sp.add_argument("--num-targets", type=int, default=50)
    _add_rd_flags(sp, bound_default=30)
    sp.add_argument("--out", help="report JSON path")
    sp.add_argument("--targets-csv", help="per-target CSV path")
    sp.add_argument("--plot", action="store_true")
    sp.set_defaults(func=cmd_coverage)

    sp = sub.add_parser("falsify", help="search the initial set for an unsafe run")
    sp.add_argument("--system", required=True)
    sp.add_argument("--spec", required=True, help="specification JSON path")
    sp.add_argument(
        "--method",
        choices=["rd", "guided", "baseline"],
        default="rd",
        help="rd (alias guided): approximator-driven search; baseline: annealing",
    )
    _add_approx_flags(sp)
    sp.add_argument("--s", type=float, default=0.5)
    sp.add_argument("--p", type=int, default=2)
    sp.add_argument("--delta", type=float, default=0.004)
    sp.add_argument("--budget", type=int, default=50)
    sp.add_argument("--beta", type=float, default=50.0, help="annealing acceptance sharpness")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="result JSON path")
    sp.add_argument("--plot", action="store_true")
    sp.set_defaults(func=cmd_falsify)

    sp = sub.add_parser("bounds", help="evaluate the convergence guarantee numbers")
    sp.add_argument("--d-init", type=float, required=True)
    sp.add_argument("--delta", type=float, default=0.004)
    sp.add_argument("--s", type=float, default=0.5)
    sp.add_argument("--p", type=int, default=2)
    sp.add_argument("--eps-rel", type=float, default=0.0)
    sp.add_argument("--eps-abs", type=float, default=0.0)
    sp.add_argument("--eta1", type=float, default=1.0)
    sp.add_argument("--eta2", type=float, default=1.0)
    sp.add_argument("--r", type=float, help="error-model validity radius")
    sp.add_argument("--gamma", type=float, help="progress factor given directly")
    sp.add_argument("--r-eps", type=float, help="error floor radius given directly")
    sp.add_argument("--k", type=int, help="also report the bound after k corrections")
    sp.add_argument("--max-table", type=int, default=1000, help="cap on tabulated bounds")
    sp.add_argument("--out", help="JSON path (default: print)")
    sp.set_defaults(func=cmd_bounds)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_help()
            return EXIT_USAGE
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, TrainingDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except SensGuideError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
