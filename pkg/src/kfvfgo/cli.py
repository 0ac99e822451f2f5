"""Command-line front end: simulate | run | compare | bench.

Flags can also come from a flat key=value config file (--config); explicit
flags win over config values, and unknown config keys are rejected. Exit
codes: 0 on success (and PASS for compare), 1 for runtime/data failures or a
FAIL verdict, 2 for bad flags or contradictory options.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bench, defaults, sim
from .core import EstimationError

SCHEME_HELP = "data scheme: " + ", ".join(sorted(sim.SCHEME_TABLE))


class CliError(Exception):
    """Bad usage detected after argparse (validation / config problems)."""


# config keys that need something other than str
_CONVERTERS = {
    "seed": int, "epochs": int, "runs": int, "window": int, "iters": int,
    "anchors": int, "delta": float, "tol": float, "omega": float, "dt": float,
    "r_std": float, "timing": None, "q_diag": None, "p0_diag": None,
}


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise CliError(f"expected a boolean, got '{raw}'")


def _parse_diag(raw: str):
    parts = [p for p in raw.replace(";", ",").split(",") if p.strip()]
    if len(parts) != 4:
        raise CliError(f"expected 4 comma-separated values, got '{raw}'")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise CliError(f"expected numbers, got '{raw}'") from None


def _convert(dest: str, raw: str):
    if dest == "timing":
        return _parse_bool(raw)
    if dest in ("q_diag", "p0_diag"):
        return _parse_diag(raw)
    conv = _CONVERTERS.get(dest, str)
    try:
        return conv(raw)
    except ValueError:
        raise CliError(f"bad value for '{dest}': '{raw}'") from None


def _apply_config(args: argparse.Namespace):
    """Fill flags the user did not give from the --config file."""
    if not getattr(args, "config", None):
        return
    path = Path(args.config)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CliError(f"cannot read config file: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key=value, got '{raw}'")
        key, _, value = line.partition("=")
        dest = key.strip().replace("-", "_")
        if dest in ("config", "command", "func") or not hasattr(args, dest):
            raise CliError(
                f"{path}:{lineno}: unknown config key '{key.strip()}' "
                f"for command '{args.command}'")
        current = getattr(args, dest)
        if current is None or current is False:  # flag absent -> config fills
            setattr(args, dest, _convert(dest, value.strip()))


def _require(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise CliError(f"--{name.replace('_', '-')} is required "
                           "(flag or config file)")


def _fill(args, **fallbacks):
    for name, value in fallbacks.items():
        if getattr(args, name) is None:
            setattr(args, name, value)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_estimator_flags(p: argparse.ArgumentParser):
    p.add_argument("--window", type=int, default=None,
                   help="sliding-window length in states (sw-fgo only; default 4)")
    p.add_argument("--iters", type=int, default=None,
                   help="iteration cap for iterated estimators (default 10)")
    p.add_argument("--kernel", choices=("l2", "huber"), default=None,
                   help="robust kernel on whitened residuals (dimensionless)")
    p.add_argument("--delta", type=float, default=None,
                   help="huber threshold on whitened residuals (sigma units; default 1.345)")
    p.add_argument("--jacobian", choices=("analytic", "ad"), default=None,
                   help="measurement Jacobian source for factor-graph estimators")


def _add_model_flags(p: argparse.ArgumentParser):
    p.add_argument("--q-diag", type=_parse_diag, default=None, metavar="Q1,Q2,Q3,Q4",
                   help="process-noise diagonal (m^2, m^2, (m/s)^2, (m/s)^2)")
    p.add_argument("--r-std", type=float, default=None, metavar="STD",
                   help="range-noise std used for R (meters; default: scheme inlier std)")
    p.add_argument("--p0-diag", type=_parse_diag, default=None, metavar="P1,P2,P3,P4",
                   help="initial covariance diagonal (m^2, m^2, (m/s)^2, (m/s)^2)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kfvfgo",
        description="Range-only localization lab: recursive filters (kf/ekf/iekf/"
                    "rekf/riekf), their factor-graph twins (fg-*), and sliding-"
                    "window optimization (sw-fgo).")
    sub = parser.add_subparsers(dest="command", required=True)

    sim_p = sub.add_parser("simulate", help="generate a dataset CSV")
    sim_p.add_argument("--scheme", default=None, help=SCHEME_HELP)
    sim_p.add_argument("--seed", type=int, default=None, help="RNG seed (integer)")
    sim_p.add_argument("--epochs", type=int, default=None,
                       help="number of measurement epochs (default 100)")
    sim_p.add_argument("--omega", type=float, default=None,
                       help="turn rate of the circular truth (rad/s; default 0.05)")
    sim_p.add_argument("--dt", type=float, default=None,
                       help="epoch spacing (seconds; default 1.0)")
    sim_p.add_argument("--anchors", type=int, default=None,
                       help="anchor count on the placement circle (default 4)")
    sim_p.add_argument("--out", default=None, help="output CSV path")
    sim_p.add_argument("--config", default=None, help="key=value config file")
    sim_p.set_defaults(func=cmd_simulate)

    run_p = sub.add_parser("run", help="run one estimator over a dataset")
    run_p.add_argument("--data", default=None, help="dataset CSV from 'simulate'")
    run_p.add_argument("--estimator", default=None,
                       help="one of: " + ", ".join(bench.estimator_names()))
    _add_estimator_flags(run_p)
    _add_model_flags(run_p)
    run_p.add_argument("--out", default=None,
                       help="output base path; writes <out>.csv (trajectory) and <out>.json (metrics)")
    run_p.add_argument("--config", default=None, help="key=value config file")
    run_p.set_defaults(func=cmd_run)

    cmp_p = sub.add_parser("compare", help="run two estimators and check agreement")
    cmp_p.add_argument("--a", default=None, help="first estimator name")
    cmp_p.add_argument("--b", default=None, help="second estimator name")
    cmp_p.add_argument("--data", default=None, help="dataset CSV from 'simulate'")
    cmp_p.add_argument("--tol", type=float, default=None,
                       help="PASS threshold on mean state difference (meters; default 1e-9)")
    _add_estimator_flags(cmp_p)
    _add_model_flags(cmp_p)
    cmp_p.add_argument("--out", default=None, help="write the report JSON here too")
    cmp_p.add_argument("--config", default=None, help="key=value config file")
    cmp_p.set_defaults(func=cmd_compare)

    bench_p = sub.add_parser("bench", help="Monte-Carlo benchmark across seeds")
    bench_p.add_argument("--scheme", default=None, help=SCHEME_HELP)
    bench_p.add_argument("--estimators", default=None,
                         help="comma-separated estimator names")
    bench_p.add_argument("--sweep-window", default=None, metavar="W1,W2,...",
                         help="also bench sw-fgo at these window lengths")
    bench_p.add_argument("--runs", type=int, default=None,
                         help="Monte-Carlo run count (default 20)")
    bench_p.add_argument("--seed", type=int, default=None,
                         help="base seed; runs use seed..seed+runs-1 (default 1)")
    bench_p.add_argument("--epochs", type=int, default=None,
                         help="epochs per run (default 100)")
    bench_p.add_argument("--timing", action="store_true", default=False,
                         help="strictly serial run so per-epoch timings are clean")
    _add_estimator_flags(bench_p)
    _add_model_flags(bench_p)
    bench_p.add_argument("--out", default=None, help="results JSON path (default: stdout)")
    bench_p.add_argument("--csv-dir", default=None,
                         help="directory for plot-ready CSVs (runtimes, window sweep, residual traces)")
    bench_p.add_argument("--config", default=None, help="key=value config file")
    bench_p.set_defaults(func=cmd_bench)
    return parser


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    _fill(args, scheme="NL+NG", seed=1, epochs=defaults.EPOCHS, omega=defaults.OMEGA,
          dt=defaults.DT, anchors=defaults.ANCHOR_COUNT)
    _require(args, "out")
    scheme = sim.named_scheme(args.scheme, epochs=args.epochs, dt=args.dt,
                              anchor_count=args.anchors)
    dataset = sim.generate_dataset(scheme, args.seed, omega=args.omega)
    digest = sim.write_dataset(dataset, args.out)
    print(f"wrote {args.out}: scheme={args.scheme} seed={args.seed} epochs={args.epochs}")
    print(f"sha256={digest}")
    return 0


def _parse_spec(args, name: str) -> bench.EstimatorSpec:
    return bench.parse_estimator(name, window=args.window, iters=args.iters,
                                 kernel=args.kernel, delta=args.delta,
                                 jacobian=args.jacobian)


def _load_run_inputs(args):
    dataset = sim.read_dataset(args.data)
    process = None
    if args.q_diag is not None:
        process = sim.default_process_model(dataset, args.q_diag)
    meas = None
    if args.r_std is not None:
        meas = sim.default_measurement_model(dataset, args.r_std)
    init = bench.default_init(dataset, args.p0_diag)
    return dataset, init, process, meas


def _trajectory_csv(report, dataset) -> str:
    g = "{:.17g}".format
    est = report.positions()
    true = dataset.truth_positions()
    errors = bench.position_errors(report, dataset)
    lines = ["k,est_px,est_py,true_px,true_py,err"]
    for k in range(report.epochs):
        lines.append(",".join([str(k + 1), g(est[k, 0]), g(est[k, 1]),
                               g(true[k, 0]), g(true[k, 1]), g(errors[k])]))
    return "\n".join(lines) + "\n"


def cmd_run(args) -> int:
    _require(args, "data", "estimator")
    spec = _parse_spec(args, args.estimator)
    dataset, init, process, meas = _load_run_inputs(args)
    report = bench.run_spec(spec, dataset, init, process, meas)
    summary = bench.summarize(report, dataset)
    payload = {
        "estimator": spec.key,
        "scheme": dataset.scheme.name,
        "seed": dataset.seed,
        "epochs": dataset.epochs,
        "config": report.config,
        "metrics": summary.as_dict(),
    }
    print(json.dumps(payload, indent=2))
    if args.out:
        base = Path(args.out)
        traj_path = base.with_suffix(".csv")
        metrics_path = base.with_suffix(".json")
        traj_path.write_text(_trajectory_csv(report, dataset))
        metrics_path.write_text(json.dumps(payload, indent=2) + "\n")
        print(f"wrote {traj_path} and {metrics_path}", file=sys.stderr)
    return 0


def cmd_compare(args) -> int:
    _require(args, "a", "b", "data")
    _fill(args, tol=defaults.COMPARE_TOL)
    spec_a = _parse_spec(args, args.a)
    spec_b = _parse_spec(args, args.b)
    if spec_a.key == spec_b.key:
        raise CliError(f"--a and --b are the same estimator '{spec_a.key}'")
    dataset, init, process, meas = _load_run_inputs(args)
    report_a = bench.run_spec(spec_a, dataset, init, process, meas)
    report_b = bench.run_spec(spec_b, dataset, init, process, meas)
    err_diff, state_diff = bench.traj_difference(report_a, report_b, dataset)
    ok = state_diff <= args.tol
    payload = {
        "a": spec_a.key, "b": spec_b.key,
        "scheme": dataset.scheme.name, "seed": dataset.seed,
        "mean_abs_error_diff_m": err_diff,
        "mean_state_diff_m": state_diff,
        "tol_m": args.tol,
        "pass": ok,
    }
    print(json.dumps(payload, indent=2))
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n")
    print(f"{'PASS' if ok else 'FAIL'}: mean_state_diff={state_diff:.3e} m "
          f"(tol {args.tol:.3e} m)")
    return 0 if ok else 1


def _bench_specs(args):
    specs = []
    if args.estimators:
        for raw in args.estimators.split(","):
            name = raw.strip()
            if name:
                specs.append(_parse_spec(args, name))
    if args.sweep_window:
        for token in str(args.sweep_window).split(","):
            token = token.strip()
            if not token:
                continue
            try:
                w = int(token)
            except ValueError:
                raise CliError(f"--sweep-window entries must be integers, got '{token}'")
            specs.append(bench.parse_estimator(
                "sw-fgo", window=w, iters=args.iters, kernel=args.kernel,
                delta=args.delta, jacobian=args.jacobian))
    if not specs:
        raise CliError("nothing to bench: give --estimators and/or --sweep-window")
    return specs


def _write_bench_csvs(results: dict, csv_dir: str):
    out = Path(csv_dir)
    out.mkdir(parents=True, exist_ok=True)
    g = "{:.17g}".format

    lines = ["estimator,q1_ms,median_ms,q3_ms,mean_ms"]
    for key, entry in results["estimators"].items():
        q1, med, q3 = entry["metrics"]["runtime_quartiles_s"]
        mean = entry["metrics"]["mean_runtime_s"]
        lines.append(f"{key},{g(1e3 * q1)},{g(1e3 * med)},{g(1e3 * q3)},{g(1e3 * mean)}")
    (out / "runtimes.csv").write_text("\n".join(lines) + "\n")

    sweep = [(entry["config"]["window"], entry)
             for entry in results["estimators"].values()
             if entry["config"]["window"] is not None]
    if sweep:
        lines = ["window,rmse_m,mae_m,cp95_m"]
        for w, entry in sorted(sweep, key=lambda t: t[0]):
            m = entry["metrics"]
            lines.append(f"{w},{g(m['rmse'])},{g(m['mae'])},{g(m['cp95'])}")
        (out / "window_sweep.csv").write_text("\n".join(lines) + "\n")

    lines = ["estimator,iteration,residual_norm"]
    for key, entry in results["estimators"].items():
        trace = entry["first_epoch_residuals"] or []
        for it, norm in enumerate(trace, start=1):
            lines.append(f"{key},{it},{g(norm)}")
    (out / "residual_traces.csv").write_text("\n".join(lines) + "\n")


def cmd_bench(args) -> int:
    _fill(args, scheme="NL+NG", runs=20, seed=1, epochs=defaults.EPOCHS)
    if args.runs < 1:
        raise CliError("--runs must be >= 1")
    specs = _bench_specs(args)
    results = bench.monte_carlo(specs, args.scheme, args.runs, args.seed,
                                epochs=args.epochs, timing=args.timing,
                                q_diag=args.q_diag, r_std=args.r_std,
                                p0_diag=args.p0_diag)
    text = json.dumps(results, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    if args.csv_dir:
        _write_bench_csvs(results, args.csv_dir)
        print(f"wrote plot CSVs under {args.csv_dir}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config(args)
        return args.func(args)
    except (CliError, bench.EstimatorSpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except sim.DatasetFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:  # bad scheme names, bad model parameters, ...
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (EstimationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
