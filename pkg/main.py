"""Command-line entry point of the dual-band RIS link simulator."""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from config import APP_VERSION, load_run_config, log_level_from_env
from exceptions import InfeasibleError, SimulationError
from experiments import (
    attenuation_report,
    build_channel_state,
    calibrate,
    chi_square_to_uniform,
    delta_metrics,
    evaluate_point,
    expansion_regimes,
    phase_histogram,
    run_metadata,
    sweep_elevation,
    write_calibration_csv,
    write_histogram_csv,
    write_sweep_csv,
)
from models import ObjectiveKind, RunConfig, SolverKind
from qubo import build_qubo, exact_metrics, write_qubo
from reporting import write_gnuplot_stubs
from solvers import optimize, relinearize, write_trace_csv

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ris-link", description="Dual-band RIS satellite link simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {APP_VERSION}")
    parser.add_argument("--config", help="INI run configuration (defaults to the built-in parameter table)")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--output-dir", help="directory for CSV and QUBO files")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="log verbosity")
    parser.add_argument("--no-timestamp", action="store_true", help="omit the generation time from output headers")
    sub = parser.add_subparsers(dest="command", required=True)

    link = sub.add_parser("link-budget", help="metrics at one elevation and surface size")
    link.add_argument("--elevation", type=float, default=90.0)
    link.add_argument("--n", type=int, default=0)

    sub.add_parser("calibrate", help="fit the calibration constants and write calibration.csv")
    sub.add_parser("sweep", help="elevation sweep over all surface sizes, written to sweep.csv")
    sub.add_parser("histogram", help="joint phase histograms per attenuation level, written to histogram.csv")

    opt = sub.add_parser("optimize", help="optimize one scenario and print x* with its metrics")
    opt.add_argument("--elevation", type=float, default=80.0)
    opt.add_argument("--n", type=int, default=8)
    opt.add_argument("--solver", choices=[kind.value for kind in SolverKind])
    opt.add_argument("--objective", choices=[kind.value for kind in ObjectiveKind])
    opt.add_argument("--relinearize", type=int, default=0, metavar="ROUNDS",
                     help="rebuild the quadratic model around each accepted answer")

    export = sub.add_parser("qubo-export", help="write the quadratic model of one scenario")
    export.add_argument("--elevation", type=float, default=80.0)
    export.add_argument("--n", type=int, default=2)
    export.add_argument("--output", help="target file (default <output-dir>/qubo_n<N>.txt)")
    export.add_argument("--report", action="store_true", help="print the measured expansion error per regime")
    export.add_argument("--samples", type=int, default=1000)
    return parser


def _load(args: argparse.Namespace) -> RunConfig:
    return load_run_config(args.config, {"seed": args.seed, "output_dir": args.output_dir})


def _output_dir(cfg: RunConfig) -> Path:
    return Path(cfg.output_dir)


def _without_surface_fit(cfg: RunConfig) -> RunConfig:
    return cfg.model_copy(update={"calibration": cfg.calibration.model_copy(update={"ris_anchor_elements": 0})})


def cmd_link_budget(args, cfg: RunConfig, timestamp: bool) -> int:
    cal = calibrate(cfg if args.n > 0 else _without_surface_fit(cfg))
    metrics, feasible, _, _ = evaluate_point(cfg, cal, args.elevation, args.n)
    att = attenuation_report(cfg, args.elevation)
    print(f"elevation {args.elevation:g} deg, N={args.n}")
    print(f"  SNR   {metrics.snr_db:.3f} dB")
    print(f"  BER   {metrics.ber:.6e}")
    print(f"  QBER  {metrics.qber:.4%}{'' if feasible else '  (above security threshold)'}")
    print(f"  SKR   {metrics.skr_bits_s:.1f} bits/s")
    print(f"  cost  {metrics.cost:.9g}")
    print(f"  Att   quantum {att['quantum']:.6e}, classical {att['classical']:.6e}")
    return 0


def cmd_calibrate(args, cfg: RunConfig, timestamp: bool) -> int:
    cal = calibrate(cfg)
    for name, value in cal.model_dump(mode="json").items():
        print(f"{name} = {value}")
    write_calibration_csv(cal, _output_dir(cfg) / "calibration.csv", run_metadata(cfg), timestamp)
    return 0


def cmd_sweep(args, cfg: RunConfig, timestamp: bool) -> int:
    cal = calibrate(cfg)
    rows = delta_metrics(sweep_elevation(cfg, cal))
    out = _output_dir(cfg)
    write_sweep_csv(rows, out / "sweep.csv", run_metadata(cfg, cal), timestamp)
    write_gnuplot_stubs(out, "sweep.csv")
    rejected = sum(1 for row in rows if not row.feasible)
    print(f"{len(rows)} rows written to {out / 'sweep.csv'} ({rejected} above the QBER limit)")
    return 0


def cmd_histogram(args, cfg: RunConfig, timestamp: bool) -> int:
    cal = calibrate(cfg)
    grids = phase_histogram(cfg, cal)
    write_histogram_csv(grids, _output_dir(cfg) / "histogram.csv", run_metadata(cfg, cal), timestamp)
    for att, grid in grids.items():
        print(f"Att={att:g}: {int(grid.sum())} elements, chi-square {chi_square_to_uniform(grid):.3f}")
    return 0


def cmd_optimize(args, cfg: RunConfig, timestamp: bool) -> int:
    updates = {}
    if args.solver:
        updates["kind"] = SolverKind(args.solver)
    if args.objective:
        updates["objective"] = ObjectiveKind(args.objective)
    cfg = cfg.model_copy(update={"solver": cfg.solver.model_copy(update=updates)})
    cal = calibrate(cfg)
    state = build_channel_state(cfg, cal, args.elevation, args.n)
    if args.relinearize > 0:
        result = relinearize(state, cfg.weights, cal, cfg.solver, args.relinearize)
    else:
        result = optimize(state, cfg.weights, cal, cfg.solver, require_feasible=True)
    if not result.feasible:
        raise InfeasibleError(f"relinearized answer has qber {result.qber:.4%} above the limit")
    metrics = exact_metrics(state, cfg.weights, cal, result.best_bits)
    print("x* = " + "".join(str(int(b)) for b in result.best_bits))
    print(f"F = {result.best_value:.12g} after {result.evaluations} evaluations ({result.kind.value})")
    print(f"SNR {metrics.snr_db:.3f} dB, QBER {metrics.qber:.4%}, SKR {metrics.skr_bits_s:.1f} bits/s")
    write_trace_csv(result, _output_dir(cfg) / "trace.csv", run_metadata(cfg, cal), timestamp)
    return 0


def cmd_qubo_export(args, cfg: RunConfig, timestamp: bool) -> int:
    cal = calibrate(cfg)
    state = build_channel_state(cfg, cal, args.elevation, args.n)
    model = build_qubo(state, cfg.weights, cal)
    target = Path(args.output) if args.output else _output_dir(cfg) / f"qubo_n{args.n}.txt"
    comments = [f"{key}={value}" for key, value in run_metadata(cfg, cal).items()]
    comments.append(f"elevation_deg={args.elevation:g}")
    write_qubo(model, target, comments)
    print(f"{model.dim} variables, {model.bqm.num_interactions} couplings written to {target}")
    if args.report:
        for regime, report in expansion_regimes(cfg, cal, args.samples).items():
            print(f"{regime}: max deviation {report.max_abs_deviation:.3%}, "
                  f"mean {report.mean_abs_deviation:.3%} over {report.samples} samples")
    return 0


COMMANDS = {
    "link-budget": cmd_link_budget,
    "calibrate": cmd_calibrate,
    "sweep": cmd_sweep,
    "histogram": cmd_histogram,
    "optimize": cmd_optimize,
    "qubo-export": cmd_qubo_export,
}


def run_cli(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    logging.basicConfig(level=args.log_level or log_level_from_env(), format=LOG_FORMAT)
    try:
        cfg = _load(args)
        return COMMANDS[args.command](args, cfg, not args.no_timestamp and cfg.timestamp)
    except SimulationError as exc:
        logger.error(f"{args.command} failed: {exc}")
        return exc.exit_code
    except Exception:
        logger.exception(f"{args.command} failed unexpectedly")
        return 1


if __name__ == "__main__":
    sys.exit(run_cli())
