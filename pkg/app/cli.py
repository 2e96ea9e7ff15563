"""
Command-line front end

    python -m app.cli simulate --config configs/default.toml
    python -m app.cli fixed-point --override fixed_point.epsilons=[0.4,0.2,0.1]
    python -m app.cli flow --override flow.dt=0.05
    python -m app.cli verify
    python -m app.cli oracle --out ./out/oracle
"""
import argparse
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from .config import emit_config, get_settings, initialize_settings, load_experiment_config
from .exceptions import (
    EXIT_CONFIG_ERROR,
    EXIT_NUMERICAL_ERROR,
    EXIT_OK,
    EXIT_VERIFICATION_FAILED,
    ConfigError,
    NumericalError,
)
from .models import ExperimentConfig
from .services.experiment_service import experiment_service
from .services.report_service import (
    ReportWriter,
    bias_snapshot_rows,
    diagnostic_rows,
    flow_rows,
    histogram_rows,
    oracle_rows,
)
from .services.verification_service import verification_service

logger = logging.getLogger(__name__)

RULE = "=" * 50


def _print_summary(title: str, lines: List[str], writer: ReportWriter) -> None:
    print(f"\n{RULE}")
    print(title)
    print(RULE)
    for line in lines:
        print(line)
    print(f"Output directory: {writer.out_dir}")
    for path in writer.written:
        print(f"  {path.name}")
    print(RULE)


def cmd_simulate(config: ExperimentConfig, writer: ReportWriter) -> int:
    summary, record = experiment_service.run_simulation(config)
    m = config.potential.m

    writer.write_csv("bias_snapshots.csv", bias_snapshot_rows(record.snapshots), m)
    writer.write_csv("histogram.csv", histogram_rows(record.grid, record.histogram), m)
    writer.write_csv("diagnostics.csv", diagnostic_rows(record.diagnostics), m)
    writer.write_csv("accumulator.csv", record.accumulator.snapshot_rows(), m)
    writer.write_json("estimates.json", summary.estimates)
    writer.write_json("summary.json", summary)

    lines = [f"epsilon={summary.epsilon:g}  steps={summary.n_steps}  replicas={summary.replica_count}"]
    lines += [f"  {name}: {est.value:.6f} +/- {est.stderr if est.stderr is not None else float('nan'):.2e}"
              for name, est in summary.estimates.items()]
    lines.append(f"Flat-histogram distance: {summary.flat_histogram_distance:.4f}")
    if summary.final_error_c0 is not None:
        lines.append(f"Final C0 distance to the fixed point: {summary.final_error_c0:.4e}")
    _print_summary("✅ Simulation complete", lines, writer)
    return EXIT_OK


def cmd_fixed_point(config: ExperimentConfig, writer: ReportWriter) -> int:
    sweep = experiment_service.run_fixed_point_sweep(config)
    writer.write_csv("fixedpoint.csv", [row.model_dump() for row in sweep.rows])
    writer.write_json(
        "summary.json",
        {
            "potential": sweep.potential,
            "slope_w12": sweep.slope_w12,
            "all_failed": sweep.all_failed,
            "converged": sum(1 for row in sweep.rows if row.converged),
            "epsilons": [row.epsilon for row in sweep.rows],
        },
    )

    lines = []
    for row in sweep.rows:
        if row.converged:
            lines.append(f"✅ eps={row.epsilon:<6g} G={row.grid_nodes:<5d} W12 error {row.error_w12:.4e} "
                         f"({row.iterations} iterations)")
        else:
            lines.append(f"❌ eps={row.epsilon:<6g} G={row.grid_nodes:<5d} {row.message}")
    if sweep.slope_w12 is not None:
        lines.append(f"Log-log slope of the W12 error: {sweep.slope_w12:.4f}")
    _print_summary("Fixed-point sweep", lines, writer)

    if sweep.all_failed:
        logger.error("Picard iteration failed for every epsilon")
        return EXIT_NUMERICAL_ERROR
    return EXIT_OK


def cmd_flow(config: ExperimentConfig, writer: ReportWriter) -> int:
    result, _ = experiment_service.run_flow(config)
    writer.write_csv("flow.csv", flow_rows(result))
    writer.write_json("summary.json", result.model_dump(exclude={"times", "distances", "masses"}))

    lines = [f"epsilon={result.epsilon:g}  dt={result.dt:g}  horizon={result.horizon:g}"]
    if result.rate is not None:
        lines.append(f"Fitted rate {result.rate:.4f} (R^2 {result.r_squared:.5f}), "
                     f"lower bound {result.rate_lower_bound:.4f}")
    lines.append(f"Final L2 distance: {result.final_distance:.4e}")
    _print_summary("✅ Flow integration complete", lines, writer)
    return EXIT_OK


def cmd_verify(config: ExperimentConfig, writer: ReportWriter) -> int:
    report = verification_service.run_all(config)
    writer.write_json("verify.json", report)

    lines = [f"{'✅' if check.passed else '❌'} {check.name}: {check.detail}" for check in report.checks]
    failed = [check.name for check in report.checks if not check.passed]
    title = "All checks passed" if report.passed else f"{len(failed)} checks failed: {', '.join(failed)}"
    _print_summary(title, lines, writer)
    return EXIT_OK if report.passed else EXIT_VERIFICATION_FAILED


def cmd_oracle(config: ExperimentConfig, writer: ReportWriter) -> int:
    result = experiment_service.compute_oracle(config.potential, config.grid.nodes, config.grid.y_nodes)
    writer.write_csv("oracle.csv", oracle_rows(result), config.potential.m)
    writer.write_json(
        "summary.json",
        {"potential": result.potential, "nodes": result.nodes, "y_nodes": result.y_nodes,
         "mean_a_star": result.mean_a_star},
    )
    _print_summary("✅ Oracle written", [f"mean A_star: {result.mean_a_star:.8f}"], writer)
    return EXIT_OK


COMMANDS: Dict[str, Callable[[ExperimentConfig, ReportWriter], int]] = {
    "simulate": cmd_simulate,
    "fixed-point": cmd_fixed_point,
    "flow": cmd_flow,
    "verify": cmd_verify,
    "oracle": cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="abf-torus", description="Adaptive biasing force sampler on the torus")
    subparsers = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "Run the adaptive sampler",
        "fixed-point": "Picard fixed points over an epsilon sweep",
        "flow": "Integrate the limiting flow",
        "verify": "Run the property checks",
        "oracle": "Dump the free energy and mean force grids",
    }
    for name, text in helps.items():
        sub = subparsers.add_parser(name, help=text)
        sub.add_argument("--config", type=Path, default=None, help="TOML or JSON experiment config")
        sub.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                         help="Override a config entry (repeatable)")
        sub.add_argument("--out", type=Path, default=None, help="Output directory (default: $ABF_OUT)")
        sub.add_argument("--seed", type=int, default=None)
        sub.add_argument("--threads", type=int, default=None, help="Worker threads for epsilon sweeps")
    return parser


def resolve_out_dir(args: argparse.Namespace, config: ExperimentConfig) -> Path:
    if args.out is not None:
        out = args.out
    elif config.out_dir is not None:
        out = config.out_dir
    else:
        out = get_settings().out_root
    return Path(out).expanduser().resolve()


def _configure_logging(level_name: str) -> None:
    level = logging.getLevelName(level_name)
    if not isinstance(level, int):
        raise ConfigError(f"Invalid ABF_LOG_LEVEL value: {level_name!r}")
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = initialize_settings()
        _configure_logging(settings.log_level)

        overrides = list(args.override)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        if args.threads is not None:
            overrides.append(f"threads={args.threads}")
        config = load_experiment_config(args.config, overrides, defaults={"threads": settings.threads})
        writer = ReportWriter(resolve_out_dir(args, config))
        writer.write_text("config.json", emit_config(config))

        started_at = datetime.now(timezone.utc)
        clock = time.perf_counter()
        code = COMMANDS[args.command](config, writer)
        writer.write_json(
            "metadata.json",
            {
                "command": args.command,
                "started_at": started_at.isoformat(),
                "finished_at": datetime.now(timezone.utc).isoformat(),
                "runtime_seconds": time.perf_counter() - clock,
            },
        )
        return code
    except ConfigError as e:
        print(f"❌ Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except NumericalError as e:
        print(f"❌ Numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
