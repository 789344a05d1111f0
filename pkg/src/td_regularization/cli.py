#!/usr/bin/env python3
"""
🖥️ Command line: run, sweep and report

    main.py run configs/lqr_dpg_tdreg_cubic.toml --trials 20 --workers 4
    main.py sweep configs/lqr_dpg_tdreg_cubic.toml --grid kappa=0.1,0.5,0.9,0.99,0.999,1,1.001
    main.py report results/lqr_dpg_tdreg_cubic
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional

import structlog

from src.td_regularization.config import ExperimentConfig, load_config, parse_grid, save_config, with_override
from src.td_regularization.errors import TdRegError
from src.td_regularization.harness import run_experiment
from src.td_regularization.log import configure_logging
from src.td_regularization.reporting import export_results, report

logger = structlog.get_logger(__name__)

RUN_FLAGS = {
    "trials": "run.trials",
    "seed_base": "run.seed_base",
    "out": "run.out",
    "workers": "run.workers",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="td-regularization", description="TD-regularized actor-critic experiments")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--json-logs", action="store_true", help="emit JSON log lines")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(command: argparse.ArgumentParser) -> None:
        command.add_argument("config", type=Path, help="TOML experiment file")
        command.add_argument("--trials", type=int, help="override run.trials")
        command.add_argument("--seed-base", type=int, help="override run.seed_base")
        command.add_argument("--out", type=str, help="override run.out")
        command.add_argument("--workers", type=int, help="override run.workers")

    add_run_flags(sub.add_parser("run", help="run every trial of one experiment"))
    sweep = sub.add_parser("sweep", help="run the experiment once per grid value")
    add_run_flags(sweep)
    sweep.add_argument("--grid", required=True, help="dotted key and values, e.g. kappa=0.1,0.5,1")

    report_parser = sub.add_parser("report", help="rebuild aggregate and plot data of a run directory")
    report_parser.add_argument("results_dir", type=Path)
    return parser


def apply_flags(config: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    for flag, key in RUN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            config = with_override(config, key, value)
    return config


def run_and_export(config: ExperimentConfig) -> Path:
    out_dir = Path(config.run.out)
    record = run_experiment(config, out_dir)
    export_results(record, out_dir)
    save_config(config, out_dir / config.run.name / f"{config.run.name}.toml")
    return out_dir / config.run.name


def command_run(args: argparse.Namespace) -> int:
    config = apply_flags(load_config(args.config), args)
    run_dir = run_and_export(config)
    print(f"✅ results written to {run_dir}")
    return 0


def command_sweep(args: argparse.Namespace) -> int:
    base = apply_flags(load_config(args.config), args)
    key, values = parse_grid(args.grid)
    # Validate the whole grid before the first run starts
    configs = [
        with_override(with_override(base, key, value), "run.name", f"{base.run.name}_{key.split('.')[-1]}_{value}")
        for value in values
    ]
    for config in configs:
        run_dir = run_and_export(config)
        print(f"✅ {config.run.name}: {run_dir}")
    return 0


def command_report(args: argparse.Namespace) -> int:
    for path in report(args.results_dir):
        print(f"📄 {path}")
    return 0


COMMANDS = {
    "run": command_run,
    "sweep": command_sweep,
    "report": command_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level, json_output=args.json_logs)
    try:
        return COMMANDS[args.command](args)
    except TdRegError as e:
        logger.error("command_failed", command=args.command, error=str(e))
        print(f"❌ {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
