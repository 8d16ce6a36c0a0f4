from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from tensor_completion.errors import TensorCompletionError
from tensor_completion.logging_utils import configure_logging, ensure_trace_level, resolve_log_level
from tensor_completion.settings import load_experiment, runtime_settings
from tensor_completion.settings_schema import ExperimentSettings, RuntimeSettings, SettingsValidationError
from tensor_completion.version import get_describe_version

ensure_trace_level()
logger = logging.getLogger("tensor_completion")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG_ERROR = 2
COMMAND_EXPERIMENTS = {
    "synth": "synthetic",
    "phase": "phase",
    "inpaint": "inpaint",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tc",
        description="Tensor completion with Tucker-wrapped tensor network cores.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {get_describe_version()}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    helps = {
        "synth": "synthetic recovery runs; one trace CSV per run",
        "phase": "success-rate grid over (r, p)",
        "inpaint": "image inpainting with PSNR report",
        "diagnose": "incoherence, sampling threshold and subspace angles of a synthetic draw",
    }
    for name, help_text in helps.items():
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("--config", required=True, type=Path, help="experiment file (YAML or JSON)")
        sub.add_argument("--seed", type=int, default=None, help="master seed; overrides the config seed")
        sub.add_argument("--out", type=Path, default=None, help="output directory")
        sub.add_argument("--workers", type=int, default=None, help="parallel runs")
        sub.add_argument("--log-level", default=None, help="TRACE, DEBUG, INFO, WARNING or ERROR")
    return parser


def _check_experiment_kind(command: str, experiment: ExperimentSettings) -> None:
    expected = COMMAND_EXPERIMENTS.get(command)
    if expected is not None and experiment.experiment != expected:
        raise SettingsValidationError(
            f"'{command}' needs an experiment of kind '{expected}', config has '{experiment.experiment}'"
        )


def run_command(
    command: str,
    experiment: ExperimentSettings,
    output_dir: Path,
    seed: int | None,
    workers: int,
) -> Any:
    from tensor_completion.services.diagnostics import run_diagnose
    from tensor_completion.services.inpainting import run_inpainting
    from tensor_completion.services.phase import run_phase_transition
    from tensor_completion.services.synthetic import run_synthetic

    _check_experiment_kind(command, experiment)
    if command == "synth":
        return run_synthetic(experiment, output_dir, seed=seed, workers=workers)
    if command == "phase":
        return run_phase_transition(experiment, output_dir, seed=seed, workers=workers)
    if command == "inpaint":
        return run_inpainting(experiment, output_dir, seed=seed, workers=workers)
    report = run_diagnose(experiment, output_dir, seed=seed)
    print(json.dumps(report, indent=2, sort_keys=True, allow_nan=False))
    return report


def main(argv: Sequence[str] | None = None, runtime: RuntimeSettings | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        runtime = runtime or runtime_settings()
    except SettingsValidationError as exc:
        configure_logging(logging.INFO)
        logger.error("%s", exc)
        return EXIT_CONFIG_ERROR

    level_name = args.log_level or os.getenv("LOG_LEVEL") or runtime.log_level
    configure_logging(resolve_log_level(level_name))
    workers = args.workers if args.workers is not None else runtime.workers
    output_dir = args.out if args.out is not None else Path(runtime.output_dir)
    if workers < 1:
        logger.error("--workers must be at least 1")
        return EXIT_CONFIG_ERROR

    try:
        experiment = load_experiment(args.config)
    except SettingsValidationError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG_ERROR

    logger.info("tc %s %s (version %s)", args.command, args.config, get_describe_version())
    try:
        run_command(args.command, experiment, output_dir, args.seed, workers)
    except SettingsValidationError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG_ERROR
    except TensorCompletionError as exc:
        logger.error("%s failed: %s", args.command, exc)
        return EXIT_FAILURE
    logger.info("results written to %s", output_dir)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
