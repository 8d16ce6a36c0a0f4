from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

from tensor_completion.errors import ObservationError
from tensor_completion.services.results import (
    PhaseCell,
    build_manifest,
    ensure_output_dir,
    format_probability,
    write_manifest,
    write_phase_csv,
)
from tensor_completion.services.runner import run_ordered
from tensor_completion.services.synthetic import observe_planted, solver_config_for
from tensor_completion.settings_schema import ExperimentSettings
from tensor_completion.solver import solve
from tensor_completion.tensor_core import fro_norm

logger = logging.getLogger("tensor_completion.phase")

PHASE_CSV_NAME = "phase.csv"


@dataclass(frozen=True)
class PhaseTask:
    r: int
    p: float
    trial: int


def run_phase_task(experiment: ExperimentSettings, task: PhaseTask, seed: int) -> bool:
    """One cell trial.

    Success needs both the final normalized residual on the observed entries and the
    relative error against the planted tensor below the success threshold.
    """
    assert experiment.dims is not None
    ranks = (task.r,) * len(experiment.dims)
    planted, observed = observe_planted(experiment, ranks, task.p, task.trial, seed)
    config = solver_config_for(experiment, ranks, seed, "phase", task.r, format_probability(task.p), task.trial)
    try:
        result = solve(observed, experiment.topology, config)
    except ObservationError as exc:
        logger.debug("r=%d p=%s trial=%d counted as failure: %s", task.r, format_probability(task.p), task.trial, exc)
        return False
    if result.final_residual >= experiment.success_threshold:
        return False
    error = fro_norm(result.model.to_dense() - planted.tensor) / fro_norm(planted.tensor)
    if error >= experiment.success_threshold:
        logger.debug(
            "r=%d p=%s trial=%d fits the observations (tau %.2e) but misses the planted tensor (error %.2e)",
            task.r,
            format_probability(task.p),
            task.trial,
            result.final_residual,
            error,
        )
        return False
    return True


def run_phase_transition(
    experiment: ExperimentSettings,
    output_dir: str | Path,
    seed: int | None = None,
    workers: int = 1,
) -> list[PhaseCell]:
    """Success rate over the (r, p) grid; rows follow r_grid, columns follow p_grid, both as given."""
    assert experiment.r_grid is not None and experiment.p_grid is not None
    seed = experiment.seed if seed is None else seed
    output_dir = ensure_output_dir(output_dir)
    tasks = [
        PhaseTask(r, p, trial)
        for r in experiment.r_grid
        for p in experiment.p_grid
        for trial in range(experiment.trials)
    ]
    logger.info(
        "starting phase transition: %d x %d grid, %d trials per cell",
        len(experiment.r_grid),
        len(experiment.p_grid),
        experiment.trials,
    )
    successes = run_ordered(lambda task: run_phase_task(experiment, task, seed), tasks, workers)

    cells: list[PhaseCell] = []
    position = 0
    for r in experiment.r_grid:
        for p in experiment.p_grid:
            count = sum(successes[position : position + experiment.trials])
            position += experiment.trials
            cells.append(PhaseCell(r, p, count, experiment.trials))
            logger.info("cell r=%d p=%s: success rate %.2f", r, format_probability(p), cells[-1].success_rate)

    phase_path = write_phase_csv(output_dir / PHASE_CSV_NAME, cells)
    write_manifest(output_dir, build_manifest("phase", experiment, seed, [phase_path]), experiment)
    return cells
