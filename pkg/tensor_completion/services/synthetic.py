"""Synthetic recovery runs: plant a low multilinear rank tensor, sample it, complete it, keep the trace."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from tensor_completion.config import SolverConfig
from tensor_completion.errors import RankError
from tensor_completion.observation import ObservationSet, project, sample_mask
from tensor_completion.randomness import derive_seed
from tensor_completion.services.results import (
    build_manifest,
    ensure_output_dir,
    format_probability,
    trace_file_name,
    write_manifest,
    write_trace_csv,
    write_text_output,
)
from tensor_completion.services.runner import run_ordered
from tensor_completion.settings_schema import ExperimentSettings
from tensor_completion.solver import SolveResult, solve
from tensor_completion.tensor_core import DenseTensor, Matrix, fro_norm, multi_mode_product

logger = logging.getLogger("tensor_completion.synthetic")

SUMMARY_CSV_HEADER = "r,p,topology,trial,status,iterations,tau_norm,ranks"
DEFAULT_RANK_MARGIN = 2


@dataclass(frozen=True, eq=False)
class PlantedTensor:
    tensor: DenseTensor
    core: DenseTensor
    factors: tuple[Matrix, ...]

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(self.core.shape)


@dataclass(frozen=True)
class SyntheticTask:
    ranks: tuple[int, ...]
    p: float
    topology: str
    trial: int


@dataclass(frozen=True, eq=False)
class SyntheticOutcome:
    task: SyntheticTask
    result: SolveResult

    @property
    def trace_name(self) -> str:
        return trace_file_name(
            "trace",
            r=rank_label(self.task.ranks),
            p=format_probability(self.task.p),
            topo=self.task.topology,
            t=self.task.trial,
        )


def rank_label(ranks: Sequence[int]) -> str:
    if len(set(ranks)) == 1:
        return str(ranks[0])
    return "x".join(str(r) for r in ranks)


def planted_tucker(dims: Sequence[int], ranks: Sequence[int], seed: int) -> PlantedTensor:
    """[[G; A]] with i.i.d. standard normal G and A; the stored factors are orthonormal bases of range(A)."""
    dims = tuple(int(size) for size in dims)
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != len(dims) or any(r < 1 or r > size for r, size in zip(ranks, dims)):
        raise RankError(f"planted ranks {ranks} do not fit dims {dims}")
    rng = np.random.default_rng(seed)
    core = rng.standard_normal(ranks)
    raw = [rng.standard_normal((size, r)) for size, r in zip(dims, ranks)]
    tensor = multi_mode_product(core, raw)
    factors = tuple(np.linalg.qr(a)[0] for a in raw)
    return PlantedTensor(tensor, core, factors)


def add_noise(tensor: DenseTensor, noise_level: float, seed: int) -> DenseTensor:
    """Adds Gaussian noise with Frobenius norm noise_level * ||tensor||."""
    if noise_level <= 0.0:
        return tensor
    noise = np.random.default_rng(seed).standard_normal(tensor.shape)
    return tensor + noise * (noise_level * fro_norm(tensor) / fro_norm(noise))


def harness_defaults(ranks: Sequence[int], dims: Sequence[int]) -> dict[str, object]:
    """Starting ranks slightly above the planted ones, capped by dims."""
    return {"d0": tuple(min(r + DEFAULT_RANK_MARGIN, size) for r, size in zip(ranks, dims))}


def noisy_planted(
    experiment: ExperimentSettings,
    ranks: tuple[int, ...],
    trial: int,
    seed: int,
) -> tuple[PlantedTensor, DenseTensor]:
    """Planted tensor for one trial and the data it is observed through (noise added if configured)."""
    assert experiment.dims is not None
    planted = planted_tucker(experiment.dims, ranks, derive_seed(seed, "tensor", ranks, trial))
    return planted, add_noise(planted.tensor, experiment.noise_level, derive_seed(seed, "noise", ranks, trial))


def observe_planted(
    experiment: ExperimentSettings,
    ranks: tuple[int, ...],
    p: float,
    trial: int,
    seed: int,
) -> tuple[PlantedTensor, ObservationSet]:
    assert experiment.dims is not None
    planted, data = noisy_planted(experiment, ranks, trial, seed)
    mask = sample_mask(experiment.dims, p, derive_seed(seed, "mask", ranks, format_probability(p), trial))
    return planted, project(data, mask)


def solver_config_for(experiment: ExperimentSettings, ranks: Sequence[int], seed: int, *keys: object) -> SolverConfig:
    assert experiment.dims is not None
    return experiment.solver.to_config(
        seed=derive_seed(seed, "solver", *keys),
        defaults=harness_defaults(ranks, experiment.dims),
    )


def synthetic_tasks(experiment: ExperimentSettings) -> list[SyntheticTask]:
    assert experiment.dims is not None
    if experiment.r_grid is not None:
        rank_vectors = [(r,) * len(experiment.dims) for r in experiment.r_grid]
    else:
        rank_vectors = [experiment.planted_ranks()]
    return [
        SyntheticTask(ranks, p, topology, trial)
        for ranks in rank_vectors
        for p in experiment.p_values()
        for topology in experiment.topology_list()
        for trial in range(experiment.trials)
    ]


def run_synthetic_task(experiment: ExperimentSettings, task: SyntheticTask, seed: int) -> SyntheticOutcome:
    planted, observed = observe_planted(experiment, task.ranks, task.p, task.trial, seed)
    config = solver_config_for(experiment, task.ranks, seed, task.ranks, format_probability(task.p), task.topology, task.trial)
    logger.info(
        "synthetic run r=%s p=%s topology=%s trial=%d: %d observed entries",
        rank_label(task.ranks),
        format_probability(task.p),
        task.topology,
        task.trial,
        observed.size,
    )
    result = solve(observed, task.topology, config, ground_truth=planted.factors)
    return SyntheticOutcome(task, result)


def format_summary_csv(outcomes: Sequence[SyntheticOutcome]) -> str:
    lines = [SUMMARY_CSV_HEADER]
    for outcome in outcomes:
        task = outcome.task
        lines.append(
            f"{rank_label(task.ranks)},{format_probability(task.p)},{task.topology},{task.trial},"
            f"{outcome.result.status},{outcome.result.iterations},{outcome.result.final_residual!r},"
            f"{'|'.join(str(r) for r in outcome.result.model.ranks)}"
        )
    return "\n".join(lines) + "\n"


def run_synthetic(
    experiment: ExperimentSettings,
    output_dir: str | Path,
    seed: int | None = None,
    workers: int = 1,
) -> list[SyntheticOutcome]:
    """Runs every (rank, p, topology, trial) combination and writes one trace CSV per run plus a summary."""
    seed = experiment.seed if seed is None else seed
    output_dir = ensure_output_dir(output_dir)
    tasks = synthetic_tasks(experiment)
    logger.info("starting %d synthetic runs with seed %d", len(tasks), seed)
    outcomes = run_ordered(lambda task: run_synthetic_task(experiment, task, seed), tasks, workers)

    outputs = [write_trace_csv(output_dir / outcome.trace_name, outcome.result.trace) for outcome in outcomes]
    outputs.append(write_text_output(output_dir / "summary.csv", format_summary_csv(outcomes)))
    write_manifest(output_dir, build_manifest("synth", experiment, seed, outputs), experiment)
    converged = sum(outcome.result.status == "converged" for outcome in outcomes)
    logger.info("synthetic runs finished: %d of %d converged", converged, len(outcomes))
    return outcomes
