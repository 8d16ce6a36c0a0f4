from __future__ import annotations

import logging
import math

import numpy as np
import numpy.typing as npt

from tensor_completion.logging_utils import TRACE_LEVEL, ensure_trace_level
from tensor_completion.randomness import keyed_rng
from tensor_completion.strategies.base import FactorProblem, FactorSolution, FactorStrategy
from tensor_completion.tensor_core import Matrix

ensure_trace_level()
logger = logging.getLogger("tensor_completion.strategies.rowwise")

RIDGE_FLOOR = 1e-12


def solve_row_normal_equations(
    design: Matrix,
    rows: npt.NDArray[np.int64],
    values: npt.NDArray[np.float64],
    previous: Matrix,
) -> FactorSolution:
    """Independent normal equations per row with ridge 1e-12 * trace / r."""
    row_count, rank = previous.shape
    normal = np.zeros((row_count, rank, rank))
    rhs = np.zeros((row_count, rank))
    np.add.at(normal, rows, design[:, :, None] * design[:, None, :])
    np.add.at(rhs, rows, design * values[:, None])

    trace = np.trace(normal, axis1=1, axis2=2)
    usable = trace > 0.0
    result = np.array(previous, dtype=np.float64, copy=True)
    if usable.any():
        ridge = RIDGE_FLOOR * trace[usable] / rank
        system = normal[usable] + ridge[:, None, None] * np.eye(rank)
        result[usable] = np.linalg.solve(system, rhs[usable][:, :, None])[:, :, 0]
    empty = int(row_count - np.count_nonzero(usable))
    if empty:
        logger.log(TRACE_LEVEL, "%d of %d rows have no usable observations", empty, row_count)
    return FactorSolution(result, empty)


class DirectRowwiseSolver(FactorStrategy):
    name = "direct_rowwise"

    def solve(self, problem: FactorProblem) -> FactorSolution:
        return solve_row_normal_equations(problem.design, problem.rows, problem.values, problem.previous)


class SubsampledRowwiseSolver(FactorStrategy):
    """Row-wise solve over min(omega_i, ceil(c * r)) observations per row.

    The kept observations of row i are drawn from a generator keyed by
    (seed, iteration, mode, i), so the result does not depend on scheduling.
    """

    name = "subsampled_rowwise"

    def __init__(self, c: float = 3.0) -> None:
        if c < 1.0:
            raise ValueError(f"subsample factor c must be >= 1, got {c}")
        self.c = c

    def select(self, problem: FactorProblem) -> npt.NDArray[np.int64]:
        keep = math.ceil(self.c * problem.rank)
        order = np.argsort(problem.rows, kind="stable")
        counts = problem.row_counts()
        starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
        selected: list[npt.NDArray[np.int64]] = []
        for i in np.flatnonzero(counts):
            members = order[starts[i] : starts[i] + counts[i]]
            if counts[i] > keep:
                rng = keyed_rng(problem.seed, problem.iteration, problem.mode, int(i))
                members = np.sort(members[rng.choice(counts[i], size=keep, replace=False)])
            selected.append(members)
        if not selected:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate(selected))

    def solve(self, problem: FactorProblem) -> FactorSolution:
        chosen = self.select(problem)
        return solve_row_normal_equations(
            problem.design[chosen], problem.rows[chosen], problem.values[chosen], problem.previous
        )
