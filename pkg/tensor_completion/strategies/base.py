from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from tensor_completion.tensor_core import Matrix


@dataclass(frozen=True, eq=False)
class FactorProblem:
    """min_X sum_s (X[rows_s] . design_s - values_s)^2 for one mode.

    `design` holds one row per observation (|Omega| x r_n); `previous` is the
    current factor, kept for rows without usable observations.
    """

    design: Matrix
    rows: npt.NDArray[np.int64]
    values: npt.NDArray[np.float64]
    previous: Matrix
    mode: int
    iteration: int
    seed: int

    @property
    def row_count(self) -> int:
        return self.previous.shape[0]

    @property
    def rank(self) -> int:
        return self.previous.shape[1]

    def row_counts(self) -> npt.NDArray[np.int64]:
        return np.bincount(self.rows, minlength=self.row_count).astype(np.int64)


@dataclass(frozen=True, eq=False)
class FactorSolution:
    matrix: Matrix
    empty_rows: int = 0


class FactorStrategy(ABC):
    """Solver for the factor least-squares problem of one mode."""

    name: str

    @abstractmethod
    def solve(self, problem: FactorProblem) -> FactorSolution:
        """Return X, keeping previous rows where a row has no usable observations."""
