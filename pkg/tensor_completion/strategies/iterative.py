from __future__ import annotations

import logging

import numpy as np
from scipy.sparse.linalg import LinearOperator, lsqr

from tensor_completion.strategies.base import FactorProblem, FactorSolution, FactorStrategy

logger = logging.getLogger("tensor_completion.strategies.iterative")


class IterativeSolver(FactorStrategy):
    """Matrix-free LSQR over the whole factor, warm-started at the current one."""

    name = "iterative"

    def __init__(self, max_mv: int = 200, atol: float = 1e-10) -> None:
        self.max_mv = max_mv
        self.atol = atol

    def solve(self, problem: FactorProblem) -> FactorSolution:
        row_count, rank = problem.previous.shape
        design, rows = problem.design, problem.rows

        def matvec(x: np.ndarray) -> np.ndarray:
            return np.einsum("sj,sj->s", x.reshape(row_count, rank)[rows], design)

        def rmatvec(v: np.ndarray) -> np.ndarray:
            out = np.zeros((row_count, rank))
            np.add.at(out, rows, design * np.ravel(v)[:, None])
            return out.ravel()

        operator = LinearOperator(
            (len(rows), row_count * rank), matvec=matvec, rmatvec=rmatvec, dtype=np.float64
        )
        result = lsqr(
            operator,
            problem.values,
            atol=self.atol,
            btol=self.atol,
            iter_lim=self.max_mv,
            x0=np.asarray(problem.previous, dtype=np.float64).ravel(),
        )
        solution, stop_reason, iterations = result[0], result[1], result[2]
        logger.debug(
            "mode %d LSQR stopped after %d iterations (istop=%d)", problem.mode + 1, iterations, stop_reason
        )
        # rows without observations get no update from x0
        empty = int(np.count_nonzero(problem.row_counts() == 0))
        return FactorSolution(solution.reshape(row_count, rank), empty)
