from __future__ import annotations

from tensor_completion.config import (
    DirectRowwiseStrategy,
    IterativeStrategy,
    SubsampledRowwiseStrategy,
)
from tensor_completion.strategies.base import FactorProblem, FactorSolution, FactorStrategy
from tensor_completion.strategies.iterative import IterativeSolver
from tensor_completion.strategies.rowwise import DirectRowwiseSolver, SubsampledRowwiseSolver


def build_factor_strategy(
    config: DirectRowwiseStrategy | SubsampledRowwiseStrategy | IterativeStrategy,
) -> FactorStrategy:
    if isinstance(config, SubsampledRowwiseStrategy):
        return SubsampledRowwiseSolver(config.c)
    if isinstance(config, IterativeStrategy):
        return IterativeSolver(config.max_mv, config.atol)
    return DirectRowwiseSolver()


__all__ = [
    "DirectRowwiseSolver",
    "FactorProblem",
    "FactorSolution",
    "FactorStrategy",
    "IterativeSolver",
    "SubsampledRowwiseSolver",
    "build_factor_strategy",
]
