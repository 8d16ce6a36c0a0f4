from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np

from tensor_completion.errors import DimensionMismatchError
from tensor_completion.tensor_core import DenseTensor, Matrix, multi_mode_product
from tensor_completion.tn_graph import NodeTensorSet, TensorDiagram, contract

ORTHONORMALITY_TOL = 1e-8


def orthonormality_defect(factor: Matrix) -> float:
    factor = np.asarray(factor, dtype=np.float64)
    return float(np.linalg.norm(factor.T @ factor - np.eye(factor.shape[1]), ord=2))


@dataclass(frozen=True, eq=False)
class TuckerWrappedModel:
    """X = [[G(diagram, nodes); A_1, ..., A_N]] with orthonormal A_n."""

    factors: tuple[Matrix, ...]
    diagram: TensorDiagram
    nodes: NodeTensorSet
    cached_core: DenseTensor | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        factors = tuple(np.asarray(factor, dtype=np.float64) for factor in self.factors)
        object.__setattr__(self, "factors", factors)
        ranks = tuple(factor.shape[1] for factor in factors)
        if ranks != self.diagram.outgoing_weights:
            raise DimensionMismatchError(
                f"factor ranks {ranks} do not match diagram outgoing weights {self.diagram.outgoing_weights}"
            )
        if self.cached_core is not None and tuple(self.cached_core.shape) != ranks:
            raise DimensionMismatchError(f"cached core {self.cached_core.shape} does not match ranks {ranks}")

    @property
    def order(self) -> int:
        return len(self.factors)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(factor.shape[0] for factor in self.factors)

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(factor.shape[1] for factor in self.factors)

    @cached_property
    def core(self) -> DenseTensor:
        if self.cached_core is not None:
            return self.cached_core
        return contract(self.diagram, self.nodes)

    def to_dense(self) -> DenseTensor:
        return multi_mode_product(self.core, self.factors)

    def with_factor(self, n: int, factor: Matrix) -> "TuckerWrappedModel":
        factors = list(self.factors)
        factors[n] = factor
        return TuckerWrappedModel(tuple(factors), self.diagram, self.nodes, self.cached_core)

    def with_nodes(
        self,
        nodes: NodeTensorSet,
        diagram: TensorDiagram | None = None,
        factors: Sequence[Matrix] | None = None,
    ) -> "TuckerWrappedModel":
        return TuckerWrappedModel(
            tuple(self.factors if factors is None else factors),
            self.diagram if diagram is None else diagram,
            nodes,
        )

    def recomputed(self) -> "TuckerWrappedModel":
        """Same model with the core contracted again from the nodes."""
        return replace(self, cached_core=contract(self.diagram, self.nodes))

    def max_orthonormality_defect(self) -> float:
        return max(orthonormality_defect(factor) for factor in self.factors)
