from __future__ import annotations

import math
from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator

from tensor_completion.errors import DimensionMismatchError, RankError


class DirectRowwiseStrategy(BaseModel):
    model_config = ConfigDict(frozen=True)

    type: Literal["direct_rowwise"] = "direct_rowwise"


class SubsampledRowwiseStrategy(BaseModel):
    model_config = ConfigDict(frozen=True)

    type: Literal["subsampled_rowwise"] = "subsampled_rowwise"
    c: float = Field(
        default=3.0,
        ge=1.0,
        description="Observations kept per row are min(omega_i, ceil(c * r_n)).",
    )


class IterativeStrategy(BaseModel):
    model_config = ConfigDict(frozen=True)

    type: Literal["iterative"] = "iterative"
    max_mv: int = Field(
        default=200,
        gt=0,
        description="LSQR iteration cap; each iteration is one forward and one adjoint product.",
    )
    atol: float = Field(default=1e-10, gt=0.0, description="LSQR atol and btol.")


FactorStrategyConfig = Annotated[
    Union[DirectRowwiseStrategy, SubsampledRowwiseStrategy, IterativeStrategy],
    Field(discriminator="type"),
]


class SolverConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    d0: tuple[int, ...] | None = Field(
        default=None,
        description="Initial rank vector; must dominate the true multilinear rank. Defaults to the tensor dims.",
    )
    kappa: float | tuple[float, ...] = Field(
        default=100.0,
        description="Per-mode condition number bounds for rank truncation (a scalar applies to every mode).",
    )
    tol: float = Field(default=1e-4, gt=0.0, description="Normalized residual stopping tolerance.")
    max_outer: int = Field(default=50, gt=0, description="Outer iteration cap.")
    inner_tol: float = Field(default=1e-3, gt=0.0, description="Relative core change that ends the node sweeps.")
    inner_max: int = Field(default=10, gt=0, description="Node sweep cap per outer iteration.")
    factor_strategy: FactorStrategyConfig = Field(
        default_factory=DirectRowwiseStrategy,
        description="How each factor least-squares problem is solved.",
    )
    seed: int = Field(default=0, ge=0, description="Seed for node initialization and row subsampling.")
    init_tol: float = Field(default=1e-2, gt=0.0, description="Tolerance of the initial multilinear fit and node fit.")
    init_max_iters: int = Field(default=25, gt=0, description="Sweep cap of the initial fits.")
    internal_weight: int = Field(default=8, gt=0, description="Default weight of TT/TR/CP internal edges.")
    internal_weights: tuple[int, ...] | None = Field(
        default=None,
        description="Explicit internal edge weights; overrides internal_weight.",
    )
    node_direct_max: int = Field(
        default=1024,
        gt=0,
        description="Nodes with at most this many entries are updated by normal equations, larger ones by LSQR.",
    )
    inner_lsqr_iters: int = Field(default=50, gt=0, description="LSQR iteration cap for large node updates.")
    divergence_factor: float = Field(default=10.0, gt=1.0, description="Residual blow-up factor over the running minimum.")
    divergence_patience: int = Field(default=5, gt=0, description="Consecutive blown-up iterations before stopping.")
    record_wall_time: bool = Field(default=True, description="Record wall_ms in the trace; zero when disabled.")

    @field_validator("kappa")
    @classmethod
    def _validate_kappa(cls, value: float | tuple[float, ...]) -> float | tuple[float, ...]:
        values = value if isinstance(value, tuple) else (value,)
        if not values or any(not math.isfinite(k) or k < 1.0 for k in values):
            raise ValueError("kappa values must be finite and >= 1")
        return value

    @field_validator("d0", "internal_weights")
    @classmethod
    def _validate_positive(cls, value: tuple[int, ...] | None) -> tuple[int, ...] | None:
        if value is not None and (not value or any(v < 1 for v in value)):
            raise ValueError("rank vectors must be nonempty and positive")
        return value

    def kappa_vector(self, order: int) -> tuple[float, ...]:
        if isinstance(self.kappa, tuple):
            if len(self.kappa) != order:
                raise DimensionMismatchError(f"kappa has {len(self.kappa)} entries for an order-{order} tensor")
            return self.kappa
        return (float(self.kappa),) * order

    def initial_ranks(self, dims: tuple[int, ...]) -> tuple[int, ...]:
        """d0 capped entrywise by dims."""
        if self.d0 is None:
            return tuple(dims)
        if len(self.d0) != len(dims):
            raise RankError(f"d0 has {len(self.d0)} entries for an order-{len(dims)} tensor")
        return tuple(min(r, size) for r, size in zip(self.d0, dims))
