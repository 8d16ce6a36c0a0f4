from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from tensor_completion.config import FactorStrategyConfig, SolverConfig

BASE_DIR = Path(__file__).resolve().parents[1]
SETTINGS_SCHEMA_FILE = BASE_DIR / "conf" / "experiment.schema.json"
TOPOLOGY_NAMES = ("single", "cp", "tt", "tr")


class SettingsValidationError(ValueError):
    def __init__(self, message: str, *, errors: list[dict[str, Any]] | None = None) -> None:
        super().__init__(message)
        self.errors = errors or []


class SettingsSchemaModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _validate_non_blank(value: str) -> str:
    if not value.strip():
        raise ValueError("must not be blank")
    return value


def _format_error_path(loc: tuple[Any, ...]) -> str:
    path = ""
    for part in loc:
        if part == "__root__":
            continue
        if isinstance(part, int):
            path = f"{path}[{part}]"
            continue
        path = str(part) if not path else f"{path}.{part}"
    return path or "config"


def format_settings_validation_error(exc: ValidationError) -> str:
    lines = ["Settings validation failed:"]
    for error in exc.errors():
        path = _format_error_path(tuple(error.get("loc", ())))
        lines.append(f"- {path}: {error.get('msg', 'Invalid value')}")
    return "\n".join(lines)


class SolverSettings(SettingsSchemaModel):
    """Solver fields of an experiment file; unset fields fall back to SolverConfig defaults."""

    d0: list[int] | None = None
    kappa: float | list[float] | None = None
    tol: float | None = Field(default=None, gt=0)
    max_outer: int | None = Field(default=None, gt=0)
    inner_tol: float | None = Field(default=None, gt=0)
    inner_max: int | None = Field(default=None, gt=0)
    factor_strategy: FactorStrategyConfig | None = None
    init_tol: float | None = Field(default=None, gt=0)
    init_max_iters: int | None = Field(default=None, gt=0)
    internal_weight: int | None = Field(default=None, gt=0)
    internal_weights: list[int] | None = None
    node_direct_max: int | None = Field(default=None, gt=0)
    inner_lsqr_iters: int | None = Field(default=None, gt=0)
    record_wall_time: bool | None = None

    @field_validator("kappa")
    @classmethod
    def _validate_kappa(cls, value: float | list[float] | None) -> float | list[float] | None:
        values = value if isinstance(value, list) else [value] if value is not None else []
        if any(k < 1 for k in values) or value == []:
            raise ValueError("kappa values must be >= 1")
        return value

    @field_validator("d0", "internal_weights")
    @classmethod
    def _validate_positive_vector(cls, value: list[int] | None) -> list[int] | None:
        if value is not None and (not value or any(v < 1 for v in value)):
            raise ValueError("must be a nonempty list of positive integers")
        return value

    def to_config(self, seed: int, defaults: dict[str, Any] | None = None) -> SolverConfig:
        """SolverConfig from the fields set here, then `defaults`, then the model defaults."""
        data = dict(defaults or {})
        explicit = self.model_dump(exclude_none=True)
        for key in ("d0", "internal_weights"):
            if key in explicit:
                explicit[key] = tuple(explicit[key])
        if isinstance(explicit.get("kappa"), list):
            explicit["kappa"] = tuple(explicit["kappa"])
        if self.factor_strategy is not None:
            explicit["factor_strategy"] = self.factor_strategy
        data.update(explicit)
        return SolverConfig(seed=seed, **data)


class ExperimentSettings(SettingsSchemaModel):
    experiment: Literal["synthetic", "phase", "inpaint"]
    dims: list[int] | None = None
    rank: int | list[int] | None = None
    p: float | None = Field(default=None, ge=0, le=1)
    p_grid: list[float] | None = None
    r_grid: list[int] | None = None
    trials: int = Field(default=1, ge=1)
    topology: Literal["single", "cp", "tt", "tr"] = "single"
    topologies: list[Literal["single", "cp", "tt", "tr"]] | None = None
    noise_level: float = Field(default=0.0, ge=0)
    success_threshold: float = Field(default=1e-2, gt=0)
    image: str | None = None
    seed: int = Field(default=0, ge=0)
    solver: SolverSettings = Field(default_factory=SolverSettings)

    @field_validator("image")
    @classmethod
    def _validate_image(cls, value: str | None) -> str | None:
        if value is None:
            return None
        return _validate_non_blank(value)

    @field_validator("dims")
    @classmethod
    def _validate_dims(cls, value: list[int] | None) -> list[int] | None:
        if value is not None and (not value or any(size < 1 for size in value)):
            raise ValueError("dims must be a nonempty list of positive integers")
        return value

    @field_validator("p_grid")
    @classmethod
    def _validate_p_grid(cls, value: list[float] | None) -> list[float] | None:
        if value is None:
            return None
        if not value:
            raise ValueError("p_grid must not be empty")
        if any(not 0 <= p <= 1 for p in value):
            raise ValueError("p_grid values must lie in [0, 1]")
        return value

    @field_validator("r_grid")
    @classmethod
    def _validate_r_grid(cls, value: list[int] | None) -> list[int] | None:
        if value is None:
            return None
        if not value:
            raise ValueError("r_grid must not be empty")
        if any(r < 1 for r in value):
            raise ValueError("r_grid values must be positive")
        return value

    @model_validator(mode="after")
    def _validate_experiment_fields(self) -> "ExperimentSettings":
        missing: list[str] = []
        if self.experiment in {"synthetic", "phase"} and self.dims is None:
            missing.append("dims")
        if self.experiment == "synthetic":
            if self.rank is None:
                missing.append("rank")
            if self.p is None and self.p_grid is None:
                missing.append("p or p_grid")
        if self.experiment == "phase":
            if self.p_grid is None:
                missing.append("p_grid")
            if self.r_grid is None:
                missing.append("r_grid")
        if self.experiment == "inpaint":
            if self.image is None:
                missing.append("image")
            if self.p is None:
                missing.append("p")
            elif self.p == 0:
                raise ValueError("inpainting needs p in (0, 1]")
        if missing:
            raise ValueError(f"{self.experiment} experiment requires {', '.join(missing)}")
        if isinstance(self.rank, list) and self.dims is not None and len(self.rank) != len(self.dims):
            raise ValueError("rank must have one entry per dimension")
        if self.solver.d0 is not None and self.dims is not None and len(self.solver.d0) != len(self.dims):
            raise ValueError("solver.d0 must have one entry per dimension")
        return self

    def planted_ranks(self) -> tuple[int, ...]:
        assert self.dims is not None and self.rank is not None
        if isinstance(self.rank, list):
            return tuple(self.rank)
        return (self.rank,) * len(self.dims)

    def p_values(self) -> list[float]:
        if self.p_grid is not None:
            return list(self.p_grid)
        return [] if self.p is None else [self.p]

    def topology_list(self) -> list[str]:
        return list(self.topologies) if self.topologies else [self.topology]


class RuntimeSettings(SettingsSchemaModel):
    log_level: str = "INFO"
    workers: int = Field(default=1, ge=1)
    output_dir: str = "./results"

    @field_validator("log_level", "output_dir")
    @classmethod
    def _validate_non_blank_fields(cls, value: str) -> str:
        return _validate_non_blank(value)


def validate_experiment_data(data: dict[str, Any]) -> ExperimentSettings:
    try:
        return ExperimentSettings.model_validate(data)
    except ValidationError as exc:
        raise SettingsValidationError(
            format_settings_validation_error(exc),
            errors=exc.errors(),
        ) from exc


def validate_runtime_data(data: dict[str, Any]) -> RuntimeSettings:
    try:
        return RuntimeSettings.model_validate(data)
    except ValidationError as exc:
        raise SettingsValidationError(
            format_settings_validation_error(exc),
            errors=exc.errors(),
        ) from exc


def build_settings_json_schema() -> dict[str, Any]:
    return ExperimentSettings.model_json_schema()


def write_settings_json_schema(path: Path = SETTINGS_SCHEMA_FILE) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(build_settings_json_schema(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return path


if __name__ == "__main__":
    write_settings_json_schema()
