from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from tensor_completion.errors import OutputPathError
from tensor_completion.settings import render_experiment_yaml
from tensor_completion.settings_schema import ExperimentSettings
from tensor_completion.solver import SolverTrace
from tensor_completion.version import get_describe_version

logger = logging.getLogger("tensor_completion.results")

PHASE_CSV_HEADER = "r,p,success_rate,trials"
MANIFEST_NAME = "manifest.json"
EXPERIMENT_ECHO_NAME = "experiment.yaml"


@dataclass(frozen=True)
class PhaseCell:
    r: int
    p: float
    successes: int
    trials: int

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials if self.trials else 0.0


def ensure_output_dir(path: str | Path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputPathError(f"cannot create output directory {path}: {exc}") from exc
    if not path.is_dir():
        raise OutputPathError(f"output path {path} is not a directory")
    return path


def write_text_output(path: Path, text: str) -> Path:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OutputPathError(f"cannot write {path}: {exc}") from exc
    logger.debug("wrote %s", path)
    return path


def format_probability(p: float) -> str:
    """Short, stable label for a probability, e.g. 0.3 -> '0.3'."""
    return repr(float(p))


def trace_file_name(prefix: str, **labels: object) -> str:
    parts = [prefix] + [f"{key}{value}" for key, value in labels.items()]
    return "_".join(parts) + ".csv"


def write_trace_csv(path: str | Path, trace: SolverTrace) -> Path:
    return write_text_output(Path(path), trace.to_csv())


def format_phase_csv(cells: Sequence[PhaseCell]) -> str:
    lines = [PHASE_CSV_HEADER]
    for cell in cells:
        lines.append(f"{cell.r},{format_probability(cell.p)},{cell.success_rate!r},{cell.trials}")
    return "\n".join(lines) + "\n"


def write_phase_csv(path: str | Path, cells: Sequence[PhaseCell]) -> Path:
    return write_text_output(Path(path), format_phase_csv(cells))


def build_manifest(
    command: str,
    experiment: ExperimentSettings | None,
    seed: int,
    outputs: Sequence[Path],
    extra: dict[str, Any] | None = None,
) -> dict[str, Any]:
    manifest: dict[str, Any] = {
        "command": command,
        "version": get_describe_version(),
        "seed": seed,
        "config": None if experiment is None else experiment.model_dump(mode="json", exclude_none=True),
        "outputs": sorted(path.name for path in outputs),
    }
    if extra:
        manifest.update(extra)
    return manifest


def json_number(value: float) -> float | str:
    """Non-finite floats as the strings "inf", "-inf" and "nan"."""
    if math.isfinite(value):
        return value
    if math.isnan(value):
        return "nan"
    return "inf" if value > 0 else "-inf"


def json_ready(value: Any) -> Any:
    if isinstance(value, dict):
        return {key: json_ready(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_ready(item) for item in value]
    if isinstance(value, float):
        return json_number(value)
    return value


def write_manifest(
    output_dir: str | Path,
    manifest: dict[str, Any],
    experiment: ExperimentSettings | None = None,
) -> Path:
    """manifest.json, plus the experiment echoed as YAML that `tc --config` accepts."""
    if experiment is not None:
        write_text_output(Path(output_dir) / EXPERIMENT_ECHO_NAME, render_experiment_yaml(experiment))
    path = Path(output_dir) / MANIFEST_NAME
    return write_text_output(path, json.dumps(manifest, indent=2, sort_keys=True, allow_nan=False, default=str) + "\n")
