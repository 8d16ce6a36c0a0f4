from __future__ import annotations

import copy
import re
from pathlib import Path
from typing import TYPE_CHECKING, Any

import yaml

from tensor_completion.settings_schema import (
    ExperimentSettings,
    RuntimeSettings,
    SettingsValidationError,
    validate_experiment_data,
    validate_runtime_data,
)

if TYPE_CHECKING:
    from dynaconf import Dynaconf

BASE_DIR = Path(__file__).resolve().parents[1]
CONF_DIR = BASE_DIR / "conf"
SETTINGS_FILE = CONF_DIR / "settings.yaml"
SETTINGS_EXAMPLE_FILE = CONF_DIR / "settings.yaml.example"

_YAML_INT_PATTERN = re.compile(
    r"""^(?:
        [-+]?0b[0-1_]+
        |[-+]?0x[0-9a-fA-F_]+
        |[-+]?(?:0|[1-9][0-9_]*)
    )$""",
    re.X,
)
_RUNTIME_KEYS = ("log_level", "workers", "output_dir")


class _ExperimentLoader(yaml.SafeLoader):
    pass


# Leading-zero literals stay decimal; YAML 1.1 would read "010" as octal.
_ExperimentLoader.yaml_implicit_resolvers = copy.deepcopy(yaml.SafeLoader.yaml_implicit_resolvers)
for _first_char, _resolvers in list(_ExperimentLoader.yaml_implicit_resolvers.items()):
    _ExperimentLoader.yaml_implicit_resolvers[_first_char] = [
        resolver
        for resolver in _resolvers
        if resolver[0] != "tag:yaml.org,2002:int"
    ]
_ExperimentLoader.add_implicit_resolver(
    "tag:yaml.org,2002:int",
    _YAML_INT_PATTERN,
    list("-+0123456789"),
)


def load_default_settings_yaml() -> str:
    return SETTINGS_EXAMPLE_FILE.read_text(encoding="utf-8")


def ensure_settings_file() -> None:
    CONF_DIR.mkdir(parents=True, exist_ok=True)
    if not SETTINGS_FILE.exists():
        SETTINGS_FILE.write_text(
            load_default_settings_yaml(),
            encoding="utf-8",
        )


def load_settings() -> "Dynaconf":
    ensure_settings_file()
    from dynaconf import Dynaconf

    return Dynaconf(
        settings_files=[str(SETTINGS_FILE)],
        envvar_prefix="TC",
        environments=True,
        load_dotenv=True,
        merge_enabled=True,
    )


def runtime_settings(settings: Any | None = None) -> RuntimeSettings:
    """Validated runtime defaults (log level, workers, output dir) from settings.yaml and TC_* variables."""
    if settings is None:
        settings = load_settings()
    raw = settings.as_dict() if hasattr(settings, "as_dict") else dict(settings)
    lowered = {str(key).lower(): value for key, value in raw.items()}
    return validate_runtime_data({key: lowered[key] for key in _RUNTIME_KEYS if key in lowered})


def parse_experiment_yaml(raw_yaml: str) -> ExperimentSettings:
    try:
        parsed = yaml.load(raw_yaml, Loader=_ExperimentLoader) or {}
    except yaml.YAMLError as exc:
        raise SettingsValidationError(f"Experiment YAML is invalid: {exc}") from exc
    if not isinstance(parsed, dict):
        raise SettingsValidationError("Experiment YAML must be a mapping at the top level.")
    return validate_experiment_data(parsed)


def load_experiment(path: str | Path) -> ExperimentSettings:
    path = Path(path)
    try:
        raw_yaml = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SettingsValidationError(f"Cannot read experiment file {path}: {exc}") from exc
    return parse_experiment_yaml(raw_yaml)


def render_experiment_yaml(experiment: ExperimentSettings) -> str:
    return yaml.safe_dump(
        experiment.model_dump(mode="json", exclude_none=True),
        sort_keys=False,
        allow_unicode=True,
    )
