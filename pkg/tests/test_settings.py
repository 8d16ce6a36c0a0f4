import json
from pathlib import Path

import pytest
import yaml

from tensor_completion import settings as settings_module
from tensor_completion.config import IterativeStrategy, SolverConfig
from tensor_completion.errors import DimensionMismatchError, RankError
from tensor_completion.settings import (
    load_default_settings_yaml,
    load_experiment,
    parse_experiment_yaml,
    render_experiment_yaml,
    runtime_settings,
)
from tensor_completion.settings_schema import (
    SettingsValidationError,
    SolverSettings,
    build_settings_json_schema,
    validate_runtime_data,
    write_settings_json_schema,
)

EXPERIMENTS_DIR = Path(__file__).resolve().parents[1] / "conf" / "experiments"


@pytest.mark.parametrize("path", sorted(EXPERIMENTS_DIR.glob("*.yaml")), ids=lambda path: path.name)
def test_bundled_experiment_files_are_valid(path):
    experiment = load_experiment(path)

    assert experiment.experiment in {"synthetic", "phase", "inpaint"}


def test_synthetic_experiment_expands_scalar_rank():
    experiment = parse_experiment_yaml("experiment: synthetic\ndims: [4, 5, 6]\nrank: 2\np: 0.3\n")

    assert experiment.planted_ranks() == (2, 2, 2)
    assert experiment.p_values() == [0.3]
    assert experiment.topology_list() == ["single"]


def test_leading_zero_integers_stay_decimal():
    experiment = parse_experiment_yaml("experiment: synthetic\ndims: [010, 10, 10]\nrank: 2\np: 0.3\nseed: 010\n")

    assert experiment.dims == [10, 10, 10]
    assert experiment.seed == 10


def test_missing_required_fields_are_reported():
    with pytest.raises(SettingsValidationError) as excinfo:
        parse_experiment_yaml("experiment: phase\ndims: [5, 5, 5]\n")

    assert "p_grid" in str(excinfo.value)
    assert "r_grid" in str(excinfo.value)


def test_field_errors_name_the_path():
    with pytest.raises(SettingsValidationError) as excinfo:
        parse_experiment_yaml("experiment: synthetic\ndims: [4, 4]\nrank: 2\np: 0.3\nsolver:\n  max_outer: 0\n")

    message = str(excinfo.value)
    assert message.startswith("Settings validation failed:")
    assert "- solver.max_outer:" in message


@pytest.mark.parametrize(
    "raw",
    [
        "experiment: synthetic\ndims: [4, 4]\nrank: [2, 2, 2]\np: 0.3\n",
        "experiment: synthetic\ndims: [4, 4]\nrank: 2\np_grid: [0.3, 1.5]\n",
        "experiment: inpaint\nimage: builtin:texture\np: 0\n",
        "experiment: synthetic\ndims: [4, 4]\nrank: 2\np: 0.3\nsolver:\n  d0: [3]\n",
        "experiment: synthetic\ndims: [4, 4]\nrank: 2\np: 0.3\nsolver:\n  kappa: 0.5\n",
        "experiment: synthetic\ndims: [4, 4]\nrank: 2\np: 0.3\nunknown: 1\n",
        "experiment: tucker\n",
        "- just\n- a list\n",
        "experiment: [unclosed\n",
    ],
)
def test_invalid_experiment_files_are_rejected(raw):
    with pytest.raises(SettingsValidationError):
        parse_experiment_yaml(raw)


def test_load_experiment_reports_missing_files(tmp_path):
    with pytest.raises(SettingsValidationError, match="Cannot read"):
        load_experiment(tmp_path / "missing.yaml")


def test_load_experiment_accepts_json(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps({"experiment": "inpaint", "image": "builtin:texture", "p": 0.4}), encoding="utf-8")

    experiment = load_experiment(path)

    assert experiment.image == "builtin:texture"


def test_render_experiment_yaml_roundtrip():
    experiment = parse_experiment_yaml("experiment: phase\ndims: [5, 5, 5]\nr_grid: [1, 2]\np_grid: [0.1]\n")

    assert parse_experiment_yaml(render_experiment_yaml(experiment)) == experiment


def test_solver_settings_fill_in_defaults_behind_explicit_fields():
    solver = SolverSettings(tol=1e-6, d0=[3, 3, 3], kappa=[10, 20, 30])

    config = solver.to_config(seed=5, defaults={"d0": (4, 4, 4), "max_outer": 7})

    assert config.d0 == (3, 3, 3)
    assert config.max_outer == 7
    assert config.tol == 1e-6
    assert config.kappa == (10, 20, 30)
    assert config.seed == 5


def test_solver_settings_parse_the_factor_strategy():
    solver = SolverSettings.model_validate({"factor_strategy": {"type": "iterative", "max_mv": 40}})

    config = solver.to_config(seed=0)

    assert config.factor_strategy == IterativeStrategy(max_mv=40)


def test_solver_config_checks_vector_lengths_against_the_tensor():
    config = SolverConfig(d0=(2, 2), kappa=(10.0, 10.0))

    assert config.initial_ranks((1, 5)) == (1, 2)
    with pytest.raises(RankError):
        config.initial_ranks((4, 4, 4))
    with pytest.raises(DimensionMismatchError):
        config.kappa_vector(3)


def test_runtime_settings_read_lowercased_keys():
    runtime = runtime_settings({"LOG_LEVEL": "DEBUG", "WORKERS": 4, "OUTPUT_DIR": "/tmp/tc", "OTHER": 1})

    assert runtime.log_level == "DEBUG"
    assert runtime.workers == 4
    assert runtime.output_dir == "/tmp/tc"


def test_runtime_settings_reject_zero_workers():
    with pytest.raises(SettingsValidationError):
        validate_runtime_data({"workers": 0})


def test_default_settings_yaml_has_runtime_defaults():
    parsed = yaml.safe_load(load_default_settings_yaml())

    assert parsed["default"] == {"log_level": "INFO", "workers": 1, "output_dir": "./results"}


def test_ensure_settings_file_copies_the_example(tmp_path, monkeypatch):
    monkeypatch.setattr(settings_module, "CONF_DIR", tmp_path)
    monkeypatch.setattr(settings_module, "SETTINGS_FILE", tmp_path / "settings.yaml")

    settings_module.ensure_settings_file()

    assert (tmp_path / "settings.yaml").read_text(encoding="utf-8") == load_default_settings_yaml()


def test_json_schema_lists_experiment_kinds(tmp_path):
    schema = build_settings_json_schema()

    path = write_settings_json_schema(tmp_path / "schema.json")

    assert schema["properties"]["experiment"]["enum"] == ["synthetic", "phase", "inpaint"]
    assert json.loads(path.read_text(encoding="utf-8")) == schema
