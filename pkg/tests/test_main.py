import json
import logging

import pytest

from tensor_completion.main import EXIT_CONFIG_ERROR, EXIT_FAILURE, EXIT_OK, build_parser, main
from tensor_completion.settings_schema import RuntimeSettings

SYNTHETIC_YAML = """\
experiment: synthetic
dims: [5, 5, 5]
rank: 1
p: 0.8
noise_level: 0.1
trials: 2
solver:
  max_outer: 2
  record_wall_time: false
"""


@pytest.fixture(autouse=True)
def restore_root_logger():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture
def runtime(tmp_path):
    return RuntimeSettings(log_level="WARNING", workers=1, output_dir=str(tmp_path / "results"))


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_parser_reads_common_flags():
    args = build_parser().parse_args(["phase", "--config", "exp.yaml", "--seed", "3", "--workers", "4"])

    assert args.command == "phase"
    assert args.seed == 3
    assert args.workers == 4
    assert args.out is None


def test_version_flag_prints_program_name(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["--version"])

    assert excinfo.value.code == 0
    assert capsys.readouterr().out.startswith("tc ")


def test_synth_writes_results_to_the_runtime_output_dir(tmp_path, runtime):
    config = _write(tmp_path, "synth.yaml", SYNTHETIC_YAML)

    code = main(["synth", "--config", str(config)], runtime=runtime)

    assert code == EXIT_OK
    assert (tmp_path / "results" / "summary.csv").exists()
    assert (tmp_path / "results" / "manifest.json").exists()


def test_out_flag_and_seed_override_the_defaults(tmp_path, runtime):
    config = _write(tmp_path, "synth.yaml", SYNTHETIC_YAML)

    code = main(["synth", "--config", str(config), "--out", str(tmp_path / "elsewhere"), "--seed", "9"], runtime=runtime)

    manifest = json.loads((tmp_path / "elsewhere" / "manifest.json").read_text(encoding="utf-8"))
    assert code == EXIT_OK
    assert manifest["seed"] == 9
    assert manifest["command"] == "synth"


def test_diagnose_prints_and_writes_the_report(tmp_path, runtime, capsys):
    config = _write(tmp_path, "synth.yaml", SYNTHETIC_YAML)

    code = main(["diagnose", "--config", str(config), "--out", str(tmp_path / "diag")], runtime=runtime)

    printed = json.loads(capsys.readouterr().out)
    assert code == EXIT_OK
    assert printed["ranks"] == [1, 1, 1]
    assert len(printed["sandwich"]["ratios"]) == 2
    assert (tmp_path / "diag" / "diagnose.json").exists()


def test_missing_config_is_a_config_error(tmp_path, runtime):
    assert main(["synth", "--config", str(tmp_path / "nope.yaml")], runtime=runtime) == EXIT_CONFIG_ERROR


def test_command_and_experiment_kind_must_agree(tmp_path, runtime):
    config = _write(tmp_path, "synth.yaml", SYNTHETIC_YAML)

    assert main(["phase", "--config", str(config)], runtime=runtime) == EXIT_CONFIG_ERROR


def test_zero_workers_is_a_config_error(tmp_path, runtime):
    config = _write(tmp_path, "synth.yaml", SYNTHETIC_YAML)

    assert main(["synth", "--config", str(config), "--workers", "0"], runtime=runtime) == EXIT_CONFIG_ERROR


def test_solver_errors_exit_with_failure(tmp_path, runtime):
    config = _write(
        tmp_path,
        "inpaint.yaml",
        "experiment: inpaint\nimage: builtin:texture\np: 0.5\nsolver:\n  d0: [2, 2]\n",
    )

    assert main(["inpaint", "--config", str(config)], runtime=runtime) == EXIT_FAILURE


def test_unreadable_image_exits_with_failure(tmp_path, runtime):
    config = _write(tmp_path, "inpaint.yaml", f"experiment: inpaint\nimage: {tmp_path / 'none.ppm'}\np: 0.5\n")

    assert main(["inpaint", "--config", str(config)], runtime=runtime) == EXIT_FAILURE
