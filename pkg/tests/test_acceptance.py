"""Desk-scale recovery, phase, theory and inpainting checks. Run with `pytest -m slow`."""
import statistics

import numpy as np
import pytest

from tensor_completion.analysis import kron_angle_check, sandwich_test
from tensor_completion.services.inpainting import InpaintTask, builtin_texture, run_inpainting_task
from tensor_completion.services.phase import PhaseTask, run_phase_task, run_phase_transition
from tensor_completion.services.synthetic import (
    SyntheticTask,
    add_noise,
    planted_tucker,
    run_synthetic,
    run_synthetic_task,
)
from tensor_completion.settings_schema import validate_experiment_data

pytestmark = pytest.mark.slow


def _recovery_experiment(seed):
    return validate_experiment_data(
        {
            "experiment": "synthetic",
            "dims": [30, 30, 30],
            "rank": 5,
            "p": 0.3,
            "seed": seed,
            "solver": {"tol": 1e-4, "max_outer": 50, "kappa": 100},
        }
    )


@pytest.fixture(scope="module")
def recovery_runs():
    outcomes = []
    for seed in range(20):
        experiment = _recovery_experiment(seed)
        outcomes.append(run_synthetic_task(experiment, SyntheticTask((5, 5, 5), 0.3, "single", 0), seed))
    return outcomes


def test_exact_recovery_in_most_seeds(recovery_runs):
    converged = [o for o in recovery_runs if o.result.status == "converged" and o.result.final_residual <= 1e-4]

    assert len(converged) >= 18


def test_residual_decreases_linearly(recovery_runs):
    ratios = []
    for outcome in recovery_runs:
        if outcome.result.status != "converged":
            continue
        taus = [record.tau_norm for record in outcome.result.trace.records]
        tail = taus[len(taus) // 2 :]
        ratios.extend(b / a for a, b in zip(tail, tail[1:]) if a > 0)

    assert ratios
    assert statistics.median(ratios) < 0.9


def test_rank_truncation_reveals_the_planted_rank(recovery_runs):
    converged = [o for o in recovery_runs if o.result.status == "converged"]

    revealed = sum(o.result.model.ranks == (5, 5, 5) for o in converged)

    assert revealed >= 0.9 * len(converged)


def test_phase_transition_corners():
    experiment = validate_experiment_data(
        {
            "experiment": "phase",
            "dims": [30, 30, 30],
            "r_grid": [3, 12],
            "p_grid": [0.05, 0.4],
            "trials": 10,
            "solver": {"tol": 1e-4},
        }
    )

    easy = sum(run_phase_task(experiment, PhaseTask(3, 0.4, trial), seed=0) for trial in range(10))
    hard = sum(run_phase_task(experiment, PhaseTask(12, 0.05, trial), seed=0) for trial in range(10))

    assert easy >= 9
    assert hard <= 1


def test_core_fit_sandwich_at_desk_scale():
    planted = planted_tucker((12, 12, 12), (2, 2, 2), seed=3)
    noisy = add_noise(planted.tensor, 0.1, seed=4)

    report = sandwich_test(noisy, planted.factors, 0.5, trials=200, seed=5)

    assert report.lower_bound_holds
    assert report.fraction >= 0.95


@pytest.mark.parametrize("order", [2, 3, 4])
def test_kronecker_angle_bound_always_holds(order):
    rng = np.random.default_rng(order)
    for _ in range(100):
        factors, estimates = [], []
        for _ in range(order):
            rows, rank = int(rng.integers(3, 6)), int(rng.integers(1, 3))
            a = np.linalg.qr(rng.standard_normal((rows, rank)))[0]
            b = np.linalg.qr(a + rng.uniform(0.0, 1.0) * rng.standard_normal((rows, rank)))[0]
            factors.append(a)
            estimates.append(b)

        assert kron_angle_check(factors, estimates).holds


def test_tensor_train_core_beats_plain_tucker_on_the_texture():
    image = builtin_texture()
    experiment = validate_experiment_data({"experiment": "inpaint", "image": "builtin:texture", "p": 0.5})
    wins = 0
    for seed in range(10):
        single = run_inpainting_task(experiment, image, InpaintTask("single", 0), seed)
        tt = run_inpainting_task(experiment, image, InpaintTask("tt", 0), seed)
        wins += tt.psnr >= single.psnr + 1.0

    assert wins >= 7


def test_outputs_are_identical_for_one_and_eight_workers(tmp_path):
    experiment = validate_experiment_data(
        {
            "experiment": "synthetic",
            "dims": [12, 12, 12],
            "rank": 2,
            "p_grid": [0.2, 0.4],
            "topologies": ["single", "tt", "tr"],
            "trials": 2,
            "solver": {"max_outer": 10, "internal_weight": 3, "record_wall_time": False},
        }
    )

    run_synthetic(experiment, tmp_path / "serial", workers=1)
    run_synthetic(experiment, tmp_path / "threads", workers=8)

    for path in sorted((tmp_path / "serial").glob("*.csv")):
        assert path.read_bytes() == (tmp_path / "threads" / path.name).read_bytes()


def _iterations_to(outcome, level, cap):
    for record in outcome.result.trace.records:
        if record.tau_norm < level:
            return record.iteration
    return cap


def _mean_iterations(ranks, p, seeds=20, cap=50):
    counts = []
    for seed in range(seeds):
        experiment = _recovery_experiment(seed)
        outcome = run_synthetic_task(experiment, SyntheticTask(ranks, p, "single", 0), seed)
        counts.append(_iterations_to(outcome, 1e-3, cap))
    return statistics.fmean(counts)


def test_iterations_fall_with_p_and_grow_with_rank():
    by_p = [_mean_iterations((5, 5, 5), p) for p in (0.1, 0.2, 0.3)]
    by_r = [_mean_iterations((r, r, r), 0.2) for r in (3, 5, 8)]

    assert all(b <= a for a, b in zip(by_p, by_p[1:]))
    assert all(b >= a for a, b in zip(by_r, by_r[1:]))


def test_phase_grid_success_rises_along_p(tmp_path):
    experiment = validate_experiment_data(
        {
            "experiment": "phase",
            "dims": [30, 30, 30],
            "r_grid": [3, 5, 8, 10, 12],
            "p_grid": [0.05, 0.1, 0.2, 0.3, 0.4],
            "trials": 5,
            "solver": {"tol": 1e-4},
        }
    )

    cells = run_phase_transition(experiment, tmp_path, workers=4)

    rates = {(cell.r, cell.p): cell.success_rate for cell in cells}
    for r in experiment.r_grid:
        row = [rates[(r, p)] for p in experiment.p_grid]
        assert all(b >= a - 0.15 for a, b in zip(row, row[1:]))
