from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any

from tensor_completion.analysis import (
    canonical_angles,
    incoherence,
    kron_angle_check,
    sampling_threshold,
    sandwich_test,
)
from tensor_completion.errors import TensorCompletionError
from tensor_completion.initialization import hosvd
from tensor_completion.observation import scaled_zero_fill
from tensor_completion.randomness import derive_seed
from tensor_completion.services.results import (
    build_manifest,
    ensure_output_dir,
    json_ready,
    write_manifest,
    write_text_output,
)
from tensor_completion.services.synthetic import noisy_planted, observe_planted
from tensor_completion.settings_schema import ExperimentSettings

logger = logging.getLogger("tensor_completion.diagnostics")

DIAGNOSE_JSON_NAME = "diagnose.json"


def diagnose(experiment: ExperimentSettings, seed: int | None = None) -> dict[str, Any]:
    """Incoherence, sampling threshold, initial subspace angles and the core-fit sandwich for one synthetic draw."""
    if experiment.dims is None or experiment.rank is None:
        raise TensorCompletionError("diagnose needs an experiment with dims and rank")
    p_values = experiment.p_values()
    if not p_values:
        raise TensorCompletionError("diagnose needs p or p_grid")
    seed = experiment.seed if seed is None else seed
    ranks = experiment.planted_ranks()
    p = p_values[0]
    planted, observed = observe_planted(experiment, ranks, p, 0, seed)

    mu = [incoherence(factor) for factor in planted.factors]
    p_star = sampling_threshold(mu, ranks, experiment.dims)
    report: dict[str, Any] = {
        "dims": list(experiment.dims),
        "ranks": list(ranks),
        "p": p,
        "observed": observed.size,
        "incoherence": mu,
        "p_star": p_star,
    }
    if observed.size:
        start = hosvd(scaled_zero_fill(observed), ranks)
        angles = [canonical_angles(a, b) for a, b in zip(planted.factors, start.factors)]
        report["initial_sin_theta"] = [angle.sin_max for angle in angles]
        report["initial_angles"] = [angle.angles.tolist() for angle in angles]
        kron = kron_angle_check(planted.factors, start.factors)
        report["kron_sin_theta"] = {"lhs": kron.lhs, "rhs": kron.rhs, "holds": kron.holds}
    _, data = noisy_planted(experiment, ranks, 0, seed)
    sandwich = sandwich_test(
        data,
        planted.factors,
        p,
        experiment.trials,
        seed=derive_seed(seed, "diagnose-sandwich"),
    )
    report["sandwich"] = {
        "fraction": sandwich.fraction,
        "lower_bound_holds": sandwich.lower_bound_holds,
        "outside_sampling_regime": sandwich.outside_sampling_regime,
        "ratios": list(sandwich.ratios),
    }
    logger.info("diagnose: p*=%.3g, max incoherence %.3g", p_star, max(mu))
    return report


def run_diagnose(
    experiment: ExperimentSettings,
    output_dir: str | Path,
    seed: int | None = None,
) -> dict[str, Any]:
    seed = experiment.seed if seed is None else seed
    output_dir = ensure_output_dir(output_dir)
    report = json_ready(diagnose(experiment, seed))
    path = write_text_output(
        output_dir / DIAGNOSE_JSON_NAME, json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"
    )
    write_manifest(output_dir, build_manifest("diagnose", experiment, seed, [path]), experiment)
    return report
