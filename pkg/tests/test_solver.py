import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from tensor_completion import solver as solver_module
from tensor_completion.config import SolverConfig
from tensor_completion.errors import ObservationError, SolverError
from tensor_completion.model import TuckerWrappedModel
from tensor_completion.observation import ObservationSet, project, sample_mask
from tensor_completion.solver import (
    TRACE_CSV_HEADER,
    build_diagram,
    factor_design,
    orthonormalize_and_absorb,
    solve,
    truncate_ranks,
    truncated_rank,
    update_factor,
    update_nodes,
)
from tensor_completion.strategies import DirectRowwiseSolver
from tensor_completion.tensor_core import fro_norm, multi_mode_product, unfold
from tensor_completion.tn_graph import NodeTensorSet, make_topology, random_nodes


def _orthonormal(rows, cols, rng):
    return np.linalg.qr(rng.standard_normal((rows, cols)))[0]


def _single_model(dims, ranks, seed=0):
    rng = np.random.default_rng(seed)
    core = rng.standard_normal(ranks)
    factors = tuple(_orthonormal(size, r, rng) for size, r in zip(dims, ranks))
    diagram = make_topology("single", len(dims), (), ranks)
    return TuckerWrappedModel(factors, diagram, NodeTensorSet((core,)))


def _planted(dims, ranks, p, seed=0):
    model = _single_model(dims, ranks, seed)
    tensor = model.to_dense()
    observed = project(tensor, sample_mask(dims, p, seed=seed + 100))
    return model, tensor, observed


@pytest.mark.parametrize(("dims", "p"), [((4, 5, 3), 0.9), ((20, 20, 20), 0.05)])
def test_factor_design_rows_reproduce_observed_entries(dims, p):
    model, tensor, observed = _planted(dims, (2, 3, 2), p, seed=1)

    for n in range(3):
        design = factor_design(model.core, model.factors, observed.indices, n)
        values = np.einsum("sj,sj->s", design, model.factors[n][observed.indices[:, n]])

        assert design.shape == (observed.size, model.ranks[n])
        assert_allclose(values, observed.values, rtol=1e-10, atol=1e-12)


def test_update_factor_recovers_the_true_factor_span():
    model, _, observed = _planted((10, 10, 10), (2, 2, 2), 0.5, seed=2)

    update, empty = update_factor(model, observed, 1, DirectRowwiseSolver())

    assert empty == 0
    assert_allclose(update, model.factors[1], rtol=1e-8, atol=1e-10)


def test_update_factor_keeps_rows_without_observations(caplog):
    model, tensor, _ = _planted((4, 4), (2, 2), 1.0, seed=3)
    mask = sample_mask((4, 4), 1.0, seed=0)
    keep = mask.indices[:, 0] != 2
    observed = ObservationSet((4, 4), mask.indices[keep], tensor.ravel(order="F")[mask.linear[keep]])

    with caplog.at_level("WARNING", logger="tensor_completion.solver"):
        update, empty = update_factor(model, observed, 0, DirectRowwiseSolver())

    assert empty == 1
    assert_allclose(update[2], model.factors[0][2])
    assert "rows without usable observations" in caplog.text


def test_orthonormalize_and_absorb_preserves_the_represented_tensor():
    model = _single_model((6, 5, 4), (3, 2, 2), seed=4)
    before = model.to_dense()
    stretched = model.factors[0] @ np.array([[2.0, 0.3, 0.0], [0.0, 1.5, 0.2], [0.0, 0.0, 0.7]])
    shrunk_core = multi_mode_product(
        model.core, [np.linalg.inv(np.array([[2.0, 0.3, 0.0], [0.0, 1.5, 0.2], [0.0, 0.0, 0.7]])), None, None]
    )
    model = TuckerWrappedModel(model.factors, model.diagram, NodeTensorSet((shrunk_core,)))

    absorbed, deficient = orthonormalize_and_absorb(model, 0, stretched)

    assert deficient is False
    assert absorbed.max_orthonormality_defect() < 1e-12
    assert fro_norm(absorbed.to_dense() - before) <= 1e-10 * fro_norm(before)


def test_orthonormalize_and_absorb_flags_rank_deficient_updates(caplog):
    model = _single_model((5, 4), (2, 2), seed=5)
    deficient_update = np.column_stack([np.arange(1.0, 6.0), np.zeros(5)])

    with caplog.at_level("WARNING", logger="tensor_completion.solver"):
        absorbed, deficient = orthonormalize_and_absorb(model, 0, deficient_update)

    assert deficient is True
    assert absorbed.max_orthonormality_defect() < 1e-10
    assert "rank deficient" in caplog.text


def test_orthonormalize_and_absorb_rejects_wrong_shape():
    model = _single_model((5, 4), (2, 2))

    with pytest.raises(SolverError):
        orthonormalize_and_absorb(model, 0, np.zeros((5, 3)))


def test_truncated_rank_counts_well_conditioned_directions():
    assert truncated_rank(np.array([10.0, 1.0, 0.01]), 100.0) == 2
    assert truncated_rank(np.array([10.0, 1.0, 0.01]), 1.0) == 1


def test_truncate_ranks_is_a_no_op_for_well_conditioned_cores():
    model = _single_model((6, 6, 6), (2, 2, 2), seed=6)
    before = model.to_dense()

    truncated, changed = truncate_ranks(model, 1e12)

    assert changed is False
    assert truncated.ranks == (2, 2, 2)
    assert fro_norm(truncated.to_dense() - before) <= 1e-10 * fro_norm(before)


def test_truncate_ranks_drops_weak_directions_and_bounds_condition_numbers():
    rng = np.random.default_rng(7)
    core = np.zeros((3, 3, 3))
    core[0, 0, 0] = 2.0
    core[1, 1, 1] = 1.5
    core[:2, :2, :2] += 0.1 * rng.standard_normal((2, 2, 2))
    core[2, 2, 2] = 1e-6
    factors = tuple(_orthonormal(6, 3, rng) for _ in range(3))
    model = TuckerWrappedModel(factors, make_topology("single", 3, (), (3, 3, 3)), NodeTensorSet((core,)))

    truncated, changed = truncate_ranks(model, 100.0)

    assert changed is True
    assert truncated.ranks == (2, 2, 2)
    assert truncated.max_orthonormality_defect() < 1e-10
    for n in range(3):
        s = np.linalg.svd(unfold(truncated.core, n), compute_uv=False)
        assert s[0] <= 100.0 * s[-1]


def test_update_nodes_objective_is_nonincreasing():
    model, _, observed = _planted((8, 8, 8), (3, 3, 3), 0.4, seed=8)
    rng = np.random.default_rng(9)
    diagram = make_topology("tt", 3, (2, 2), (3, 3, 3))
    start = TuckerWrappedModel(model.factors, diagram, random_nodes(diagram, rng))

    _, report = update_nodes(start, observed, inner_tol=1e-12, inner_max=4, track_objective=True)

    objective = report.objective
    assert len(objective) >= 3
    assert all(b <= a * (1 + 1e-9) + 1e-12 for a, b in zip(objective, objective[1:]))


def test_update_nodes_lsqr_path_does_not_increase_the_residual():
    model, _, observed = _planted((8, 8, 8), (3, 3, 3), 0.4, seed=10)
    diagram = make_topology("single", 3, (), (3, 3, 3))
    start = TuckerWrappedModel(model.factors, diagram, NodeTensorSet((np.zeros((3, 3, 3)),)))
    config = SolverConfig(node_direct_max=1, inner_lsqr_iters=100)

    updated, report = update_nodes(start, observed, inner_max=1, config=config, track_objective=True)

    assert report.lsqr_nodes == 1
    assert report.objective[-1] <= observed.norm()
    assert fro_norm(updated.core - model.core) <= 1e-6 * fro_norm(model.core)


def test_build_diagram_uses_internal_weight_defaults():
    config = SolverConfig(internal_weight=5)

    assert build_diagram("tr", (3, 3, 3), config).internal_weights == (5, 5, 5)
    assert build_diagram("tt", (3, 3, 3), config).internal_weights == (5, 5)
    assert build_diagram("cp", (3, 3, 3), config).internal_weights == (5,)
    assert build_diagram("single", (3, 3, 3), config).internal_weights == ()


def test_solve_recovers_a_planted_tensor():
    _, tensor, observed = _planted((10, 10, 10), (2, 2, 2), 0.5, seed=11)
    config = SolverConfig(d0=(2, 2, 2), tol=1e-8, max_outer=50)

    result = solve(observed, "single", config)

    assert result.status == "converged"
    assert result.final_residual <= 1e-8
    assert fro_norm(result.model.to_dense() - tensor) <= 1e-5 * fro_norm(tensor)
    assert result.model.max_orthonormality_defect() < 1e-8


def test_solve_with_full_observation_converges_immediately():
    tensor = np.random.default_rng(12).standard_normal((4, 3, 5))
    observed = project(tensor, sample_mask(tensor.shape, 1.0, seed=0))

    result = solve(observed, "single", SolverConfig())

    assert result.status == "converged"
    assert result.iterations <= 2


def test_solve_with_tt_core_fits_the_observations():
    _, _, observed = _planted((8, 8, 8), (2, 2, 2), 0.6, seed=13)
    config = SolverConfig(d0=(2, 2, 2), internal_weight=2, tol=1e-6, max_outer=80)

    result = solve(observed, "tt", config)

    assert result.final_residual < 1e-3
    assert result.trace.records[-1].ranks == (2, 2, 2)


def test_solve_records_ground_truth_angles():
    model, _, observed = _planted((10, 10, 10), (2, 2, 2), 0.5, seed=14)

    result = solve(observed, "single", SolverConfig(d0=(2, 2, 2), max_outer=3), ground_truth=model.factors)

    assert all(len(record.sin_theta) == 3 for record in result.trace.records)
    assert all(0.0 <= value <= 1.0 for value in result.trace.records[-1].sin_theta)


def test_solve_rejects_empty_and_all_zero_observations():
    empty = sample_mask((3, 3, 3), 0.0, seed=0)
    zeros = sample_mask((3, 3, 3), 1.0, seed=0)

    with pytest.raises(ObservationError):
        solve(empty, "single")
    with pytest.raises(ObservationError):
        solve(zeros, "single")


def test_solve_is_deterministic_without_wall_time():
    _, _, observed = _planted((8, 8, 8), (2, 2, 2), 0.4, seed=15)
    config = SolverConfig(d0=(3, 3, 3), internal_weight=2, max_outer=5, record_wall_time=False)

    first = solve(observed, "tr", config).trace.to_csv()
    second = solve(observed, "tr", config).trace.to_csv()

    assert first == second


def test_trace_csv_layout():
    _, _, observed = _planted((6, 6, 6), (2, 2, 2), 0.6, seed=16)

    result = solve(observed, "single", SolverConfig(d0=(2, 2, 2), max_outer=2, record_wall_time=False))
    lines = result.trace.to_csv().splitlines()

    assert lines[0] == TRACE_CSV_HEADER == "iter,tau_raw,tau_norm,ranks,inner_sweeps,wall_ms,sin_theta"
    fields = lines[1].split(",")
    assert fields[0] == "1"
    assert fields[3] == "2|2|2"
    assert fields[5] == "0"
    assert fields[6] == ""


def test_solve_stops_when_the_residual_keeps_blowing_up(monkeypatch):
    _, _, observed = _planted((6, 6, 6), (2, 2, 2), 0.6, seed=17)
    residuals = iter([(0.5, 0.5)] + [(100.0, 100.0)] * 20)
    monkeypatch.setattr(solver_module, "observation_residual", lambda model, obs: next(residuals))

    result = solve(observed, "single", SolverConfig(d0=(2, 2, 2), max_outer=20))

    assert result.status == "diverged"
    assert result.iterations == 6
    assert math.isclose(result.final_residual, 100.0)


@pytest.mark.filterwarnings("error")
def test_update_nodes_from_a_zero_core_stays_finite():
    model, _, observed = _planted((6, 6, 6), (2, 2, 2), 0.7, seed=18)
    diagram = make_topology("single", 3, (), (2, 2, 2))
    start = TuckerWrappedModel(model.factors, diagram, NodeTensorSet((np.zeros((2, 2, 2)),)))

    updated, report = update_nodes(start, observed, inner_tol=1e-6, inner_max=3)

    assert report.sweeps == 1
    assert_allclose(updated.core, model.core, rtol=1e-8, atol=1e-10)


def test_update_factor_of_a_matrix_matches_the_pseudoinverse_solution():
    rng = np.random.default_rng(19)
    target = rng.standard_normal((5, 6))
    core = rng.standard_normal((2, 2))
    factors = (_orthonormal(5, 2, rng), _orthonormal(6, 2, rng))
    model = TuckerWrappedModel(factors, make_topology("single", 2, (), (2, 2)), NodeTensorSet((core,)))
    observed = project(target, sample_mask(target.shape, 1.0, seed=0))

    update, empty = update_factor(model, observed, 0, DirectRowwiseSolver())

    assert empty == 0
    assert_allclose(update, target @ factors[1] @ np.linalg.pinv(core), rtol=1e-8, atol=1e-10)
