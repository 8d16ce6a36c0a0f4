"""Two-level alternating least squares for Tucker-wrapped tensor networks.

Each outer iteration updates the wrapper factors one mode at a time (a
decoupled least-squares problem per mode followed by QR re-orthonormalization),
then sweeps over the node tensors of the core with the factors fixed, and
finally truncates every mode to the ranks whose core singular values stay
within the condition bound.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
import numpy.typing as npt
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, lsqr

from tensor_completion.analysis import subspace_sin
from tensor_completion.config import SolverConfig
from tensor_completion.errors import ObservationError, SolverError
from tensor_completion.initialization import initialize
from tensor_completion.logging_utils import TRACE_LEVEL, ensure_trace_level
from tensor_completion.model import TuckerWrappedModel
from tensor_completion.observation import (
    CONTRACTION_BUDGET,
    DENSE_EVALUATION_RATIO,
    ObservationSet,
    evaluate_tucker_at,
    observation_residual,
)
from tensor_completion.strategies import FactorProblem, FactorStrategy, build_factor_strategy
from tensor_completion.strategies.rowwise import RIDGE_FLOOR
from tensor_completion.tensor_core import DenseTensor, Matrix, fro_norm, multi_mode_product, unfold
from tensor_completion.tn_graph import (
    NodeTensorSet,
    TensorDiagram,
    contract,
    environment,
    make_topology,
    node_mode_update,
    normalize_cp_columns,
)

ensure_trace_level()
logger = logging.getLogger("tensor_completion.solver")

SolveStatus = Literal["converged", "max_outer", "diverged"]
TRACE_CSV_HEADER = "iter,tau_raw,tau_norm,ranks,inner_sweeps,wall_ms,sin_theta"


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    tau_raw: float
    tau_norm: float
    ranks: tuple[int, ...]
    inner_sweeps: int
    wall_ms: int
    sin_theta: tuple[float, ...] | None = None
    empty_rows: int = 0
    rank_deficient: int = 0
    zero_columns: int = 0
    lsqr_nodes: int = 0


@dataclass(frozen=True)
class SolverTrace:
    records: tuple[TraceRecord, ...] = ()

    def __len__(self) -> int:
        return len(self.records)

    def appended(self, record: TraceRecord) -> "SolverTrace":
        return SolverTrace(self.records + (record,))

    @property
    def residuals(self) -> list[float]:
        return [record.tau_norm for record in self.records]

    def to_csv(self) -> str:
        lines = [TRACE_CSV_HEADER]
        for record in self.records:
            sin_theta = "" if record.sin_theta is None else "|".join(repr(v) for v in record.sin_theta)
            lines.append(
                f"{record.iteration},{record.tau_raw!r},{record.tau_norm!r},"
                f"{'|'.join(str(r) for r in record.ranks)},{record.inner_sweeps},{record.wall_ms},{sin_theta}"
            )
        return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class SolveResult:
    model: TuckerWrappedModel
    trace: SolverTrace
    status: SolveStatus

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def final_residual(self) -> float:
        return self.trace.records[-1].tau_norm if self.trace.records else math.inf


@dataclass(frozen=True)
class NodeSweepReport:
    sweeps: int = 0
    zero_columns: int = 0
    lsqr_nodes: int = 0
    objective: tuple[float, ...] = field(default=())


def factor_design(
    core: DenseTensor,
    factors: Sequence[Matrix],
    indices: npt.NDArray[np.int64],
    n: int,
) -> Matrix:
    """Row s holds the mode-n fiber of [[core; A_k, k != n]] at observation s (|Omega| x r_n)."""
    core = np.asarray(core, dtype=np.float64)
    order = core.ndim
    count = len(indices)
    others = [k for k in range(order) if k != n]
    if not others:
        return np.tile(core.reshape(1, -1), (count, 1))
    partial_dims = [factors[k].shape[0] if k != n else core.shape[n] for k in range(order)]
    if int(np.prod(partial_dims)) <= DENSE_EVALUATION_RATIO * count:
        full = multi_mode_product(core, [None if k == n else factors[k] for k in range(order)])
        selector = tuple(indices[:, k] if k != n else slice(None) for k in range(order))
        picked = full[selector]
        # for n == 0 the adjacent index arrays stay behind the slice
        return picked.T if n == 0 else picked

    moved = np.moveaxis(core, n, -1)
    design = np.empty((count, core.shape[n]))
    chunk = max(64, CONTRACTION_BUDGET // max(1, moved.size // max(1, moved.shape[0])))
    for start in range(0, count, chunk):
        rows = indices[start : start + chunk]
        partial = np.tensordot(factors[others[0]][rows[:, others[0]]], moved, axes=(1, 0))
        for k in others[1:]:
            partial = np.einsum("sa,sa...->s...", factors[k][rows[:, k]], partial)
        design[start : start + chunk] = partial
    return design


def update_factor(
    model: TuckerWrappedModel,
    observed: ObservationSet,
    n: int,
    strategy: FactorStrategy,
    iteration: int = 0,
    seed: int = 0,
) -> tuple[Matrix, int]:
    """Least-squares update of A^(n) with the core and the other factors fixed.

    Returns X (not orthonormal) and the number of rows kept from the previous
    factor for lack of observations.
    """
    if not 0 <= n < model.order:
        raise SolverError(f"mode {n} is out of range for an order-{model.order} model")
    if observed.size == 0:
        raise SolverError(f"mode {n + 1} has no observations at all")
    design = factor_design(model.core, model.factors, observed.indices, n)
    problem = FactorProblem(
        design=design,
        rows=observed.indices[:, n],
        values=observed.values,
        previous=model.factors[n],
        mode=n,
        iteration=iteration,
        seed=seed,
    )
    solution = strategy.solve(problem)
    if solution.empty_rows:
        logger.warning(
            "mode %d: %d rows without usable observations keep their previous values",
            n + 1,
            solution.empty_rows,
        )
    return solution.matrix, solution.empty_rows


def _sign_fixed_qr(matrix: Matrix) -> tuple[Matrix, Matrix, bool]:
    """Economic QR with R_jj >= 0; vanishing pivots are floored at eps * ||X||."""
    eps = np.finfo(np.float64).eps
    q, r, pivots = scipy.linalg.qr(matrix, mode="economic", pivoting=True)
    diagonal = np.abs(np.diag(r))
    tiny = diagonal <= max(matrix.shape) * eps * diagonal[0]
    deficient = bool(tiny.any())
    if not deficient:
        q, r = np.linalg.qr(matrix)
        signs = np.where(np.diag(r) < 0.0, -1.0, 1.0)
        return q * signs, signs[:, None] * r, False
    r[tiny, tiny] = eps * np.linalg.norm(matrix)
    signs = np.where(np.diag(r) < 0.0, -1.0, 1.0)
    q, r = q * signs, signs[:, None] * r
    unpivoted = np.empty_like(r)
    unpivoted[:, pivots] = r
    return q, unpivoted, True


def orthonormalize_and_absorb(
    model: TuckerWrappedModel,
    n: int,
    matrix: Matrix,
) -> tuple[TuckerWrappedModel, bool]:
    """A^(n) <- Q and node (k_n, m_n) <- node x_{m_n} R where X = QR.

    The flag reports a rank-deficient X whose vanishing pivots were replaced
    by eps * ||X||.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != model.factors[n].shape:
        raise SolverError(f"factor update for mode {n + 1} has shape {matrix.shape}, expected {model.factors[n].shape}")
    q, r, deficient = _sign_fixed_qr(matrix)
    if deficient:
        logger.warning("mode %d: factor update is rank deficient; small pivots were floored", n + 1)
    leg = model.diagram.leg(n)
    nodes = node_mode_update(model.nodes, leg.node, leg.slot, r)
    factors = list(model.factors)
    factors[n] = q
    return model.with_nodes(nodes, factors=factors), deficient


def _node_design(
    env_tensor: DenseTensor,
    inner_count: int,
    free_modes: Sequence[int],
    own_modes: Sequence[int],
    factors: Sequence[Matrix],
    indices: npt.NDArray[np.int64],
) -> Matrix:
    count = len(indices)
    if free_modes:
        projected = multi_mode_product(
            env_tensor,
            [None] * inner_count + [factors[n] for n in free_modes],
        )
        selector = (slice(None),) * inner_count + tuple(indices[:, n] for n in free_modes)
        inner = np.moveaxis(projected[selector], -1, 0).reshape(count, -1)
    else:
        inner = np.broadcast_to(env_tensor.reshape(1, -1), (count, env_tensor.size))
    outer = np.ones((count, 1))
    for n in own_modes:
        outer = (outer[:, :, None] * factors[n][indices[:, n]][:, None, :]).reshape(count, -1)
    return (outer[:, :, None] * inner[:, None, :]).reshape(count, -1)


def _solve_normal(design: Matrix, values: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    normal = design.T @ design
    trace = float(np.trace(normal))
    if trace == 0.0:
        return np.zeros(design.shape[1])
    normal[np.diag_indices_from(normal)] += RIDGE_FLOOR * trace / design.shape[1]
    try:
        factor = scipy.linalg.cho_factor(normal)
        return scipy.linalg.cho_solve(factor, design.T @ values)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(design, values, rcond=None)[0]


def _update_node(
    model: TuckerWrappedModel,
    nodes: NodeTensorSet,
    k: int,
    observed: ObservationSet,
    config: SolverConfig,
) -> tuple[DenseTensor, bool]:
    """Least-squares update of node k over Omega; True when LSQR was used."""
    diagram = model.diagram
    env = environment(diagram, nodes, k)
    own_dims = [diagram.outgoing_weights[n] for n in env.own_modes]
    size = nodes[k].size
    if size <= config.node_direct_max:
        design = _node_design(
            env.tensor, len(env.inner_slots), env.free_modes, env.own_modes, model.factors, observed.indices
        )
        return env.assemble(_solve_normal(design, observed.values), own_dims), False

    shape = nodes[k].shape
    dims = model.dims

    def matvec(x: np.ndarray) -> np.ndarray:
        return evaluate_tucker_at(env.core(x.reshape(shape)), model.factors, observed.indices)

    def rmatvec(v: np.ndarray) -> np.ndarray:
        flat = np.zeros(observed.total)
        flat[observed.linear] = np.ravel(v)
        gradient = multi_mode_product(flat.reshape(dims, order="F"), model.factors, transpose=True)
        return env.pull_back(gradient).ravel()

    operator = LinearOperator((observed.size, size), matvec=matvec, rmatvec=rmatvec, dtype=np.float64)
    solution = lsqr(
        operator,
        observed.values,
        atol=1e-12,
        btol=1e-12,
        iter_lim=config.inner_lsqr_iters,
        x0=nodes[k].ravel(),
    )[0]
    return solution.reshape(shape), True


def update_nodes(
    model: TuckerWrappedModel,
    observed: ObservationSet,
    inner_tol: float | None = None,
    inner_max: int | None = None,
    config: SolverConfig | None = None,
    track_objective: bool = False,
) -> tuple[TuckerWrappedModel, NodeSweepReport]:
    """ALS over the node tensors with every A^(n) fixed.

    With `track_objective` the report lists the residual on Omega after every
    node update.
    """
    config = config or SolverConfig()
    inner_tol = config.inner_tol if inner_tol is None else inner_tol
    inner_max = config.inner_max if inner_max is None else inner_max
    diagram = model.diagram
    nodes = model.nodes
    core = model.core
    zero_columns = 0
    lsqr_nodes = 0
    objective: list[float] = []
    sweeps = 0
    for sweeps in range(1, inner_max + 1):
        used_lsqr = False
        for k in range(diagram.node_count):
            tensor, via_lsqr = _update_node(model, nodes, k, observed, config)
            used_lsqr |= via_lsqr
            lsqr_nodes += int(via_lsqr)
            nodes = nodes.replace(k, tensor)
            if diagram.kind == "cp" and k not in diagram.diagonal:
                nodes, zeros = normalize_cp_columns(diagram, nodes, k)
                if zeros:
                    logger.warning("CP factor node %d has %d zero columns; gamma set to 1", k + 1, zeros)
                zero_columns += zeros
            if track_objective or logger.isEnabledFor(TRACE_LEVEL):
                current = model.with_nodes(nodes)
                objective.append(observation_residual(current, observed)[0])
                logger.log(TRACE_LEVEL, "node %d updated: residual %.6e", k + 1, objective[-1])
        updated = contract(diagram, nodes)
        change = fro_norm(updated - core) / (fro_norm(core) or 1.0)
        logger.debug("inner sweep %d: relative core change %.3e", sweeps, change)
        core = updated
        if change < inner_tol or (diagram.node_count == 1 and not used_lsqr):
            break
    report = NodeSweepReport(sweeps, zero_columns, lsqr_nodes, tuple(objective))
    return TuckerWrappedModel(model.factors, diagram, nodes, core), report


def truncated_rank(singular_values: npt.NDArray[np.float64], kappa: float) -> int:
    """s = |{j : sigma_1 <= kappa * sigma_j}|."""
    if singular_values.size == 0:
        return 1
    return max(1, int(np.count_nonzero(singular_values[0] <= kappa * singular_values)))


def truncate_ranks(
    model: TuckerWrappedModel,
    kappa: float | Sequence[float],
) -> tuple[TuckerWrappedModel, bool]:
    """Drops core directions whose singular values exceed the condition bound.

    Passes repeat until no rank changes, so cond(G_(n)) <= kappa_n holds for
    every mode of the returned model.
    """
    kappas = tuple(kappa) if isinstance(kappa, Sequence) else (float(kappa),) * model.order
    if len(kappas) != model.order:
        raise SolverError(f"{len(kappas)} condition bounds for an order-{model.order} model")
    changed_any = False
    while True:
        changed = False
        for n in range(model.order):
            u, s, _ = np.linalg.svd(unfold(model.core, n), full_matrices=False)
            keep = truncated_rank(s, kappas[n])
            if keep >= model.ranks[n]:
                continue
            basis = u[:, :keep]
            leg = model.diagram.leg(n)
            nodes = node_mode_update(model.nodes, leg.node, leg.slot, basis.T)
            weights = list(model.diagram.outgoing_weights)
            weights[n] = keep
            factors = list(model.factors)
            factors[n] = model.factors[n] @ basis
            model = TuckerWrappedModel(
                tuple(factors), model.diagram.with_outgoing_weights(weights), nodes
            ).recomputed()
            logger.debug("mode %d truncated to rank %d", n + 1, keep)
            changed = True
        changed_any |= changed
        if not changed:
            return model, changed_any


def default_internal_weights(kind: str, order: int, config: SolverConfig) -> tuple[int, ...]:
    if config.internal_weights is not None:
        return config.internal_weights
    count = {"single": 0, "cp": 1, "tt": max(0, order - 1), "tr": order}.get(kind, 0)
    return (config.internal_weight,) * count


def build_diagram(kind: str, ranks: Sequence[int], config: SolverConfig) -> TensorDiagram:
    return make_topology(kind, len(ranks), default_internal_weights(kind, len(ranks), config), ranks)


def solve(
    observed: ObservationSet,
    diagram_kind: str | TensorDiagram,
    config: SolverConfig | None = None,
    ground_truth: Sequence[Matrix] | None = None,
) -> SolveResult:
    """Runs the two-level ALS until the normalized residual drops below tol."""
    config = config or SolverConfig()
    if observed.size == 0:
        raise ObservationError("cannot complete a tensor from an empty observation set")
    if observed.norm() == 0.0:
        raise ObservationError("observed entries are all zero; the normalized residual is undefined")
    d0 = config.initial_ranks(observed.dims)
    kappas = config.kappa_vector(observed.order)
    if isinstance(diagram_kind, TensorDiagram):
        diagram = diagram_kind.with_outgoing_weights(d0)
    else:
        diagram = build_diagram(diagram_kind, d0, config)
    strategy = build_factor_strategy(config.factor_strategy)

    model = initialize(observed, diagram, d0, config.init_tol, config.init_max_iters, config.seed)
    logger.info(
        "solving %s completion of dims %s from %d entries (d0=%s, strategy=%s)",
        diagram.kind or "custom",
        observed.dims,
        observed.size,
        d0,
        strategy.name,
    )

    trace = SolverTrace()
    status: SolveStatus = "max_outer"
    best = math.inf
    blown_up = 0
    for t in range(1, config.max_outer + 1):
        started = time.perf_counter()
        empty_rows = 0
        deficient = 0
        for n in range(model.order):
            update, empty = update_factor(model, observed, n, strategy, iteration=t, seed=config.seed)
            model, flagged = orthonormalize_and_absorb(model, n, update)
            empty_rows += empty
            deficient += int(flagged)
        model = model.recomputed()
        model, report = update_nodes(model, observed, config=config)
        model, _ = truncate_ranks(model, kappas)
        model = model.recomputed()

        tau_raw, tau_norm = observation_residual(model, observed)
        sin_theta = None
        if ground_truth is not None:
            sin_theta = tuple(subspace_sin(a, b) for a, b in zip(model.factors, ground_truth))
        wall_ms = int(round((time.perf_counter() - started) * 1000)) if config.record_wall_time else 0
        trace = trace.appended(
            TraceRecord(
                iteration=t,
                tau_raw=tau_raw,
                tau_norm=tau_norm,
                ranks=model.ranks,
                inner_sweeps=report.sweeps,
                wall_ms=wall_ms,
                sin_theta=sin_theta,
                empty_rows=empty_rows,
                rank_deficient=deficient,
                zero_columns=report.zero_columns,
                lsqr_nodes=report.lsqr_nodes,
            )
        )
        logger.info(
            "iteration %d: tau=%.3e (raw %.3e), ranks=%s, inner sweeps=%d",
            t,
            tau_norm,
            tau_raw,
            "|".join(str(r) for r in model.ranks),
            report.sweeps,
        )

        if tau_norm <= config.tol:
            status = "converged"
            break
        best = min(best, tau_norm)
        blown_up = blown_up + 1 if tau_norm > config.divergence_factor * best else 0
        if blown_up >= config.divergence_patience:
            status = "diverged"
            logger.warning("residual stayed above %.0fx its minimum for %d iterations", config.divergence_factor, blown_up)
            break

    logger.info("finished with status %s after %d iterations", status, len(trace))
    return SolveResult(model, trace, status)
