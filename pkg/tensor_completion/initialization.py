"""HOSVD, best multilinear-rank approximation and the node-tensor fit of the start model."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from tensor_completion.errors import DiagramError, ObservationError, RankError
from tensor_completion.logging_utils import TRACE_LEVEL, ensure_trace_level
from tensor_completion.model import TuckerWrappedModel
from tensor_completion.observation import ObservationSet, scaled_zero_fill
from tensor_completion.randomness import keyed_rng
from tensor_completion.tensor_core import DenseTensor, Matrix, fro_norm, mode_product, multi_mode_product, unfold
from tensor_completion.tn_graph import (
    NodeTensorSet,
    TensorDiagram,
    contract,
    environment,
    normalize_cp_columns,
    random_nodes,
    validate,
)

ensure_trace_level()
logger = logging.getLogger("tensor_completion.initialization")

DEFAULT_INIT_TOL = 1e-2
DEFAULT_INIT_MAX_ITERS = 25


@dataclass(frozen=True, eq=False)
class HosvdResult:
    core: DenseTensor
    factors: tuple[Matrix, ...]
    singular_values: tuple[np.ndarray, ...]

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(factor.shape[1] for factor in self.factors)

    def reconstruct(self) -> DenseTensor:
        return multi_mode_product(self.core, self.factors)


@dataclass(frozen=True, eq=False)
class MultilinearApprox:
    core: DenseTensor
    factors: tuple[Matrix, ...]
    errors: tuple[float, ...] = ()


@dataclass(frozen=True, eq=False)
class NodeFit:
    nodes: NodeTensorSet
    errors: tuple[float, ...] = field(default=())


def numerical_rank(singular_values: np.ndarray, dims: Sequence[int]) -> int:
    if singular_values.size == 0 or singular_values[0] == 0.0:
        return 1
    threshold = max(dims) * np.finfo(np.float64).eps * singular_values[0]
    return max(1, int(np.count_nonzero(singular_values > threshold)))


def _leading_left_singular_vectors(matrix: Matrix, rank: int) -> tuple[Matrix, np.ndarray]:
    full = rank > min(matrix.shape)
    u, s, _ = np.linalg.svd(matrix, full_matrices=full)
    return u[:, :rank], s


def _check_ranks(ranks: Sequence[int], dims: Sequence[int]) -> tuple[int, ...]:
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != len(dims):
        raise RankError(f"rank vector {ranks} does not match order {len(dims)}")
    if any(not 1 <= r <= size for r, size in zip(ranks, dims)):
        raise RankError(f"ranks {ranks} must satisfy 1 <= r_n <= I_n for dims {tuple(dims)}")
    return ranks


def hosvd(tensor: DenseTensor, ranks: Sequence[int] | None = None) -> HosvdResult:
    """Economic HOSVD, or the truncated one when `ranks` is given."""
    tensor = np.asarray(tensor, dtype=np.float64)
    dims = tensor.shape
    if ranks is not None:
        ranks = _check_ranks(ranks, dims)
    factors: list[Matrix] = []
    spectra: list[np.ndarray] = []
    for n in range(tensor.ndim):
        unfolded = unfold(tensor, n)
        rank = ranks[n] if ranks is not None else None
        if rank is None:
            u, s, _ = np.linalg.svd(unfolded, full_matrices=False)
            rank = numerical_rank(s, dims)
            u = u[:, :rank]
        else:
            u, s = _leading_left_singular_vectors(unfolded, rank)
        factors.append(u)
        spectra.append(s)
    core = multi_mode_product(tensor, factors, transpose=True)
    return HosvdResult(core, tuple(factors), tuple(spectra))


def best_multilinear_approx(
    tensor: DenseTensor,
    ranks: Sequence[int],
    tol: float = DEFAULT_INIT_TOL,
    max_iters: int = DEFAULT_INIT_MAX_ITERS,
) -> MultilinearApprox:
    """HOOI started from the truncated HOSVD."""
    tensor = np.asarray(tensor, dtype=np.float64)
    ranks = _check_ranks(ranks, tensor.shape)
    start = hosvd(tensor, ranks)
    factors = list(start.factors)
    core = start.core
    error = fro_norm(tensor - multi_mode_product(core, factors))
    errors = [error]
    scale = fro_norm(tensor)
    for sweep in range(max_iters):
        if error <= 1e-14 * scale:
            break
        for n in range(tensor.ndim):
            projected = multi_mode_product(
                tensor, [None if k == n else factors[k] for k in range(tensor.ndim)], transpose=True
            )
            factors[n], _ = _leading_left_singular_vectors(unfold(projected, n), ranks[n])
            core = mode_product(projected, factors[n].T, n)
        previous, error = error, fro_norm(tensor - multi_mode_product(core, factors))
        errors.append(error)
        logger.log(TRACE_LEVEL, "HOOI sweep %d: error %.6e", sweep + 1, error)
        if previous - error < tol * previous:
            break
    return MultilinearApprox(core, tuple(factors), tuple(errors))


def tt_svd_nodes(diagram: TensorDiagram, target: DenseTensor) -> NodeTensorSet:
    """Sequential SVD of `target` into the chain layout, zero-padded to the edge weights."""
    dims = target.shape
    order = len(dims)
    weights = diagram.internal_weights
    cores: list[DenseTensor] = []
    remainder = target.reshape(dims[0], -1)
    left = 1
    for n in range(order - 1):
        remainder = remainder.reshape(left * dims[n], -1)
        u, s, vt = np.linalg.svd(remainder, full_matrices=False)
        rank = min(weights[n], s.size)
        core = np.zeros((weights[n - 1] if n > 0 else 1, dims[n], weights[n]))
        core[:left, :, :rank] = u[:, :rank].reshape(left, dims[n], rank)
        cores.append(core)
        remainder = s[:rank, None] * vt[:rank]
        left = rank
    last = np.zeros((weights[order - 2], dims[order - 1]))
    last[:left] = remainder.reshape(left, dims[order - 1])
    cores.append(last)
    cores[0] = cores[0][0]
    return NodeTensorSet(tuple(cores), diagram.diagonal)


def _starting_nodes(diagram: TensorDiagram, target: DenseTensor, seed: int) -> NodeTensorSet:
    if diagram.kind == "tt" and diagram.order > 1:
        return tt_svd_nodes(diagram, target)
    nodes = random_nodes(diagram, keyed_rng(seed))
    scale = fro_norm(target)
    current = fro_norm(contract(diagram, nodes))
    if scale > 0.0 and current > 0.0 and diagram.kind == "cp":
        lam = next(iter(diagram.diagonal))
        nodes = nodes.replace(lam, nodes[lam] * (scale / current))
    return nodes


def _solve_node(diagram: TensorDiagram, nodes: NodeTensorSet, k: int, target: DenseTensor) -> DenseTensor:
    """Dense least-squares update of node k against the full target core."""
    env = environment(diagram, nodes, k)
    env_matrix = env.tensor.reshape(int(np.prod(env.inner_shape)), -1)
    own_dims = [target.shape[n] for n in env.own_modes]
    rhs = np.transpose(target, env.own_modes + env.free_modes).reshape(int(np.prod(own_dims)), -1)
    solution, *_ = np.linalg.lstsq(env_matrix.T, rhs.T, rcond=None)
    return env.assemble(solution.T, own_dims)


def node_fit_sweeps(
    diagram: TensorDiagram,
    target: DenseTensor,
    tol: float = DEFAULT_INIT_TOL,
    max_iters: int = DEFAULT_INIT_MAX_ITERS,
    seed: int = 0,
) -> NodeFit:
    """ALS over node tensors; errors holds the fit error after every node update."""
    target = np.asarray(target, dtype=np.float64)
    violations = validate(diagram)
    if violations:
        raise DiagramError("invalid tensor diagram: " + "; ".join(violations), violations=violations)
    if diagram.outgoing_weights != target.shape:
        raise DiagramError(
            f"diagram outgoing weights {diagram.outgoing_weights} do not match core dims {target.shape}"
        )
    if diagram.node_count == 1 and not diagram.diagonal:
        order = [slot.ref for slot in diagram.nodes[0]]
        nodes = NodeTensorSet((np.transpose(target, order).copy(),), diagram.diagonal)
        return NodeFit(nodes, (0.0,))

    nodes = _starting_nodes(diagram, target, seed)
    error = fro_norm(contract(diagram, nodes) - target)
    errors = [error]
    scale = fro_norm(target)
    # ascending node ids; the CP Lambda is the last node
    for sweep in range(max_iters):
        if error <= 1e-14 * max(scale, 1.0):
            break
        start = error
        for k in range(diagram.node_count):
            nodes = nodes.replace(k, _solve_node(diagram, nodes, k, target))
            if diagram.kind == "cp" and k not in diagram.diagonal:
                nodes, _ = normalize_cp_columns(diagram, nodes, k)
            error = fro_norm(contract(diagram, nodes) - target)
            errors.append(error)
        logger.log(TRACE_LEVEL, "node fit sweep %d: error %.6e", sweep + 1, error)
        if start - error < tol * start:
            break
    return NodeFit(nodes, tuple(errors))


def fit_node_tensors(
    diagram: TensorDiagram,
    target: DenseTensor,
    tol: float = DEFAULT_INIT_TOL,
    max_iters: int = DEFAULT_INIT_MAX_ITERS,
    seed: int = 0,
) -> NodeTensorSet:
    return node_fit_sweeps(diagram, target, tol, max_iters, seed).nodes


def initialize(
    observed: ObservationSet,
    diagram: TensorDiagram,
    d0: Sequence[int],
    tol: float = DEFAULT_INIT_TOL,
    max_iters: int = DEFAULT_INIT_MAX_ITERS,
    seed: int = 0,
) -> TuckerWrappedModel:
    if observed.size == 0:
        raise ObservationError("cannot initialize from an empty observation set")
    d0 = _check_ranks(d0, observed.dims)
    if diagram.outgoing_weights != d0:
        diagram = diagram.with_outgoing_weights(d0)
    approx = best_multilinear_approx(scaled_zero_fill(observed), d0, tol, max_iters)
    nodes = fit_node_tensors(diagram, approx.core, tol, max_iters, seed)
    model = TuckerWrappedModel(approx.factors, diagram, nodes)
    logger.debug(
        "initialized %s core at ranks %s: HOOI error %.4e, core fit error %.4e",
        diagram.kind or "custom",
        d0,
        approx.errors[-1],
        fro_norm(model.core - approx.core),
    )
    return model
