"""The sampling operator: masks, observed entries, residuals and sampled evaluation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np
import numpy.typing as npt

from tensor_completion.errors import DimensionMismatchError, ObservationError
from tensor_completion.randomness import iter_counter_uniforms
from tensor_completion.tensor_core import DenseTensor, Matrix, multi_mode_product

if TYPE_CHECKING:
    from tensor_completion.model import TuckerWrappedModel

IndexArray = npt.NDArray[np.int64]

# Evaluate densely when the full tensor is at most this many times |Omega|.
DENSE_EVALUATION_RATIO = 8
# Upper bound on the entries of one batched contraction intermediate.
CONTRACTION_BUDGET = 1 << 22


def linear_index(indices: IndexArray, dims: Sequence[int]) -> IndexArray:
    if len(indices) == 0:
        return np.empty(0, dtype=np.int64)
    return np.ravel_multi_index(tuple(np.asarray(indices).T), tuple(dims), order="F").astype(np.int64)


def multi_index(linear: IndexArray, dims: Sequence[int]) -> IndexArray:
    if len(linear) == 0:
        return np.empty((0, len(dims)), dtype=np.int64)
    return np.stack(np.unravel_index(np.asarray(linear), tuple(dims), order="F"), axis=1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Omega with the observed values; multi-indices 0-based, sorted by linear index."""

    dims: tuple[int, ...]
    indices: IndexArray
    values: npt.NDArray[np.float64]
    p_nominal: float | None = None
    linear: IndexArray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        dims = tuple(int(size) for size in self.dims)
        if not dims or any(size < 1 for size in dims):
            raise DimensionMismatchError(f"invalid dims {self.dims}")
        indices = np.array(self.indices, dtype=np.int64).reshape(-1, len(dims))
        values = np.array(self.values, dtype=np.float64).ravel()
        if len(values) != len(indices):
            raise ObservationError(f"{len(indices)} indices but {len(values)} values")
        if len(indices) and ((indices < 0).any() or (indices >= np.array(dims)).any()):
            raise ObservationError("observed multi-index out of range")
        linear = linear_index(indices, dims)
        if len(linear) > 1 and not (np.diff(linear) > 0).all():
            raise ObservationError("observed multi-indices must be unique and sorted by linear index")
        indices.setflags(write=False)
        values.setflags(write=False)
        linear.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "linear", linear)

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return len(self.values)

    @property
    def total(self) -> int:
        return int(np.prod(self.dims))

    def with_values(self, values: npt.ArrayLike) -> "ObservationSet":
        return ObservationSet(self.dims, self.indices, np.asarray(values), self.p_nominal)

    def fiber_counts(self, n: int) -> IndexArray:
        """omega_{i,n}: number of observations in each row i of mode n."""
        return np.bincount(self.indices[:, n], minlength=self.dims[n]).astype(np.int64)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


def sample_mask(dims: Sequence[int], p: float, seed: int) -> ObservationSet:
    """Bernoulli(p) mask; entry k is kept iff u(seed, k) < p, so chunking never matters."""
    if not 0.0 <= p <= 1.0:
        raise ObservationError(f"sampling probability must lie in [0, 1], got {p}")
    dims = tuple(int(size) for size in dims)
    total = int(np.prod(dims))
    kept: list[IndexArray] = []
    for start, uniforms in iter_counter_uniforms(seed, total):
        kept.append(start + np.flatnonzero(uniforms < p).astype(np.int64))
    linear = np.concatenate(kept) if kept else np.empty(0, dtype=np.int64)
    return ObservationSet(dims, multi_index(linear, dims), np.zeros(len(linear)), p_nominal=p)


def project(tensor: DenseTensor, mask: ObservationSet) -> ObservationSet:
    tensor = np.asarray(tensor, dtype=np.float64)
    if tensor.shape != mask.dims:
        raise DimensionMismatchError(f"tensor dims {tensor.shape} do not match mask dims {mask.dims}")
    values = tensor.ravel(order="F")[mask.linear]
    return mask.with_values(values)


def residual(
    model_values: npt.ArrayLike,
    observed: ObservationSet,
    normalized: bool = False,
) -> float:
    model_values = np.asarray(model_values, dtype=np.float64).ravel()
    if model_values.shape != observed.values.shape:
        raise DimensionMismatchError(
            f"{model_values.size} model values for {observed.size} observations"
        )
    raw = float(np.linalg.norm(model_values - observed.values))
    if not normalized:
        return raw
    scale = observed.norm()
    if scale == 0.0:
        raise ObservationError("normalized residual is undefined when the observed entries are all zero")
    return raw / scale


def scaled_zero_fill(observed: ObservationSet) -> DenseTensor:
    if observed.size == 0:
        raise ObservationError("cannot build a zero-filled estimate from an empty observation set")
    flat = np.zeros(observed.total)
    flat[observed.linear] = observed.values * (observed.total / observed.size)
    return flat.reshape(observed.dims, order="F")


def _chunk_size(intermediate: int) -> int:
    return max(64, CONTRACTION_BUDGET // max(1, intermediate))


def evaluate_tucker_at(
    core: DenseTensor,
    factors: Sequence[Matrix],
    indices: IndexArray,
) -> npt.NDArray[np.float64]:
    """Entries of [[core; factors]] at the given 0-based multi-indices."""
    core = np.asarray(core, dtype=np.float64)
    dims = tuple(factor.shape[0] for factor in factors)
    if len(factors) != core.ndim:
        raise DimensionMismatchError(f"{len(factors)} factors for an order-{core.ndim} core")
    for n, factor in enumerate(factors):
        if factor.shape[1] != core.shape[n]:
            raise DimensionMismatchError(
                f"factor {n} has {factor.shape[1]} columns, core mode {n} has size {core.shape[n]}"
            )
    indices = np.asarray(indices, dtype=np.int64).reshape(-1, core.ndim)
    count = len(indices)
    if count == 0:
        return np.empty(0)
    if int(np.prod(dims)) <= DENSE_EVALUATION_RATIO * count:
        full = multi_mode_product(core, factors)
        return full.ravel(order="F")[linear_index(indices, dims)]

    values = np.empty(count)
    chunk = _chunk_size(core.size // max(1, core.shape[0]))
    for start in range(0, count, chunk):
        rows = indices[start : start + chunk]
        # contract the first mode with a sample axis, then fold in the others
        partial = np.tensordot(factors[0][rows[:, 0]], core, axes=(1, 0))
        for n in range(1, core.ndim):
            partial = np.einsum("sa,sa...->s...", factors[n][rows[:, n]], partial)
        values[start : start + chunk] = partial
    return values


def sampled_evaluate(model: "TuckerWrappedModel", mask: ObservationSet) -> npt.NDArray[np.float64]:
    if model.dims != mask.dims:
        raise DimensionMismatchError(f"model dims {model.dims} do not match mask dims {mask.dims}")
    return evaluate_tucker_at(model.core, model.factors, mask.indices)


def observation_residual(model: "TuckerWrappedModel", observed: ObservationSet) -> tuple[float, float]:
    """(raw, normalized) residual of a model on Omega."""
    values = sampled_evaluate(model, observed)
    raw = residual(values, observed)
    scale = observed.norm()
    return raw, (raw / scale if scale > 0.0 else math.inf if raw > 0.0 else 0.0)


OBSERVATION_DIMS_PREFIX = "dims:"
OBSERVATION_P_PREFIX = "p:"


def format_observation_text(observed: ObservationSet) -> str:
    lines = [
        f"{OBSERVATION_DIMS_PREFIX} " + " ".join(str(size) for size in observed.dims),
        f"{OBSERVATION_P_PREFIX} {'' if observed.p_nominal is None else repr(float(observed.p_nominal))}".rstrip(),
    ]
    for index, value in zip(observed.indices, observed.values):
        lines.append(" ".join(str(int(i) + 1) for i in index) + f" {float(value)!r}")
    return "\n".join(lines) + "\n"


def parse_observation_text(text: str) -> ObservationSet:
    lines = [line for line in text.splitlines() if line.strip()]
    if len(lines) < 2 or not lines[0].startswith(OBSERVATION_DIMS_PREFIX):
        raise ObservationError("observation text must start with 'dims:' and 'p:' lines")
    if not lines[1].startswith(OBSERVATION_P_PREFIX):
        raise ObservationError("second line of an observation file must be 'p: <float>'")
    dims = tuple(int(token) for token in lines[0][len(OBSERVATION_DIMS_PREFIX) :].split())
    p_text = lines[1][len(OBSERVATION_P_PREFIX) :].strip()
    p_nominal = float(p_text) if p_text else None
    order = len(dims)
    indices = np.empty((len(lines) - 2, order), dtype=np.int64)
    values = np.empty(len(lines) - 2)
    for row, line in enumerate(lines[2:]):
        tokens = line.split()
        if len(tokens) != order + 1:
            raise ObservationError(f"observation line {row + 3} needs {order} indices and a value")
        indices[row] = [int(token) - 1 for token in tokens[:order]]
        values[row] = float(tokens[order])
    return ObservationSet(dims, indices, values, p_nominal)


def read_observation_text(path: str | Path) -> ObservationSet:
    return parse_observation_text(Path(path).read_text(encoding="utf-8"))


def write_observation_text(path: str | Path, observed: ObservationSet) -> Path:
    path = Path(path)
    path.write_text(format_observation_text(observed), encoding="utf-8")
    return path
