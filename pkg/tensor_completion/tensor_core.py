"""Dense tensor algebra in the column-major (first index fastest) convention.

The mode-n unfolding enumerates the remaining indices with the lowest mode
fastest, which is the ordering under which

    unfold(T x_1 A_1 ... x_N A_N, n) = A_n T_(n) (A_N kron ... kron A_1 without A_n)^T

holds literally. Modes are 0-based in every Python API; text files are 1-based.
"""
from __future__ import annotations

from functools import reduce
from pathlib import Path
from typing import Sequence

import numpy as np
import numpy.typing as npt

from tensor_completion.errors import DimensionMismatchError, ModeError

DenseTensor = npt.NDArray[np.float64]
Matrix = npt.NDArray[np.float64]

DIMS_PREFIX = "dims:"


def as_tensor(values: npt.ArrayLike) -> DenseTensor:
    tensor = np.asarray(values, dtype=np.float64)
    if tensor.ndim == 0:
        raise DimensionMismatchError("a tensor needs at least one mode")
    if any(size < 1 for size in tensor.shape):
        raise DimensionMismatchError(f"every dimension must be positive, got {tensor.shape}")
    return tensor


def from_column_major(data: npt.ArrayLike, dims: Sequence[int]) -> DenseTensor:
    flat = np.asarray(data, dtype=np.float64).ravel()
    dims = tuple(int(size) for size in dims)
    if flat.size != int(np.prod(dims)):
        raise DimensionMismatchError(
            f"data length {flat.size} does not match dims {dims} ({int(np.prod(dims))} entries)"
        )
    return as_tensor(flat.reshape(dims, order="F"))


def to_column_major(tensor: DenseTensor) -> npt.NDArray[np.float64]:
    return np.asarray(tensor, dtype=np.float64).ravel(order="F")


def _check_mode(n: int, order: int) -> int:
    if not 0 <= n < order:
        raise ModeError(f"mode {n} is out of range for an order-{order} tensor")
    return n


def unfold(tensor: DenseTensor, n: int) -> Matrix:
    tensor = np.asarray(tensor, dtype=np.float64)
    _check_mode(n, tensor.ndim)
    return np.moveaxis(tensor, n, 0).reshape((tensor.shape[n], -1), order="F")


def fold(matrix: Matrix, n: int, dims: Sequence[int]) -> DenseTensor:
    dims = tuple(int(size) for size in dims)
    _check_mode(n, len(dims))
    matrix = np.asarray(matrix, dtype=np.float64)
    rest = int(np.prod(dims)) // dims[n]
    if matrix.shape != (dims[n], rest):
        raise DimensionMismatchError(
            f"matrix of shape {matrix.shape} cannot be folded along mode {n} into {dims}"
        )
    moved = (dims[n],) + dims[:n] + dims[n + 1 :]
    return np.moveaxis(matrix.reshape(moved, order="F"), 0, n)


def mode_product(tensor: DenseTensor, matrix: Matrix, n: int) -> DenseTensor:
    tensor = np.asarray(tensor, dtype=np.float64)
    matrix = np.asarray(matrix, dtype=np.float64)
    _check_mode(n, tensor.ndim)
    if matrix.ndim != 2 or matrix.shape[1] != tensor.shape[n]:
        raise DimensionMismatchError(
            f"mode-{n} product needs a matrix with {tensor.shape[n]} columns, got {matrix.shape}"
        )
    return np.moveaxis(np.tensordot(matrix, tensor, axes=(1, n)), 0, n)


def multi_mode_product(
    tensor: DenseTensor,
    matrices: Sequence[Matrix | None],
    *,
    transpose: bool = False,
) -> DenseTensor:
    """Computes [[T; A_1, ..., A_N]]; a `None` entry skips that mode."""
    tensor = np.asarray(tensor, dtype=np.float64)
    if len(matrices) != tensor.ndim:
        raise DimensionMismatchError(
            f"expected {tensor.ndim} matrices for an order-{tensor.ndim} tensor, got {len(matrices)}"
        )
    result = tensor
    for n, matrix in enumerate(matrices):
        if matrix is None:
            continue
        result = mode_product(result, np.asarray(matrix).T if transpose else matrix, n)
    return result


def kron(left: Matrix, right: Matrix) -> Matrix:
    return np.kron(np.asarray(left, dtype=np.float64), np.asarray(right, dtype=np.float64))


def kron_all(matrices: Sequence[Matrix]) -> Matrix:
    """A_1 kron A_2 kron ... in the given order."""
    if not matrices:
        return np.ones((1, 1))
    return reduce(kron, matrices)


def reversed_kron_except(matrices: Sequence[Matrix], n: int) -> Matrix:
    """A_N kron ... kron A_{n+1} kron A_{n-1} kron ... kron A_1."""
    others = [matrix for k, matrix in enumerate(matrices) if k != n]
    return kron_all(others[::-1])


def fro_norm(tensor: DenseTensor) -> float:
    return float(np.linalg.norm(np.asarray(tensor, dtype=np.float64).ravel()))


def read_tensor_text(path: str | Path) -> DenseTensor:
    text = Path(path).read_text(encoding="utf-8")
    return parse_tensor_text(text)


def parse_tensor_text(text: str) -> DenseTensor:
    lines = text.strip().splitlines()
    if not lines or not lines[0].startswith(DIMS_PREFIX):
        raise DimensionMismatchError("tensor text must start with a 'dims:' line")
    dims = tuple(int(token) for token in lines[0][len(DIMS_PREFIX) :].split())
    values = np.array(" ".join(lines[1:]).split(), dtype=np.float64)
    return from_column_major(values, dims)


def format_tensor_text(tensor: DenseTensor) -> str:
    tensor = as_tensor(tensor)
    header = f"{DIMS_PREFIX} " + " ".join(str(size) for size in tensor.shape)
    body = " ".join(repr(float(value)) for value in to_column_major(tensor))
    return f"{header}\n{body}\n"


def write_tensor_text(path: str | Path, tensor: DenseTensor) -> Path:
    path = Path(path)
    path.write_text(format_tensor_text(tensor), encoding="utf-8")
    return path
