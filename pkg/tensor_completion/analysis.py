"""Diagnostics that connect a run to the recovery theory: angles, incoherence, sampling threshold, oracles."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from tensor_completion.errors import DimensionMismatchError, OrthonormalityError, RankError
from tensor_completion.model import ORTHONORMALITY_TOL, orthonormality_defect
from tensor_completion.observation import sample_mask
from tensor_completion.randomness import derive_seed
from tensor_completion.tensor_core import DenseTensor, Matrix, fro_norm, kron_all, multi_mode_product

logger = logging.getLogger("tensor_completion.analysis")

SANDWICH_UPPER = 3.0 / math.sqrt(2.0) + 0.01
SANDWICH_LOWER = 1.0 - 1e-10
SAMPLING_REGIME_FACTOR = 4.0


@dataclass(frozen=True, eq=False)
class AngleReport:
    angles: np.ndarray
    sin_max: float


@dataclass(frozen=True, eq=False)
class OracleFit:
    core: DenseTensor
    phi: float


@dataclass(frozen=True)
class SandwichReport:
    fraction: float
    ratios: tuple[float, ...]
    lower_bound_holds: bool
    p_star: float
    outside_sampling_regime: bool


@dataclass(frozen=True)
class KronAngleCheck:
    lhs: float
    rhs: float
    holds: bool


def _full_column_rank(matrix: Matrix) -> bool:
    return np.linalg.matrix_rank(matrix) == matrix.shape[1]


def _require_orthonormal(factor: Matrix, name: str = "factor") -> Matrix:
    factor = np.asarray(factor, dtype=np.float64)
    if factor.ndim != 2 or orthonormality_defect(factor) > ORTHONORMALITY_TOL:
        raise OrthonormalityError(f"{name} does not have orthonormal columns")
    return factor


def canonical_angles(x: Matrix, y: Matrix) -> AngleReport:
    """Angles between range(x) and range(y), largest first."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2:
        raise DimensionMismatchError(f"canonical angles need equal shapes, got {x.shape} and {y.shape}")
    if not (_full_column_rank(x) and _full_column_rank(y)):
        raise RankError("canonical angles need full column rank inputs")
    angles = np.sort(np.clip(scipy.linalg.subspace_angles(x, y), 0.0, math.pi / 2))[::-1]
    return AngleReport(angles, float(np.sin(angles[0])))


def subspace_sin(x: Matrix, y: Matrix) -> float:
    """sin of the largest angle; column counts may differ."""
    return float(np.sin(np.max(scipy.linalg.subspace_angles(np.asarray(x), np.asarray(y)))))


def incoherence(factor: Matrix) -> float:
    factor = _require_orthonormal(factor)
    rows, rank = factor.shape
    return float(np.max(np.sum(factor**2, axis=1)) * rows / rank)


def sampling_threshold(mu: Sequence[float], ranks: Sequence[int], dims: Sequence[int]) -> float:
    """p* = (10/3)(log(2 prod I) + 5) max_n prod_{k != n} mu_k r_k / I_k."""
    if not len(mu) == len(ranks) == len(dims):
        raise DimensionMismatchError("mu, ranks and dims must have one entry per mode")
    terms = [m * r / size for m, r, size in zip(mu, ranks, dims)]
    spread = max(math.prod(terms[:n] + terms[n + 1 :]) for n in range(len(terms)))
    log_size = math.log(2.0) + sum(math.log(size) for size in dims)
    return (10.0 / 3.0) * (log_size + 5.0) * spread


def oracle_core_fit(tensor: DenseTensor, factors: Sequence[Matrix]) -> OracleFit:
    """Full-observation optimal core [[T; A^T]] and its error phi."""
    factors = [_require_orthonormal(factor, f"factor {n + 1}") for n, factor in enumerate(factors)]
    core = multi_mode_product(tensor, factors, transpose=True)
    return OracleFit(core, fro_norm(multi_mode_product(core, factors) - tensor))


def restricted_core_fit(tensor: DenseTensor, factors: Sequence[Matrix], indices: np.ndarray) -> DenseTensor:
    """Core minimizing the error of [[X; A]] on the given entries only."""
    ranks = tuple(factor.shape[1] for factor in factors)
    count = len(indices)
    design = np.ones((count, 1))
    # the first mode varies fastest in the column index
    for n in reversed(range(len(factors))):
        design = (design[:, :, None] * factors[n][indices[:, n]][:, None, :]).reshape(count, -1)
    if count == 0:
        return np.zeros(ranks)
    solution = np.linalg.lstsq(design, tensor[tuple(indices.T)], rcond=None)[0]
    return solution.reshape(ranks, order="F")


def sandwich_test(
    tensor: DenseTensor,
    factors: Sequence[Matrix],
    p: float,
    trials: int,
    seed: int = 0,
) -> SandwichReport:
    """Fraction of sampled masks whose restricted core error psi lies in [phi, (3/sqrt 2) phi]."""
    tensor = np.asarray(tensor, dtype=np.float64)
    oracle = oracle_core_fit(tensor, factors)
    mu = [incoherence(factor) for factor in factors]
    ranks = [factor.shape[1] for factor in factors]
    p_star = sampling_threshold(mu, ranks, tensor.shape)
    outside = p < SAMPLING_REGIME_FACTOR * p_star
    if outside:
        logger.warning("p=%.3g is below 4p*=%.3g: outside sampling regime", p, SAMPLING_REGIME_FACTOR * p_star)

    ratios: list[float] = []
    for trial in range(trials):
        mask = sample_mask(tensor.shape, p, derive_seed(seed, "sandwich", trial))
        core = restricted_core_fit(tensor, factors, mask.indices)
        psi = fro_norm(multi_mode_product(core, factors) - tensor)
        if oracle.phi == 0.0:
            ratios.append(1.0 if psi <= 1e-12 * max(fro_norm(tensor), 1.0) else math.inf)
        else:
            ratios.append(psi / oracle.phi)
    inside = [SANDWICH_LOWER <= ratio <= SANDWICH_UPPER for ratio in ratios]
    return SandwichReport(
        fraction=sum(inside) / trials if trials else 0.0,
        ratios=tuple(ratios),
        lower_bound_holds=all(ratio >= SANDWICH_LOWER for ratio in ratios),
        p_star=p_star,
        outside_sampling_regime=outside,
    )


def kron_angle_check(factors: Sequence[Matrix], estimates: Sequence[Matrix]) -> KronAngleCheck:
    """sin Theta of the Kronecker products against 2^((N-1)/2) max_k sin Theta_k."""
    if len(factors) != len(estimates) or not factors:
        raise DimensionMismatchError("need one estimate per factor")
    for n, (a, b) in enumerate(zip(factors, estimates)):
        if np.shape(a) != np.shape(b):
            raise DimensionMismatchError(f"factor {n + 1} has shape {np.shape(a)}, estimate {np.shape(b)}")
        _require_orthonormal(a, f"factor {n + 1}")
        _require_orthonormal(b, f"estimate {n + 1}")
    lhs = subspace_sin(kron_all(list(factors)), kron_all(list(estimates)))
    worst = max(subspace_sin(a, b) for a, b in zip(factors, estimates))
    rhs = 2.0 ** ((len(factors) - 1) / 2.0) * worst
    return KronAngleCheck(lhs, rhs, lhs <= rhs + 1e-10)


def psnr(reference: DenseTensor, test: DenseTensor, max_val: float = 255.0) -> float:
    """10 log10(max_val^2 / MSE) in dB; identical inputs give math.inf."""
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if reference.shape != test.shape:
        raise DimensionMismatchError(f"psnr needs equal shapes, got {reference.shape} and {test.shape}")
    if max_val <= 0.0:
        raise ValueError("max_val must be positive")
    mse = float(np.mean((reference - test) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val**2 / mse)
