"""Image inpainting: an h x w x 3 image becomes a fifth-order tensor, is subsampled, completed and mapped back.

Each spatial dimension n is split as n = a * b with the pair closest to a square
and the larger factor first; pixel index i maps to (i mod a, i div a), so the
fine index varies fastest. Dimensions without such a split (primes and 1) are
padded by edge replication to the next size that has one.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from tensor_completion.analysis import psnr
from tensor_completion.config import SolverConfig
from tensor_completion.errors import ImageFormatError
from tensor_completion.observation import project, sample_mask
from tensor_completion.randomness import derive_seed
from tensor_completion.services.image_io import PPM_MAXVAL, Image, load_image, save_image
from tensor_completion.services.results import (
    build_manifest,
    ensure_output_dir,
    format_probability,
    json_number,
    trace_file_name,
    write_manifest,
    write_text_output,
    write_trace_csv,
)
from tensor_completion.services.runner import run_ordered
from tensor_completion.settings_schema import ExperimentSettings
from tensor_completion.solver import SolveResult, solve
from tensor_completion.tensor_core import DenseTensor

logger = logging.getLogger("tensor_completion.inpainting")

BUILTIN_TEXTURE = "builtin:texture"
TEXTURE_SHAPE = (60, 90)
PSNR_CSV_HEADER = "topology,trial,p,psnr,status,iterations,ranks"
INPAINT_D0 = (8, 8, 8, 8, 3)
INPAINT_DEFAULTS: dict[str, object] = {
    "d0": INPAINT_D0,
    "kappa": 100.0,
    "node_direct_max": 128,
    "inner_max": 3,
    "max_outer": 30,
}


@dataclass(frozen=True)
class ImageReshape:
    height: int
    width: int
    padded_height: int
    padded_width: int
    tensor_dims: tuple[int, int, int, int, int]

    @property
    def padding(self) -> tuple[int, int]:
        return self.padded_height - self.height, self.padded_width - self.width


@dataclass(frozen=True)
class InpaintTask:
    topology: str
    trial: int


@dataclass(frozen=True, eq=False)
class InpaintOutcome:
    task: InpaintTask
    result: SolveResult
    recovered: Image
    psnr: float


def closest_factor_pair(n: int) -> tuple[int, int] | None:
    """(a, b) with a * b = n, a >= b >= 2 and a - b minimal; None when no such pair exists."""
    for b in range(math.isqrt(n), 1, -1):
        if n % b == 0:
            return n // b, b
    return None


def factorable_size(n: int) -> int:
    size = max(n, 1)
    while closest_factor_pair(size) is None:
        size += 1
    return size


def plan_reshape(height: int, width: int) -> ImageReshape:
    padded_height = factorable_size(height)
    padded_width = factorable_size(width)
    rows = closest_factor_pair(padded_height)
    cols = closest_factor_pair(padded_width)
    assert rows is not None and cols is not None
    return ImageReshape(height, width, padded_height, padded_width, (rows[0], rows[1], cols[0], cols[1], 3))


def image_to_tensor(pixels: np.ndarray, plan: ImageReshape) -> DenseTensor:
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.shape != (plan.height, plan.width, 3):
        raise ImageFormatError(f"image shape {pixels.shape} does not match plan {(plan.height, plan.width, 3)}")
    pad_rows, pad_cols = plan.padding
    if pad_rows or pad_cols:
        pixels = np.pad(pixels, ((0, pad_rows), (0, pad_cols), (0, 0)), mode="edge")
    return pixels.reshape(plan.tensor_dims, order="F")


def tensor_to_image(tensor: DenseTensor, plan: ImageReshape) -> np.ndarray:
    padded = np.asarray(tensor).reshape((plan.padded_height, plan.padded_width, 3), order="F")
    return padded[: plan.height, : plan.width, :]


def builtin_texture() -> Image:
    """Deterministic 60 x 90 RGB texture: smooth separable waves plus a diagonal stripe pattern."""
    rows, cols = np.meshgrid(np.arange(TEXTURE_SHAPE[0]), np.arange(TEXTURE_SHAPE[1]), indexing="ij")
    waves = np.sin(2 * np.pi * rows / 30.0) * np.cos(2 * np.pi * cols / 45.0)
    stripes = 0.5 * np.sign(np.sin(2 * np.pi * (rows + cols) / 15.0))
    checks = 0.3 * np.cos(np.pi * rows / 5.0) * np.cos(np.pi * cols / 9.0)
    channels = [
        waves + stripes,
        0.8 * waves - checks,
        stripes + checks - 0.4 * waves,
    ]
    stacked = np.stack(channels, axis=-1)
    scaled = (stacked - stacked.min()) / (stacked.max() - stacked.min()) * PPM_MAXVAL
    return Image.from_float(scaled)


def resolve_image(source: str) -> Image:
    if source == BUILTIN_TEXTURE:
        return builtin_texture()
    return load_image(source)


def inpaint_config(experiment: ExperimentSettings, seed: int, *keys: object) -> SolverConfig:
    return experiment.solver.to_config(seed=derive_seed(seed, "inpaint-solver", *keys), defaults=INPAINT_DEFAULTS)


def recover(
    image: Image,
    p: float,
    topology: str,
    config: SolverConfig,
    mask_seed: int,
) -> tuple[SolveResult, Image]:
    """Observes the image at rate p, completes it with the given core topology and returns the clamped result."""
    if not 0.0 < p <= 1.0:
        raise ValueError(f"inpainting needs p in (0, 1], got {p}")
    plan = plan_reshape(image.height, image.width)
    if plan.padding != (0, 0):
        logger.info("padding image from %dx%d to %dx%d", plan.height, plan.width, plan.padded_height, plan.padded_width)
    tensor = image_to_tensor(image.as_float() / PPM_MAXVAL, plan)
    observed = project(tensor, sample_mask(plan.tensor_dims, p, mask_seed))
    result = solve(observed, topology, config)
    recovered = tensor_to_image(result.model.to_dense(), plan) * PPM_MAXVAL
    return result, Image.from_float(recovered)


def run_inpainting_task(
    experiment: ExperimentSettings,
    image: Image,
    task: InpaintTask,
    seed: int,
) -> InpaintOutcome:
    assert experiment.p is not None
    mask_seed = derive_seed(seed, "inpaint-mask", task.trial)
    config = inpaint_config(experiment, seed, task.topology, task.trial)
    logger.info("inpainting with topology %s, trial %d", task.topology, task.trial)
    result, recovered = recover(image, experiment.p, task.topology, config, mask_seed)
    value = psnr(image.as_float(), recovered.as_float(), float(PPM_MAXVAL))
    logger.info("topology %s trial %d: PSNR %.2f dB", task.topology, task.trial, value)
    return InpaintOutcome(task, result, recovered, value)


def format_psnr_csv(outcomes: Sequence[InpaintOutcome], p: float) -> str:
    lines = [PSNR_CSV_HEADER]
    for outcome in outcomes:
        lines.append(
            f"{outcome.task.topology},{outcome.task.trial},{format_probability(p)},{outcome.psnr!r},"
            f"{outcome.result.status},{outcome.result.iterations},"
            f"{'|'.join(str(r) for r in outcome.result.model.ranks)}"
        )
    return "\n".join(lines) + "\n"


def observed_preview(image: Image, p: float, mask_seed: int) -> Image:
    """The image with unobserved pixels (in any channel) set to black."""
    plan = plan_reshape(image.height, image.width)
    mask = sample_mask(plan.tensor_dims, p, mask_seed)
    keep = np.zeros(mask.total, dtype=np.float64)
    keep[mask.linear] = 1.0
    visible = tensor_to_image(keep.reshape(plan.tensor_dims, order="F"), plan)
    return Image.from_float(image.as_float() * visible)


def run_inpainting(
    experiment: ExperimentSettings,
    output_dir: str | Path,
    seed: int | None = None,
    workers: int = 1,
) -> list[InpaintOutcome]:
    """Completes the image once per (topology, trial); all topologies of a trial share the same mask."""
    assert experiment.image is not None and experiment.p is not None
    seed = experiment.seed if seed is None else seed
    output_dir = ensure_output_dir(output_dir)
    image = resolve_image(experiment.image)
    plan = plan_reshape(image.height, image.width)
    tasks = [
        InpaintTask(topology, trial)
        for trial in range(experiment.trials)
        for topology in experiment.topology_list()
    ]
    logger.info(
        "starting %d inpainting runs on a %dx%d image reshaped to %s",
        len(tasks),
        image.height,
        image.width,
        plan.tensor_dims,
    )
    outcomes = run_ordered(lambda task: run_inpainting_task(experiment, image, task, seed), tasks, workers)

    outputs: list[Path] = [save_image(output_dir / "original.ppm", image)]
    for trial in range(experiment.trials):
        preview = observed_preview(image, experiment.p, derive_seed(seed, "inpaint-mask", trial))
        outputs.append(save_image(output_dir / f"observed_t{trial}.ppm", preview))
    for outcome in outcomes:
        stem = f"inpaint_{outcome.task.topology}_t{outcome.task.trial}"
        outputs.append(save_image(output_dir / f"{stem}.ppm", outcome.recovered))
        name = trace_file_name("trace", topo=outcome.task.topology, t=outcome.task.trial)
        outputs.append(write_trace_csv(output_dir / name, outcome.result.trace))
    outputs.append(write_text_output(output_dir / "psnr.csv", format_psnr_csv(outcomes, experiment.p)))
    extra = {
        "tensor_dims": list(plan.tensor_dims),
        "padding": list(plan.padding),
        "psnr": {f"{o.task.topology}_t{o.task.trial}": json_number(o.psnr) for o in outcomes},
    }
    write_manifest(output_dir, build_manifest("inpaint", experiment, seed, outputs, extra), experiment)
    return outcomes
