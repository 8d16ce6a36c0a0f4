from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt

from tensor_completion.errors import ImageFormatError, OutputPathError

PPM_MAGIC = b"P6"
PPM_MAXVAL = 255
_HEADER_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


@dataclass(frozen=True, eq=False)
class Image:
    """8-bit RGB image stored as a (height, width, 3) uint8 array."""

    pixels: npt.NDArray[np.uint8]

    def __post_init__(self) -> None:
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ImageFormatError(f"expected an h x w x 3 image, got shape {pixels.shape}")
        if pixels.dtype != np.uint8:
            raise ImageFormatError(f"expected 8-bit samples, got {pixels.dtype}")
        object.__setattr__(self, "pixels", pixels)

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def channels(self) -> int:
        return 3

    def as_float(self) -> npt.NDArray[np.float64]:
        return self.pixels.astype(np.float64)

    @classmethod
    def from_float(cls, values: npt.ArrayLike) -> "Image":
        """Rounds and clamps to [0, 255]."""
        clipped = np.clip(np.rint(np.asarray(values, dtype=np.float64)), 0, PPM_MAXVAL)
        return cls(clipped.astype(np.uint8))


def parse_ppm(data: bytes) -> Image:
    position = 0
    tokens: list[bytes] = []
    for _ in range(4):
        match = _HEADER_TOKEN.match(data, position)
        if match is None:
            raise ImageFormatError("truncated PPM header")
        tokens.append(match.group(1))
        position = match.end()
    magic, raw_width, raw_height, raw_maxval = tokens
    if magic != PPM_MAGIC:
        raise ImageFormatError(f"not a binary PPM file (magic {magic!r})")
    try:
        width, height, maxval = int(raw_width), int(raw_height), int(raw_maxval)
    except ValueError as exc:
        raise ImageFormatError("malformed PPM header") from exc
    if width < 1 or height < 1:
        raise ImageFormatError(f"invalid PPM size {width}x{height}")
    if maxval != PPM_MAXVAL:
        raise ImageFormatError(f"unsupported PPM maxval {maxval}; only {PPM_MAXVAL} is supported")
    if position >= len(data) or data[position : position + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise ImageFormatError("PPM header must end with a single whitespace byte")
    position += 1
    expected = width * height * 3
    body = data[position : position + expected]
    if len(body) != expected:
        raise ImageFormatError(f"PPM body has {len(body)} bytes, expected {expected}")
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3).copy()
    return Image(pixels)


def format_ppm(image: Image) -> bytes:
    header = f"P6\n{image.width} {image.height}\n{PPM_MAXVAL}\n".encode("ascii")
    return header + np.ascontiguousarray(image.pixels).tobytes()


def load_image(path: str | Path) -> Image:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"cannot read image {path}: {exc}") from exc
    return parse_ppm(data)


def save_image(path: str | Path, image: Image) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(format_ppm(image))
    except OSError as exc:
        raise OutputPathError(f"cannot write image {path}: {exc}") from exc
    return path
