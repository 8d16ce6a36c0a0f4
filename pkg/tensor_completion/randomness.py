from __future__ import annotations

import hashlib
from typing import Iterable

import numpy as np
import numpy.typing as npt

# Philox draws four 64-bit words per counter step and `random()` consumes one
# word per double, so value k always comes from counter k // 4, word k % 4.
_WORDS_PER_COUNTER = 4
_CHUNK = 1 << 20


def derive_seed(*keys: object) -> int:
    """Stable 63-bit seed from an ordered tuple of keys (ints, floats, strings)."""
    digest = hashlib.blake2b(digest_size=8)
    for key in keys:
        digest.update(repr(key).encode("utf-8"))
        digest.update(b"\x1f")
    return int.from_bytes(digest.digest(), "big") >> 1


def keyed_rng(*keys: int) -> np.random.Generator:
    """Generator keyed by nonnegative integers, e.g. (seed, iteration, mode, row)."""
    return np.random.default_rng(np.random.SeedSequence([int(key) for key in keys]))


def counter_uniforms(seed: int, start: int, count: int) -> npt.NDArray[np.float64]:
    """Uniforms u_k for k in [start, start + count) keyed only by (seed, k)."""
    if count <= 0:
        return np.empty(0, dtype=np.float64)
    head = start - start % _WORDS_PER_COUNTER
    bit_generator = np.random.Philox(key=int(seed) & ((1 << 64) - 1))
    bit_generator.advance(head // _WORDS_PER_COUNTER)
    values = np.random.Generator(bit_generator).random(count + (start - head))
    return values[start - head :]


def iter_counter_uniforms(
    seed: int, total: int, chunk: int = _CHUNK
) -> Iterable[tuple[int, npt.NDArray[np.float64]]]:
    chunk -= chunk % _WORDS_PER_COUNTER
    for start in range(0, total, chunk):
        yield start, counter_uniforms(seed, start, min(chunk, total - start))
