from __future__ import annotations

import numpy as np
from scipy.special import ndtri


SEED_MAX = 2**64 - 1
# Philox4x64 emits four 64-bit words per counter value.
WORDS_PER_BLOCK = 4


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise ValueError(f"Seed must be a 64-bit unsigned integer, got {seed}.")
    return seed


def uniform_stream(seed: int, path: int, start: int, count: int) -> np.ndarray:
    """Uniforms in (0, 1) for steps [start, start + count) of one path's stream.

    The value at step j depends only on (seed, path, j).
    """
    key = np.array([_check_seed(seed), int(path)], dtype=np.uint64)
    block, offset = divmod(int(start), WORDS_PER_BLOCK)
    bit_generator = np.random.Philox(key=key, counter=block)
    raw = bit_generator.random_raw(offset + count)[offset:]
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def standard_normals(seed: int, path: int, start: int, count: int) -> np.ndarray:
    return ndtri(uniform_stream(seed, path, start, count))


def brownian_increments(seed: int, paths, start: int, count: int, dt: float) -> np.ndarray:
    """dB over `count` steps for each path index, shape (len(paths), count)."""
    scale = np.sqrt(dt)
    rows = [standard_normals(seed, path, start, count) for path in paths]
    if not rows:
        return np.empty((0, count))
    return scale * np.vstack(rows)
