"""Counter-based random numbers.

Every draw is a pure function of ``(key, row, column)``: a splitmix64 hash of
the counter ``row << 32 | column`` offset by the key. Paths can therefore be
generated in any order, in any chunking, on any number of threads, and come
out bit-identical.
"""

from __future__ import annotations

import hashlib

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MAX_COLUMNS = 1 << 32


def derive_seed(seed: int, *tags) -> int:
    """Derive an independent 64-bit key from a base seed and string tags."""
    text = "|".join([str(int(seed))] + [str(t) for t in tags])
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def random_bits(key: int, rows, columns) -> np.ndarray:
    """64-bit hashes for every (row, column) pair, shape ``len(rows) x len(columns)``."""
    rows = np.asarray(rows, dtype=np.uint64).reshape(-1, 1)
    columns = np.asarray(columns, dtype=np.uint64).reshape(1, -1)
    if columns.size and int(columns.max()) >= _MAX_COLUMNS:
        raise ValueError("column index exceeds 2**32")
    counter = (rows << np.uint64(32)) | columns
    base = _mix(np.asarray([key], dtype=np.uint64))
    return _mix(base + (counter + np.uint64(1)) * _GOLDEN)


def uniforms(key: int, rows, columns) -> np.ndarray:
    """Uniform draws strictly inside (0, 1)."""
    bits = random_bits(key, rows, columns) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * 2.0**-53


def normals(key: int, rows, columns) -> np.ndarray:
    """Standard normal draws by inverse-CDF transform of :func:`uniforms`."""
    return ndtri(uniforms(key, rows, columns))
