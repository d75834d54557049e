"""Counter-based uniforms keyed by (seed, stream name, row id).

Each row gets its own substream, so results do not depend on how rows are
chunked across workers or on the order in which they are processed.
"""

from __future__ import annotations

import zlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _splitmix(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def uniforms(seed: int, stream: str, rows) -> np.ndarray:
    """Uniform draws in the open interval (0, 1), one per row id."""
    rows = np.asarray(rows, dtype=np.int64).astype(np.uint64)
    key = _splitmix(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))
    key = _splitmix(key ^ np.uint64(zlib.crc32(stream.encode("utf-8"))))
    bits = _splitmix(key ^ _splitmix(rows))
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
