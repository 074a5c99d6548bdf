"""Seed derivation and small shared helpers."""

from __future__ import annotations

import numpy as np


def derive_seed(*keys) -> int:
    """Deterministically mix integers/strings into one 64-bit seed."""
    ints = []
    for k in keys:
        if isinstance(k, str):
            ints.extend(k.encode())
        else:
            ints.append(int(k) & 0xFFFFFFFFFFFFFFFF)
    return int(np.random.SeedSequence(ints).generate_state(1, np.uint64)[0])


def moving_average(values, window: int) -> np.ndarray:
    """Trailing moving average; shorter prefixes average what is available."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return values
    cums = np.concatenate([[0.0], np.cumsum(values)])
    out = np.empty(values.size)
    for i in range(values.size):
        lo = max(0, i + 1 - window)
        out[i] = (cums[i + 1] - cums[lo]) / (i + 1 - lo)
    return out


def _fnv1a64_py(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


try:
    from numba import njit

    @njit(cache=True)
    def _fnv1a64_nb(buf):  # pragma: no cover - thin jit wrapper
        h = np.uint64(0xCBF29CE484222325)
        prime = np.uint64(0x100000001B3)
        for i in range(buf.size):
            h = (h ^ np.uint64(buf[i])) * prime
        return h

    def fnv1a64(data: bytes) -> int:
        """64-bit FNV-1a hash of a byte string."""
        return int(_fnv1a64_nb(np.frombuffer(data, dtype=np.uint8)))

except ImportError:  # pragma: no cover
    def fnv1a64(data: bytes) -> int:
        """64-bit FNV-1a hash of a byte string."""
        return _fnv1a64_py(data)
