"""Shared binary conventions: little-endian arrays and FNV-1a checksums."""

from __future__ import annotations

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> str:
    """64-bit FNV-1a hash of *data*, as a 16-char lowercase hex string."""
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return f"{h:016x}"


def f32_bytes(arr: np.ndarray) -> bytes:
    """Serialize an array as little-endian IEEE-754 32-bit floats (C order)."""
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def f64_bytes(arr: np.ndarray) -> bytes:
    """Serialize an array as little-endian IEEE-754 64-bit floats (C order)."""
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def f32_from_bytes(data: bytes, shape: tuple[int, ...]) -> np.ndarray:
    return np.frombuffer(data, dtype="<f4").reshape(shape)


def f64_from_bytes(data: bytes, shape: tuple[int, ...]) -> np.ndarray:
    return np.frombuffer(data, dtype="<f8").reshape(shape)
