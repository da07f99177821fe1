"""Bit/label helpers: Gray codes, MSB-first packing and power-of-two checks."""

import numpy as np


def gray_code(n):
    return n ^ (n >> 1)


def is_power_of_two(n: int) -> bool:
    return isinstance(n, (int, np.integer)) and n >= 1 and (int(n) & (int(n) - 1)) == 0


def log2_int(n: int) -> int:
    return int(n).bit_length() - 1


def bits_to_int(bits: np.ndarray) -> np.ndarray:
    """Pack the last axis of a {0,1} array into integers, MSB first."""
    bits = np.asarray(bits, dtype=np.int64)
    width = bits.shape[-1]
    if width == 0:
        return np.zeros(bits.shape[:-1], dtype=np.int64)
    weights = 1 << np.arange(width - 1, -1, -1, dtype=np.int64)
    return bits @ weights


def int_to_bits(values, width: int) -> np.ndarray:
    """Unpack integers into a trailing axis of `width` bits, MSB first."""
    values = np.asarray(values, dtype=np.int64)
    shifts = np.arange(width - 1, -1, -1, dtype=np.int64)
    return ((values[..., None] >> shifts) & 1).astype(np.uint8)
