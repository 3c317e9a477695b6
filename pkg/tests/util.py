"""Shared test helpers."""

import numpy as np


def bits_equal(a, b) -> bool:
    """Bitwise array equality (NaN payloads included)."""
    a, b = np.asarray(a), np.asarray(b)
    return a.shape == b.shape and a.dtype == b.dtype and a.tobytes() == b.tobytes()


def colmajor_flat(x: np.ndarray) -> np.ndarray:
    """Flatten a 2D array into its column-major element order."""
    return np.asarray(x, order="F").reshape(-1, order="F").copy()
