"""Circular-shift factor model and the order-preserving delay cone.

Convention: a positive delay moves a waveform later in time,
``circular_shift(x, d)[i] == x[(i - d) % len(x)]``.
"""

from __future__ import annotations

import numpy as np


def circular_shift(column, delay: int) -> np.ndarray:
    column = np.asarray(column, dtype=float)
    return np.roll(column, int(delay) % column.shape[0], axis=0)


def build_shifted_factors(F, d) -> np.ndarray:
    """Shift column ``j`` of ``F`` by ``d[j]``; the matrix M(F, d)."""
    F = np.asarray(F, dtype=float)
    d = np.asarray(d, dtype=int).ravel()
    if F.ndim != 2 or d.shape[0] != F.shape[1]:
        raise ValueError(f"delay vector of length {d.shape[0]} for {F.shape} factor matrix")
    n_F = F.shape[0]
    rows = (np.arange(n_F)[:, None] - d[None, :]) % n_F
    return np.take_along_axis(F, rows, axis=0)


def window_restrict(M, window_start: int, n: int) -> np.ndarray:
    M = np.asarray(M)
    n_F = M.shape[0]
    if window_start < 0 or n < 1 or window_start + n > n_F:
        raise ValueError(f"window [{window_start}, {window_start + n}) outside [0, {n_F})")
    return M[window_start:window_start + n]


def window_rows(n_F: int, window_start: int, n: int, delay: int) -> np.ndarray:
    """Indices into an unshifted factor column seen by window row t at ``delay``."""
    return (window_start + np.arange(n) - int(delay)) % n_F


def in_order_cone(d, d_max: int | None = None) -> bool:
    """True iff ``d`` is nondecreasing with entries in [0, d_max]."""
    d = np.asarray(d).ravel()
    if d.size == 0:
        return True
    if np.any(d != np.round(d)) or d[0] < 0:
        return False
    if d_max is not None and d[-1] > d_max:
        return False
    return bool(np.all(np.diff(d) >= 0))


def predict_subject(F, d, A, window_start: int, n: int) -> np.ndarray:
    """Windowed model output ``window(M(F, d)) @ A`` (n x p)."""
    A = np.asarray(A, dtype=float)
    M = window_restrict(build_shifted_factors(F, d), window_start, n)
    if M.shape[1] != A.shape[0]:
        raise ValueError(f"score matrix has {A.shape[0]} rows, expected {M.shape[1]}")
    return M @ A
