"""Score and factor penalties with their proximal / projection operators."""

from __future__ import annotations

import numpy as np


def difference_operator(n_F: int) -> np.ndarray:
    """First-order difference matrix W of shape (n_F - 1, n_F)."""
    W = np.zeros((n_F - 1, n_F))
    idx = np.arange(n_F - 1)
    W[idx, idx] = -1.0
    W[idx, idx + 1] = 1.0
    return W


def group_lasso_penalty(scores) -> float:
    """Sum over (factor, variable) of the Euclidean norm across subjects."""
    stacked = _stack_scores(scores)
    return float(np.sqrt((stacked ** 2).sum(axis=0)).sum())


def _stack_scores(scores) -> np.ndarray:
    arrays = [np.asarray(a, dtype=float) for a in scores]
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"score matrices have differing shapes {sorted(shapes)}")
    return np.stack(arrays)


def tv_penalty(F, W=None) -> float:
    """Squared total variation ``sum_i ||W F[:, i]||^2``."""
    F = np.asarray(F, dtype=float)
    if W is None:
        return float((np.diff(F, axis=0) ** 2).sum())
    W = np.asarray(W, dtype=float)
    if W.shape[1] != F.shape[0]:
        raise ValueError(f"W has {W.shape[1]} columns but F has {F.shape[0]} rows")
    return float(((W @ F) ** 2).sum())


def nonneg_group_prox(v, threshold: float, axis: int = 0) -> np.ndarray:
    """argmin_{x >= 0} 1/2 ||x - v||^2 + threshold * ||x||_2, group-wise along ``axis``.

    Clipping to the orthant followed by block soft-thresholding is exact for
    this penalty/constraint pair. With ``axis`` the input may hold many
    groups at once (e.g. an (S, f, p) score stack, groups along axis 0).
    """
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    vp = np.maximum(np.asarray(v, dtype=float), 0.0)
    norms = np.sqrt((vp ** 2).sum(axis=axis, keepdims=True))
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > 0, np.maximum(0.0, 1.0 - threshold / norms), 0.0)
    return vp * scale


def nonneg_soft_threshold(v, threshold: float) -> np.ndarray:
    """Scalar version of :func:`nonneg_group_prox`: ``max(v - threshold, 0)``."""
    return np.maximum(np.asarray(v, dtype=float) - threshold, 0.0)


def project_factor_set(F, bound: float) -> np.ndarray:
    """Euclidean projection onto ``{F >= 0, ||F||_F <= bound}``."""
    if not bound > 0:
        raise ValueError("bound must be positive")
    Fp = np.maximum(np.asarray(F, dtype=float), 0.0)
    norm = np.sqrt((Fp ** 2).sum())
    if norm > bound:
        Fp = Fp * (bound / norm)
    return Fp
