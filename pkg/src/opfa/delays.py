"""Exact delay estimation over the order-preserving cone.

For one subject the problem is ``min_{d in K} ||[X - window(M(F, d)) A]_mask||^2``
with ``K = {d integer, 0 <= d_1 <= ... <= d_f <= d_max}``. The search splits
integer boxes; each box is bounded below by a relaxation that drops the
ordering constraint, which decouples into one grid search per factor.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .shift import build_shifted_factors, window_restrict

ENUMERATION_LIMIT = 10**6
# relative safety margin subtracted from every lower bound (outward rounding)
BOUND_SAFETY = 1e-9


def delay_objective(X, F, A, d, mask=None, window_start: int = 0) -> float:
    X = np.asarray(X, dtype=float)
    M = window_restrict(build_shifted_factors(F, d), window_start, X.shape[0])
    R = X - M @ np.asarray(A, dtype=float)
    if mask is not None:
        R = R * mask
    return float(np.einsum("ij,ij->", R, R))


def order_cone_size(f: int, d_max: int) -> int:
    return math.comb(d_max + f, f)


def enumerate_order_cone(f: int, d_max: int):
    """Yield every nondecreasing integer vector in [0, d_max]^f, lexicographically."""
    for combo in itertools.combinations_with_replacement(range(d_max + 1), f):
        yield np.array(combo, dtype=int)


def estimate_delays_bruteforce(X, F, A, d_max: int, mask=None, window_start: int = 0) -> np.ndarray:
    """Exhaustive minimiser over the cone; ties go to the lexicographically smallest."""
    f = np.asarray(F).shape[1]
    if order_cone_size(f, d_max) > ENUMERATION_LIMIT:
        raise ValueError(
            f"order cone has {order_cone_size(f, d_max)} points (> {ENUMERATION_LIMIT})"
        )
    best, best_val = None, math.inf
    for d in enumerate_order_cone(f, d_max):
        val = delay_objective(X, F, A, d, mask, window_start)
        if val < best_val:
            best, best_val = d, val
    return best


def tighten_box(lo, hi):
    """Shrink a box to the smallest box with the same intersection with the cone.

    Returns ``None`` when the intersection is empty.
    """
    lo = np.maximum.accumulate(np.asarray(lo, dtype=int))
    hi = np.minimum.accumulate(np.asarray(hi, dtype=int)[::-1])[::-1]
    if np.any(lo > hi):
        return None
    return lo, hi


@dataclass
class BBNode:
    lo: np.ndarray
    hi: np.ndarray
    lower_bound: float
    upper_bound: float
    witness: np.ndarray
    depth: int
    parent: int | None
    node_id: int

    @property
    def is_leaf(self) -> bool:
        return bool(np.all(self.lo == self.hi))


@dataclass
class _ColumnCostTable:
    """Per-factor cost of every candidate shift; the bound adds per-box minima."""

    costs: np.ndarray  # (f, d_max + 1)
    offset: float
    scale_factor: float = 1.0
    safety: float = 0.0

    def bound(self, lo, hi) -> float:
        total = 0.0
        for j in range(self.costs.shape[0]):
            total += self.costs[j, lo[j]:hi[j] + 1].min()
        return self.scale_factor * total + self.offset - self.safety


def _shifted_windows(F, d_max, window_start, n):
    """Windowed shifted copies of each column: array (d_max + 1, n, f)."""
    F = np.asarray(F, dtype=float)
    n_F = F.shape[0]
    out = np.empty((d_max + 1, n, F.shape[1]))
    rows = window_start + np.arange(n)
    for delay in range(d_max + 1):
        out[delay] = F[(rows - delay) % n_F]
    return out


def _safety_margin(X, F, A, mask):
    Xo = X if mask is None else X * mask
    scale = (np.linalg.norm(Xo) + np.linalg.norm(F) * np.linalg.norm(A)) ** 2
    return BOUND_SAFETY * scale + 1e-300


def complete_data_bound_table(X, F, A, d_max, window_start=0) -> _ColumnCostTable:
    """Lower-bound table from the row-space split of X with respect to A."""
    X = np.asarray(X, dtype=float)
    A = np.asarray(A, dtype=float)
    n = X.shape[0]
    G = A @ A.T
    ev = np.linalg.eigvalsh(G)
    lam_min = float(ev[0])
    if lam_min <= 1e-12 * max(float(ev[-1]), 1e-300):
        lam_min = 0.0
    A_pinv = np.linalg.pinv(A)
    Y = X @ A_pinv                      # n x f
    resid = X - Y @ A
    offset = float(np.einsum("ij,ij->", resid, resid))
    shifted = _shifted_windows(F, d_max, window_start, n)
    diff = Y[None] - shifted
    costs = np.einsum("dtj,dtj->jd", diff, diff)
    return _ColumnCostTable(costs, offset, lam_min, _safety_margin(X, F, A, None))


def kron_min_eigenvalue(A, mask) -> float:
    """Smallest eigenvalue of ``sum_i (a_i a_i') kron diag(mask[:, i])``.

    The matrix is block diagonal over time after a permutation, with f x f
    blocks ``A diag(mask[t]) A'``, so the minimum is taken over those blocks.
    """
    A = np.asarray(A, dtype=float)
    blocks = np.einsum("ji,ti,ki->tjk", A, np.asarray(mask, dtype=float), A)
    return float(np.linalg.eigvalsh(blocks)[:, 0].min())


def missing_data_bound_table(X, F, A, mask, d_max, window_start=0) -> _ColumnCostTable:
    """Lower-bound table valid under arbitrary observation masks."""
    X = np.asarray(X, dtype=float)
    A = np.asarray(A, dtype=float)
    omega = np.asarray(mask, dtype=float)
    n = X.shape[0]
    lam_min = max(kron_min_eigenvalue(A, omega), 0.0)
    Xo = omega * X
    C = Xo @ A.T                        # n x f
    shifted = _shifted_windows(F, d_max, window_start, n)
    energy = np.einsum("dtj,dtj->jd", shifted, shifted)
    cross = np.einsum("tj,dtj->jd", C, shifted)
    costs = lam_min * energy - 2.0 * cross
    offset = float(np.einsum("ij,ij->", Xo, Xo))
    return _ColumnCostTable(costs, offset, 1.0, _safety_margin(X, F, A, omega))


def delay_bound_table(X, F, A, d_max, mask=None, window_start=0) -> _ColumnCostTable:
    if mask is None:
        return complete_data_bound_table(X, F, A, d_max, window_start)
    return missing_data_bound_table(X, F, A, mask, d_max, window_start)


def delay_lower_bound(lo, hi, X, F, A, mask=None, window_start: int = 0) -> float:
    """Lower bound on the delay objective over ``K`` intersected with the box [lo, hi]."""
    lo = np.asarray(lo, dtype=int)
    hi = np.asarray(hi, dtype=int)
    table = delay_bound_table(X, F, A, int(hi.max()), mask, window_start)
    return table.bound(lo, hi)


def _split(lo, hi):
    widths = hi - lo
    j = int(np.argmax(widths))
    gamma = lo[j] + widths[j] // 2
    left_hi = hi.copy()
    left_hi[j] = gamma
    right_lo = lo.copy()
    right_lo[j] = gamma + 1
    return (lo, left_hi), (right_lo, hi)


def estimate_delays_bb(
    X, F, A, d_max: int, mask=None, window_start: int = 0, nodes: list | None = None
) -> np.ndarray:
    """Global minimiser of the delay objective over the cone by branch and bound.

    Nodes are expanded best-first by lower bound (ties: deeper first, then
    creation order). Boxes are split at the midpoint of their widest
    coordinate. Nodes whose bound exceeds the incumbent are discarded; equal
    values are still explored so that ties resolve to the lexicographically
    smallest minimiser, as in :func:`estimate_delays_bruteforce`. When
    ``nodes`` is a list, every created node is appended to it.
    """
    f = np.asarray(F).shape[1]
    if d_max == 0:
        return np.zeros(f, dtype=int)
    table = delay_bound_table(X, F, A, d_max, mask, window_start)

    best = None
    best_val = math.inf
    counter = itertools.count()

    def make_node(lo, hi, depth, parent):
        nonlocal best, best_val
        box = tighten_box(lo, hi)
        if box is None:
            return None
        lo, hi = box
        witness = lo.copy()
        ub = delay_objective(X, F, A, witness, mask, window_start)
        if ub < best_val or (ub == best_val and tuple(witness) < tuple(best)):
            best, best_val = witness, ub
        node = BBNode(lo, hi, table.bound(lo, hi), ub, witness, depth, parent, next(counter))
        if nodes is not None:
            nodes.append(node)
        return node

    root = make_node(np.zeros(f, dtype=int), np.full(f, d_max, dtype=int), 0, None)
    heap = [(root.lower_bound, 0, root.node_id, root)]
    while heap:
        lb, _, _, node = heapq.heappop(heap)
        if lb > best_val:
            break
        if node.is_leaf:
            continue
        for lo, hi in _split(node.lo, node.hi):
            child = make_node(lo, hi, node.depth + 1, node.node_id)
            if child is not None and child.lower_bound <= best_val:
                heapq.heappush(heap, (child.lower_bound, -child.depth, child.node_id, child))
    return best
