"""Quadratic subproblems of the BCD loop: factor update and score update.

Both objectives are written as ``x' Q x - 2 q' x + c`` over a column-major
vectorisation (``vec(F) = F.T.ravel()``) and minimised by a monotone
accelerated proximal-gradient method with function-value restarts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .penalties import (
    difference_operator,
    nonneg_group_prox,
    nonneg_soft_threshold,
    project_factor_set,
)
from .shift import build_shifted_factors, window_restrict, window_rows

PSD_RTOL = 1e-9


class NotPSDError(ValueError):
    """The assembled quadratic has negative curvature."""


@dataclass
class QuadraticForm:
    """``x' Q x - 2 q' x + c``; ``shape`` is the matrix shape of ``unvec(x)``."""

    Q: np.ndarray
    q: np.ndarray
    c: float = 0.0
    shape: tuple | None = None

    def value(self, x) -> float:
        x = np.ravel(x)
        return float(x @ (self.Q @ x) - 2.0 * (self.q @ x) + self.c)

    def gradient(self, x) -> np.ndarray:
        x = np.ravel(x)
        return 2.0 * (self.Q @ x - self.q)

    def vec(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float).T.ravel()

    def unvec(self, x) -> np.ndarray:
        rows, cols = self.shape
        return np.asarray(x).reshape(cols, rows).T

    def eigenvalue_range(self):
        ev = np.linalg.eigvalsh(self.Q)
        return float(ev[0]), float(ev[-1])


@dataclass
class BlockQuadraticForm:
    """Block-diagonal quadratic over vec(A) of an f x p score matrix.

    ``blocks`` has shape (p, f, f), or (1, f, f) when every column shares the
    same block (unmasked data). ``linear`` is q reshaped to f x p.
    """

    blocks: np.ndarray
    linear: np.ndarray
    c: float = 0.0

    @property
    def f(self) -> int:
        return self.linear.shape[0]

    @property
    def p(self) -> int:
        return self.linear.shape[1]

    @property
    def shape(self):
        return self.linear.shape

    def full_blocks(self) -> np.ndarray:
        return np.broadcast_to(self.blocks, (self.p, self.f, self.f))

    @property
    def Q(self) -> np.ndarray:
        f, p = self.f, self.p
        out = np.zeros((f * p, f * p))
        for i, B in enumerate(self.full_blocks()):
            out[i * f:(i + 1) * f, i * f:(i + 1) * f] = B
        return out

    @property
    def q(self) -> np.ndarray:
        return self.linear.T.ravel()

    def apply(self, A) -> np.ndarray:
        """Q vec(A) reshaped back to f x p."""
        if self.blocks.shape[0] == 1:
            return self.blocks[0] @ A
        return np.matmul(self.blocks, A.T[:, :, None])[:, :, 0].T

    def value_matrix(self, A) -> float:
        return float((A * (self.apply(A) - 2.0 * self.linear)).sum() + self.c)

    def gradient_matrix(self, A) -> np.ndarray:
        return 2.0 * (self.apply(A) - self.linear)

    def value(self, x) -> float:
        return self.value_matrix(self.unvec(x))

    def gradient(self, x) -> np.ndarray:
        return self.gradient_matrix(self.unvec(x)).T.ravel()

    def unvec(self, x) -> np.ndarray:
        return np.asarray(x).reshape(self.p, self.f).T

    def max_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.blocks)[:, -1].max())

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.blocks)[:, 0].min())

    def __add__(self, other: "BlockQuadraticForm") -> "BlockQuadraticForm":
        if self.blocks.shape[0] == other.blocks.shape[0]:
            blocks = self.blocks + other.blocks
        else:
            blocks = self.full_blocks() + other.full_blocks()
        return BlockQuadraticForm(blocks, self.linear + other.linear, self.c + other.c)


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


def _selection_matrix(n_F, window_start, n, delay) -> np.ndarray:
    R = np.zeros((n, n_F))
    R[np.arange(n), window_rows(n_F, window_start, n, delay)] = 1.0
    return R


def _factor_terms_unmasked(X, A, d, n_F, window_start):
    f = A.shape[0]
    n = X.shape[0]
    R = [_selection_matrix(n_F, window_start, n, dj) for dj in d]
    G = A @ A.T
    XA = X @ A.T
    Q = np.zeros((f * n_F, f * n_F))
    q = np.zeros(f * n_F)
    for j in range(f):
        q[j * n_F:(j + 1) * n_F] = R[j].T @ XA[:, j]
        for k in range(f):
            Q[j * n_F:(j + 1) * n_F, k * n_F:(k + 1) * n_F] = G[j, k] * (R[j].T @ R[k])
    return Q, q, float((X ** 2).sum())


def _factor_terms_masked(X, A, d, omega, n_F, window_start):
    f = A.shape[0]
    n = X.shape[0]
    idx = np.stack([window_rows(n_F, window_start, n, dj) for dj in d])  # (f, n)
    weights = np.einsum("ti,ji,ki->jkt", omega, A, A)
    jj, kk, tt = np.meshgrid(np.arange(f), np.arange(f), np.arange(n), indexing="ij")
    Q4 = np.zeros((f, n_F, f, n_F))
    np.add.at(Q4, (jj, idx[jj, tt], kk, idx[kk, tt]), weights)
    Xo = omega * X
    qm = np.zeros((f, n_F))
    j2, t2 = np.meshgrid(np.arange(f), np.arange(n), indexing="ij")
    np.add.at(qm, (j2, idx), (Xo @ A.T).T)
    return Q4.reshape(f * n_F, f * n_F), qm.ravel(), float((Xo ** 2).sum())


def assemble_factor_quadratic(
    subjects,
    scores,
    delays,
    n_F: int,
    window_start: int = 0,
    beta: float = 0.0,
    W=None,
    masks=None,
) -> QuadraticForm:
    """Quadratic in vec(F) of ``sum_s ||[X_s - window(M(F, d_s)) A_s]_mask||^2 + beta P2(F)``.

    ``scores`` may hold a single matrix shared by all subjects. ``masks=None``
    selects the complete-data closed form.
    """
    subjects = [np.asarray(x, dtype=float) for x in subjects]
    S = len(subjects)
    if len(scores) == 1 and S > 1:
        scores = list(scores) * S
    if len(scores) != S or len(delays) != S:
        raise ValueError("need one score matrix and one delay vector per subject")
    f = np.asarray(scores[0]).shape[0]
    Q = np.zeros((f * n_F, f * n_F))
    q = np.zeros(f * n_F)
    c = 0.0
    for s, X in enumerate(subjects):
        A = np.asarray(scores[s], dtype=float)
        d = np.asarray(delays[s], dtype=int)
        if A.shape != (f, X.shape[1]) or d.shape != (f,):
            raise ValueError(f"subject {s}: scores {A.shape} / delays {d.shape} do not conform")
        if masks is None:
            Qs, qs, cs = _factor_terms_unmasked(X, A, d, n_F, window_start)
        else:
            Qs, qs, cs = _factor_terms_masked(X, A, d, np.asarray(masks[s], float), n_F, window_start)
        Q += Qs
        q += qs
        c += cs
    if beta:
        W = difference_operator(n_F) if W is None else np.asarray(W, dtype=float)
        if W.shape[1] != n_F:
            raise ValueError("W must have n_F columns")
        Q += beta * np.kron(np.eye(f), W.T @ W)
    return QuadraticForm(Q, q, c, shape=(n_F, f))


def assemble_score_quadratic(X, F, d, mask=None, window_start: int = 0) -> BlockQuadraticForm:
    """Block-diagonal quadratic in vec(A_s) of ``||[X_s - window(M(F, d)) A_s]_mask||^2``."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    M = window_restrict(build_shifted_factors(F, d), window_start, n)
    if mask is None:
        return BlockQuadraticForm((M.T @ M)[None], M.T @ X, float((X ** 2).sum()))
    omega = np.asarray(mask, dtype=float)
    if omega.shape != X.shape:
        raise ValueError(f"mask shape {omega.shape} != data shape {X.shape}")
    blocks = np.einsum("ta,ti,tb->iab", M, omega, M)
    Xo = omega * X
    return BlockQuadraticForm(blocks, M.T @ Xo, float((Xo ** 2).sum()))


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------


def _accelerated_prox_gradient(x0, value, grad, prox, L, tol, max_iters, history=None):
    """Monotone FISTA with function-value restart.

    A momentum step that fails to decrease the objective is discarded and
    the momentum reset, so accepted iterates never increase ``value``.
    """
    x = x0
    fx = value(x)
    f0 = abs(fx)
    if history is not None:
        history.append(fx)
    y, t = x, 1.0
    for _ in range(max_iters):
        z = prox(y - grad(y) / L, 1.0 / L)
        fz = value(z)
        if not math.isfinite(fz):
            raise FloatingPointError("non-finite objective in proximal gradient iteration")
        if fz > fx:
            if y is x:
                break
            y, t = x, 1.0
            continue
        dec = fx - fz
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = z + ((t - 1.0) / t_next) * (z - x)
        x, fx, t = z, fz, t_next
        if history is not None:
            history.append(fx)
        if dec <= tol * max(abs(fx), 1e-12 * f0, 1e-300):
            break
    return x


def _check_psd(lmin, lmax):
    if lmin < -PSD_RTOL * max(lmax, 1.0):
        raise NotPSDError(f"quadratic is not positive semidefinite (min eigenvalue {lmin:.3g})")


def estimate_factors(
    quadratic: QuadraticForm,
    bound: float,
    tol: float = 1e-9,
    max_iters: int = 3000,
    init=None,
    history=None,
) -> np.ndarray:
    """Minimise the factor quadratic over ``{F >= 0, ||F||_F <= bound}``.

    Returns the n_F x f factor matrix. ``init`` is projected onto the
    feasible set first; the returned objective never exceeds its value there.
    Entries the objective does not depend on (zero row of Q and zero linear
    term, e.g. samples no subject ever observes) are set to zero, which
    picks the minimum-norm minimiser and leaves the objective unchanged.
    """
    lmin, lmax = quadratic.eigenvalue_range()
    _check_psd(lmin, lmax)
    shape = quadratic.shape
    x0 = np.zeros(quadratic.q.shape) if init is None else quadratic.vec(init)
    inert = ~np.any(quadratic.Q, axis=1) & (quadratic.q == 0)
    x0 = np.where(inert, 0.0, x0)
    x0 = quadratic.vec(project_factor_set(quadratic.unvec(x0), bound))
    L = max(2.0 * lmax * (1.0 + 1e-9), 1e-12)

    def prox(v, step):
        return quadratic.vec(project_factor_set(v.reshape(shape[1], shape[0]).T, bound))

    x = _accelerated_prox_gradient(
        x0, quadratic.value, quadratic.gradient, prox, L, tol, max_iters, history
    )
    return quadratic.unvec(x).copy()


def estimate_scores(
    quadratics,
    lam: float,
    variant: str = "OPFA",
    tol: float = 1e-9,
    max_iters: int = 3000,
    init=None,
    history=None,
) -> list:
    """Nonnegative group-lasso score update.

    OPFA minimises ``sum_s q_s(A_s) + lam * P1(A_1..A_S)`` with groups
    formed across subjects; OPFA-C shares one matrix ``A`` and minimises
    ``sum_s q_s(A) + lam * sqrt(S) * sum(A)``. Returns S matrices (OPFA) or
    a one-element list (OPFA-C).
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    quadratics = list(quadratics)
    S = len(quadratics)
    f, p = quadratics[0].shape
    lmins = [qf.min_eigenvalue() for qf in quadratics]
    lmaxs = [qf.max_eigenvalue() for qf in quadratics]
    _check_psd(min(lmins), max(lmaxs))

    if variant.upper().replace("-", "_") == "OPFA_C":
        total = quadratics[0]
        for qf in quadratics[1:]:
            total = total + qf
        L = max(2.0 * total.max_eigenvalue() * (1.0 + 1e-9), 1e-12)
        weight = lam * math.sqrt(S)
        x0 = np.zeros((f, p)) if init is None else np.maximum(np.asarray(init[0], float), 0.0)

        def value(A):
            return total.value_matrix(A) + weight * A.sum()

        def prox(v, step):
            return nonneg_soft_threshold(v, weight * step)

        A = _accelerated_prox_gradient(x0, value, total.gradient_matrix, prox, L, tol, max_iters, history)
        return [A]

    L = max(2.0 * max(lmaxs) * (1.0 + 1e-9), 1e-12)
    if init is None:
        x0 = np.zeros((S, f, p))
    else:
        x0 = np.maximum(np.stack([np.asarray(a, float) for a in init]), 0.0)

    def value(As):
        quad = sum(qf.value_matrix(As[s]) for s, qf in enumerate(quadratics))
        return quad + lam * float(np.sqrt((As ** 2).sum(axis=0)).sum())

    def grad(As):
        return np.stack([qf.gradient_matrix(As[s]) for s, qf in enumerate(quadratics)])

    def prox(v, step):
        return nonneg_group_prox(v, lam * step, axis=0)

    As = _accelerated_prox_gradient(x0, value, grad, prox, L, tol, max_iters, history)
    return [As[s] for s in range(S)]
