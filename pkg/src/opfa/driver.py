"""Block coordinate descent for OPFA / OPFA-C, with initialisation and restarts."""

from __future__ import annotations

import logging
import math

import numpy as np
from joblib import Parallel, delayed
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.optimize import nnls

from .data import ModelConfig, ObservationSet, OpfaFit, stack_masks
from .delays import delay_objective, estimate_delays_bb
from .penalties import group_lasso_penalty, project_factor_set, tv_penalty
from .quadratic import (
    assemble_factor_quadratic,
    assemble_score_quadratic,
    estimate_factors,
    estimate_scores,
)
from .shift import in_order_cone, predict_subject, window_restrict

log = logging.getLogger(__name__)

FEAS_TOL = 1e-9


class InfeasibleIterateError(ValueError):
    pass


def _subject_masks(data: ObservationSet, masks):
    if data.masks is None and masks is None:
        return None
    return stack_masks(data, masks)


def opfa_objective(
    F,
    scores,
    delays,
    data: ObservationSet,
    lam: float,
    beta: float,
    W=None,
    window_start: int = 0,
    masks=None,
    d_max: int | None = None,
    bound: float | None = None,
) -> float:
    """Penalised least-squares objective; raises if an iterate is infeasible.

    A single score matrix is interpreted as shared by every subject (OPFA-C),
    so its group penalty equals ``sqrt(S) * sum(A)``.
    """
    F = np.asarray(F, dtype=float)
    if np.any(F < 0):
        raise InfeasibleIterateError("factor matrix has negative entries")
    if bound is not None and np.linalg.norm(F) > bound * (1 + FEAS_TOL):
        raise InfeasibleIterateError(f"||F||_F = {np.linalg.norm(F):.6g} exceeds bound {bound}")
    for a in scores:
        if np.any(np.asarray(a) < 0):
            raise InfeasibleIterateError("score matrix has negative entries")
    for s, d in enumerate(delays):
        if not in_order_cone(d, d_max):
            raise InfeasibleIterateError(f"delay vector {list(d)} of subject {s} is not order-preserving")
    omega = _subject_masks(data, masks)
    shared = len(scores) == 1
    loss = 0.0
    for s, X in enumerate(data.subjects):
        A = scores[0] if shared else scores[s]
        loss += delay_objective(X, F, A, delays[s], None if omega is None else omega[s], window_start)
    penalty_scores = [scores[0]] * data.S if shared else scores
    value = loss + lam * group_lasso_penalty(penalty_scores) + beta * tv_penalty(F, W)
    if not math.isfinite(value):
        raise FloatingPointError("non-finite objective")
    return value


# ---------------------------------------------------------------------------
# Initialisation
# ---------------------------------------------------------------------------


def _masked_profiles(data: ObservationSet, omega) -> np.ndarray:
    """Subject-averaged temporal profile of each variable, shape (p, n)."""
    X = np.stack(data.subjects)
    if omega is None:
        return X.mean(axis=0).T
    num = (X * omega).sum(axis=0)
    den = omega.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        prof = np.where(den > 0, num / den, 0.0)
    return prof.T


def _regress_scores(data, F, window_start, omega, variant):
    """Nonnegative least-squares scores of the windowed factors against the data."""
    M = window_restrict(F, window_start, data.n)
    f = F.shape[1]
    if variant == "OPFA_C":
        A = np.zeros((f, data.p))
        for i in range(data.p):
            rows, rhs = [], []
            for s, X in enumerate(data.subjects):
                obs = slice(None) if omega is None else omega[s][:, i] > 0
                rows.append(M[obs])
                rhs.append(X[obs, i])
            A[:, i] = nnls(np.vstack(rows), np.concatenate(rhs))[0]
        return [A]
    out = []
    for s, X in enumerate(data.subjects):
        A = np.zeros((f, data.p))
        for i in range(data.p):
            obs = slice(None) if omega is None else omega[s][:, i] > 0
            A[:, i] = nnls(M[obs], X[obs, i])[0]
        out.append(A)
    return out


def cluster_profiles(data: ObservationSet, f: int, masks=None) -> np.ndarray:
    """Mean profiles (n x f) of an average-linkage clustering of the variables.

    Variables are clustered on their subject-averaged profiles, each scaled
    to unit Euclidean norm. Columns are ordered by peak time.
    """
    if f > data.p:
        raise ValueError(f"cannot form f={f} clusters from p={data.p} variables")
    omega = _subject_masks(data, masks)
    prof = _masked_profiles(data, omega)
    if f == 1:
        labels = np.ones(data.p, dtype=int)
    else:
        norms = np.linalg.norm(prof, axis=1, keepdims=True)
        unit = np.divide(prof, norms, out=np.zeros_like(prof), where=norms > 0)
        labels = fcluster(linkage(unit, method="average"), t=f, criterion="maxclust")
    means = [prof[labels == k].mean(axis=0) for k in np.unique(labels)]
    means.sort(key=lambda m: int(np.argmax(m)))
    return np.column_stack(means)


def init_factors(
    data: ObservationSet,
    f: int,
    strategy: str = "cluster",
    seed: int = 0,
    n_F: int | None = None,
    window_start: int = 0,
    bound: float = 1.0,
    variant: str = "OPFA",
    masks=None,
):
    """Initial (factors, scores).

    ``random`` draws i.i.d. uniform(0, 1) factors; ``cluster`` uses cluster
    mean profiles embedded at the observation window (zero elsewhere). Both
    are projected into the factor set, and scores come from nonnegative
    least squares of the windowed factors onto each subject.
    """
    n_F = data.n if n_F is None else n_F
    rng = np.random.default_rng(seed)
    if strategy == "random":
        F = rng.uniform(0.0, 1.0, size=(n_F, f))
    elif strategy == "cluster":
        prof = np.maximum(cluster_profiles(data, f, masks), 0.0)
        F = np.zeros((n_F, f))
        k = prof.shape[1]
        F[window_start:window_start + data.n, :k] = prof
        if k < f:
            F[:, k:] = rng.uniform(0.0, 1.0, size=(n_F, f - k))
        for j in np.flatnonzero(~F.any(axis=0)):
            F[:, j] = rng.uniform(0.0, 1.0, size=n_F)
    else:
        raise ValueError(f"unknown init strategy {strategy!r}")
    F = project_factor_set(F, bound)
    omega = _subject_masks(data, masks)
    scores = _regress_scores(data, F, window_start, omega, variant.upper().replace("-", "_"))
    return F, scores


# ---------------------------------------------------------------------------
# BCD
# ---------------------------------------------------------------------------


def _masked_subjects(data: ObservationSet, omega) -> ObservationSet:
    """Zero the unobserved entries so they cannot leak into any computation."""
    if omega is None:
        return data
    return data.with_subjects([np.where(omega[s] > 0, x, 0.0) for s, x in enumerate(data.subjects)])


def _bcd(data, omega, cfg: ModelConfig, F, scores, W, rng):
    S, f = data.S, cfg.f
    w = cfg.window_start
    m = (lambda s: None) if omega is None else (lambda s: omega[s])
    delays = np.zeros((S, f), dtype=int)

    def objective(F_, scores_, delays_):
        return opfa_objective(
            F_, scores_, delays_, data, cfg.lam, cfg.beta, W, w, omega, cfg.d_max, cfg.frobenius_bound
        )

    c = objective(F, scores, delays)
    trace = [c]
    eps = cfg.outer_tol * c
    converged = False
    iterations = 0
    shared = cfg.variant == "OPFA_C"
    for _ in range(cfg.max_outer_iters):
        iterations += 1
        delays = np.stack([
            estimate_delays_bb(
                X, F, scores[0] if shared else scores[s], cfg.d_max, m(s), w
            )
            for s, X in enumerate(data.subjects)
        ])
        quads = [assemble_score_quadratic(X, F, delays[s], m(s), w) for s, X in enumerate(data.subjects)]
        scores = estimate_scores(
            quads, cfg.lam, cfg.variant, cfg.inner_tol, cfg.inner_max_iters, init=scores
        )
        fq = assemble_factor_quadratic(
            data.subjects, scores, delays, cfg.n_F, w, cfg.beta, W, omega
        )
        F = estimate_factors(fq, cfg.frobenius_bound, cfg.inner_tol, cfg.inner_max_iters, init=F)
        c_new = objective(F, scores, delays)

        dead = np.flatnonzero(np.linalg.norm(F, axis=0) <= 1e-12 * cfg.frobenius_bound)
        if dead.size:
            F_try = F.copy()
            F_try[:, dead] = rng.uniform(0.0, 1e-3 * cfg.frobenius_bound / math.sqrt(cfg.n_F),
                                         size=(cfg.n_F, dead.size))
            F_try = project_factor_set(F_try, cfg.frobenius_bound)
            scores_try = [a.copy() for a in scores]
            for a in scores_try:
                a[dead] = 0.0
            c_try = objective(F_try, scores_try, delays)
            if c_try <= trace[-1]:
                log.debug("re-seeded dead factor column(s) %s", dead.tolist())
                F, scores, c_new = F_try, scores_try, c_try

        trace.append(c_new)
        if trace[-2] - c_new < eps:
            converged = True
            break
    return F, scores, delays, trace, converged, iterations


def _single_run(data, omega, cfg, strategy, seed, init, W):
    rng = np.random.default_rng(seed)
    if init is None:
        F0, A0 = init_factors(
            data, cfg.f, strategy, seed, cfg.n_F, cfg.window_start,
            cfg.frobenius_bound, cfg.variant, omega,
        )
    else:
        F0 = project_factor_set(init[0], cfg.frobenius_bound)
        A0 = [np.maximum(np.asarray(a, float), 0.0) for a in init[1]]
        if cfg.variant == "OPFA_C" and len(A0) > 1:
            A0 = [np.mean(A0, axis=0)]
        elif cfg.variant == "OPFA" and len(A0) == 1 and data.S > 1:
            A0 = A0 * data.S
    return _bcd(data, omega, cfg, F0, A0, W, rng)


def fit_opfa(
    data: ObservationSet,
    config: ModelConfig,
    masks=None,
    init=None,
    W=None,
    n_jobs: int = 1,
) -> OpfaFit:
    """Fit OPFA / OPFA-C by block coordinate descent.

    Runs ``config.restarts`` initialisations (the first from hierarchical
    clustering, the rest random with seeds ``seed + r``) and keeps the one
    with the smallest final objective. ``masks`` (S x n x p, 1 = use) is
    combined with any masks carried by ``data``; masked entries never enter
    the computation. ``init=(F, scores)`` replaces the restarts with a
    single warm-started run.
    """
    cfg = config.resolved(data.n)
    omega = _subject_masks(data, masks)
    data = _masked_subjects(data, omega)
    if init is not None:
        jobs = [("warm", cfg.seed)]
    else:
        jobs = [("cluster" if r == 0 else "random", cfg.seed + r) for r in range(cfg.restarts)]
    if n_jobs == 1 or len(jobs) == 1:
        runs = [_single_run(data, omega, cfg, st, sd, init, W) for st, sd in jobs]
    else:
        runs = Parallel(n_jobs=n_jobs)(
            delayed(_single_run)(data, omega, cfg, st, sd, init, W) for st, sd in jobs
        )
    finals = [r[3][-1] for r in runs]
    best = int(np.argmin(finals))
    F, scores, delays, trace, converged, iterations = runs[best]
    log.info("restart objectives %s; kept #%d", ["%.6g" % v for v in finals], best)
    return OpfaFit(
        factors=F,
        scores=[np.asarray(a) for a in scores],
        delays=np.asarray(delays, dtype=int),
        objective_trace=[float(v) for v in trace],
        converged=bool(converged),
        iterations=int(iterations),
        config=cfg,
        subject_ids=data.subject_ids,
        extra={"restart_objectives": [float(v) for v in finals], "selected_restart": best},
    )


def reconstruct(fit: OpfaFit, n: int, s: int) -> np.ndarray:
    """Fitted n x p matrix of subject ``s``."""
    return predict_subject(fit.factors, fit.delays[s], fit.subject_scores(s), fit.config.window_start, n)
