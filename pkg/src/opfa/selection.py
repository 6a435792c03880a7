"""Hold-out cross-validation over (f, lambda, beta)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from .data import ModelConfig, ObservationSet, OpfaFit, stack_masks
from .driver import fit_opfa, reconstruct

MAX_MASK_DRAWS = 1000


@dataclass(frozen=True)
class CvConfig:
    holdout_fraction: float = 0.1
    lambda_grid: tuple = (0.0,)
    beta_grid: tuple = (0.0,)
    f_values: tuple = (1, 2, 3)
    seed: int = 0
    tie_tolerance: float = 1e-3

    def __post_init__(self):
        if not 0 < self.holdout_fraction < 1:
            raise ValueError("holdout_fraction must lie in (0, 1)")
        for name in ("lambda_grid", "beta_grid", "f_values"):
            values = tuple(getattr(self, name))
            if not values:
                raise ValueError(f"{name} must be nonempty")
            if any(v < 0 for v in values):
                raise ValueError(f"{name} must be nonnegative")
            object.__setattr__(self, name, values)
        if any(int(f) < 1 for f in self.f_values):
            raise ValueError("f_values must be positive integers")
        if self.tie_tolerance < 0:
            raise ValueError("tie_tolerance must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict) -> "CvConfig":
        d = dict(d)
        if "lambda" in d:
            d["lambda_grid"] = d.pop("lambda")
        if "beta" in d:
            d["beta_grid"] = d.pop("beta")
        if "f" in d:
            d["f_values"] = d.pop("f")
        return cls(**d)


@dataclass(frozen=True)
class CvRow:
    f: int
    lam: float
    beta: float
    cv_error: float
    train_error: float


@dataclass
class CvTable:
    """CV results.

    ``zero_model_error`` is the CV error of the all-zero model, i.e. the
    mean held-out energy. Rows whose cv_error is within ``tie_tolerance``
    times that energy of the minimum count as tied; among tied rows the
    simplest model wins (smallest f, then largest lambda, then largest beta).
    With ``tie_tolerance = 0`` this is the plain argmin.
    """

    rows: list
    zero_model_error: float = 0.0
    tie_tolerance: float = 0.0
    masks: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)

    @property
    def selected(self) -> CvRow:
        best = min(r.cv_error for r in self.rows)
        cutoff = best + self.tie_tolerance * self.zero_model_error
        tied = [r for r in self.rows if r.cv_error <= cutoff]
        return min(tied, key=lambda r: (r.f, -r.lam, -r.beta, r.cv_error))

    @property
    def selected_fit(self) -> OpfaFit | None:
        r = self.selected
        return self.fits.get((r.f, r.lam, r.beta))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["f", "lambda", "beta", "cv_error", "train_error"])
            for r in self.rows:
                w.writerow([r.f, repr(float(r.lam)), repr(float(r.beta)),
                            repr(float(r.cv_error)), repr(float(r.train_error))])


def holdout_masks(n: int, p: int, S: int, fraction: float, seed: int = 0) -> list:
    """Training masks (1 = train, 0 = held out), one n x p matrix per subject.

    Each subject gets exactly ``round(fraction * n * p)`` held-out entries,
    drawn uniformly without replacement. Draws that hold out an entire row
    or column are rejected and redrawn.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    k = int(round(fraction * n * p))
    if n * p - k < max(n, p):
        raise ValueError(f"cannot hold out {k} of {n * p} entries and keep every row and column")
    rng = np.random.default_rng(seed)
    masks = []
    for _ in range(S):
        for _ in range(MAX_MASK_DRAWS):
            m = np.ones(n * p)
            m[rng.choice(n * p, size=k, replace=False)] = 0.0
            m = m.reshape(n, p)
            if m.any(axis=0).all() and m.any(axis=1).all():
                masks.append(m)
                break
        else:
            raise ValueError(
                f"no admissible hold-out pattern found in {MAX_MASK_DRAWS} draws "
                f"(n={n}, p={p}, fraction={fraction})"
            )
    return masks


def masked_error(data: ObservationSet, fit: OpfaFit, masks) -> float:
    """(1/S) sum_s ||[X_s - X_hat_s]_mask_s||_F^2."""
    total = 0.0
    for s, X in enumerate(data.subjects):
        R = (X - reconstruct(fit, data.n, s)) * masks[s]
        total += float(np.einsum("ij,ij->", R, R))
    return total / data.S


def _fit_point(data, cfg, train, init):
    return fit_opfa(data, cfg, masks=train, init=init)


def cross_validate(
    data: ObservationSet,
    base_config: ModelConfig,
    cv_config: CvConfig,
    n_jobs: int = 1,
    keep_fits: bool = False,
) -> CvTable:
    """Fit every (f, lambda, beta) on the training entries and score the held-out ones.

    Grid points for one ``f`` are visited in the order the grids are listed,
    each warm-started from the previous solution; with ``n_jobs != 1`` all
    points run independently from cold starts. Held-out entries are zeroed
    before fitting, so their values cannot reach the estimates.
    """
    train = holdout_masks(data.n, data.p, data.S, cv_config.holdout_fraction, cv_config.seed)
    observed = stack_masks(data)
    test = [observed[s] * (1.0 - train[s]) for s in range(data.S)]
    fit_masks = [observed[s] * train[s] for s in range(data.S)]
    # held-out values are replaced by zeros so nothing downstream can read them
    blind = data.with_subjects([np.where(m > 0, x, 0.0) for x, m in zip(data.subjects, fit_masks)])

    points = [
        (int(f), float(lam), float(beta))
        for f in cv_config.f_values
        for lam in cv_config.lambda_grid
        for beta in cv_config.beta_grid
    ]

    def config_for(f, lam, beta):
        return replace(base_config, f=f, lam=lam, beta=beta)

    fits = {}
    if n_jobs == 1:
        prev = {}
        for f, lam, beta in points:
            fit = _fit_point(blind, config_for(f, lam, beta), train, prev.get(f))
            prev[f] = (fit.factors, fit.scores)
            fits[(f, lam, beta)] = fit
    else:
        results = Parallel(n_jobs=n_jobs)(
            delayed(_fit_point)(blind, config_for(*pt), train, None) for pt in points
        )
        fits = dict(zip(points, results))

    rows = []
    for pt in points:
        fit = fits[pt]
        cv = masked_error(data, fit, test)
        tr = masked_error(data, fit, fit_masks)
        if not (math.isfinite(cv) and math.isfinite(tr)):
            raise FloatingPointError(f"non-finite CV error at {pt}")
        rows.append(CvRow(pt[0], pt[1], pt[2], cv, tr))
    zero = sum(float(np.sum((X * m) ** 2)) for X, m in zip(data.subjects, test)) / data.S
    table = CvTable(rows, zero, cv_config.tie_tolerance, masks=train)
    if keep_fits:
        table.fits = fits
    else:
        r = table.selected
        table.fits = {(r.f, r.lam, r.beta): fits[(r.f, r.lam, r.beta)]}
    return table
