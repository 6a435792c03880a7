"""Data containers, dataset file I/O and preprocessing.

A dataset on disk is one JSON manifest plus one headerless CSV per subject
matrix (and optionally one per mask)::

    {"n": 4, "p": 3, "S": 2,
     "time_points": [0, 1, 2, 3],
     "variable_ids": ["g1", "g2", "g3"],
     "subjects": [{"id": "s1", "matrix": "s1.csv", "mask": "s1_mask.csv"},
                  {"id": "s2", "matrix": "s2.csv"}]}

Relative paths are resolved against the manifest's directory.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

FLOAT_FMT = "%.12g"


class DatasetError(ValueError):
    """Raised for malformed datasets, manifests or fit directories."""


def _frozen(a, dtype=float):
    out = np.array(a, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ObservationSet:
    """S observed n x p matrices with optional 0/1 masks (1 = observed)."""

    subjects: tuple
    masks: tuple | None = None
    subject_ids: tuple = ()
    variable_ids: tuple = ()
    time_points: tuple = ()

    def __post_init__(self):
        subjects = tuple(_frozen(x) for x in self.subjects)
        if len(subjects) < 1:
            raise DatasetError("need at least one subject")
        shape = subjects[0].shape
        if len(shape) != 2:
            raise DatasetError("subject matrices must be two-dimensional")
        for k, x in enumerate(subjects):
            if x.shape != shape:
                raise DatasetError(
                    f"dimension mismatch: subject {k} is {x.shape}, expected {shape}"
                )
            if not np.all(np.isfinite(x)):
                raise DatasetError(f"subject {k} has non-finite entries")
        n, p = shape
        if n < 2 or p < 1:
            raise DatasetError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
        object.__setattr__(self, "subjects", subjects)

        if self.masks is not None:
            masks = tuple(_frozen(m) for m in self.masks)
            if len(masks) != len(subjects):
                raise DatasetError("one mask per subject is required")
            for k, m in enumerate(masks):
                if m.shape != shape:
                    raise DatasetError(f"mask {k} has shape {m.shape}, expected {shape}")
                if not np.all((m == 0) | (m == 1)):
                    raise DatasetError(f"mask {k} has values outside {{0, 1}}")
            object.__setattr__(self, "masks", masks)

        S = len(subjects)
        ids = tuple(self.subject_ids) or tuple(f"s{k + 1}" for k in range(S))
        if len(ids) != S or len(set(ids)) != S:
            raise DatasetError("subject_ids must be S distinct strings")
        object.__setattr__(self, "subject_ids", tuple(str(i) for i in ids))
        var = tuple(self.variable_ids) or tuple(f"v{i + 1}" for i in range(p))
        if len(var) != p:
            raise DatasetError("variable_ids must have p entries")
        object.__setattr__(self, "variable_ids", tuple(str(v) for v in var))
        tp = tuple(float(t) for t in self.time_points) or tuple(float(t) for t in range(n))
        if len(tp) != n:
            raise DatasetError("time_points must have n entries")
        object.__setattr__(self, "time_points", tp)

    @property
    def n(self) -> int:
        return self.subjects[0].shape[0]

    @property
    def p(self) -> int:
        return self.subjects[0].shape[1]

    @property
    def S(self) -> int:
        return len(self.subjects)

    def mask(self, s: int) -> np.ndarray:
        """Mask of subject ``s``; all-ones when the set carries no masks."""
        if self.masks is None:
            return np.ones((self.n, self.p))
        return self.masks[s]

    def with_masks(self, masks) -> "ObservationSet":
        return replace(self, masks=None if masks is None else tuple(masks))

    def with_subjects(self, subjects) -> "ObservationSet":
        return replace(self, subjects=tuple(subjects))


_VARIANTS = ("OPFA", "OPFA_C")


def normalize_variant(value: str) -> str:
    v = str(value).upper().replace("-", "_")
    if v not in _VARIANTS:
        raise ValueError(f"unknown variant {value!r}; expected OPFA or OPFA_C")
    return v


@dataclass(frozen=True)
class ModelConfig:
    """Model and solver settings.

    ``n_F`` defaults to ``n + d_max`` once the observation length is known
    (see :meth:`resolved`). ``outer_tol`` is relative: outer iterations stop
    when the objective decreases by less than ``outer_tol`` times the initial
    objective.
    """

    f: int = 2
    d_max: int = 0
    lam: float = 0.0
    beta: float = 0.0
    n_F: int | None = None
    window_start: int = 0
    frobenius_bound: float = 1.0
    variant: str = "OPFA"
    max_outer_iters: int = 200
    outer_tol: float = 1e-6
    inner_tol: float = 1e-9
    inner_max_iters: int = 3000
    restarts: int = 4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", normalize_variant(self.variant))
        if int(self.f) < 1:
            raise ValueError("f must be a positive integer")
        if int(self.d_max) < 0:
            raise ValueError("d_max must be nonnegative")
        if self.lam < 0 or self.beta < 0:
            raise ValueError("penalty weights must be nonnegative")
        if not self.frobenius_bound > 0:
            raise ValueError("frobenius_bound must be positive")
        if self.window_start < 0:
            raise ValueError("window_start must be nonnegative")
        if self.max_outer_iters < 1 or self.restarts < 1 or self.inner_max_iters < 1:
            raise ValueError("iteration counts must be positive")
        if not (self.outer_tol > 0 and self.inner_tol > 0):
            raise ValueError("tolerances must be positive")

    def resolved(self, n: int) -> "ModelConfig":
        """Fill in ``n_F`` for observations of length ``n`` and validate the window."""
        n_F = self.n_F if self.n_F is not None else n + self.d_max
        if self.d_max > n:
            raise ValueError(f"d_max={self.d_max} exceeds n={n}")
        if n_F < n + self.d_max:
            raise ValueError(f"n_F={n_F} < n + d_max = {n + self.d_max} (wrap-around)")
        if self.window_start + n > n_F:
            raise ValueError(f"window [{self.window_start}, {self.window_start + n}) exceeds n_F={n_F}")
        return replace(self, n_F=int(n_F))

    @property
    def window(self):
        return self.window_start

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ModelConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class OpfaFit:
    """Result of a BCD fit.

    ``scores`` holds S matrices (f x p) for OPFA and a single shared one for
    OPFA-C. ``delays`` is an (S, f) integer array of order-preserving shifts.
    """

    factors: np.ndarray
    scores: list
    delays: np.ndarray
    objective_trace: list
    converged: bool
    iterations: int
    config: ModelConfig
    subject_ids: tuple = ()
    extra: dict = field(default_factory=dict)

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    def subject_scores(self, s: int) -> np.ndarray:
        return self.scores[0] if len(self.scores) == 1 else self.scores[s]


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------


def read_matrix_csv(path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
    if not rows:
        raise DatasetError(f"{path}: empty matrix")
    if len({len(r) for r in rows}) != 1:
        raise DatasetError(f"{path}: ragged rows")
    return np.asarray(rows, dtype=float)


def write_matrix_csv(path, matrix, fmt: str = FLOAT_FMT) -> None:
    matrix = np.atleast_2d(np.asarray(matrix))
    with open(path, "w", newline="") as fh:
        for row in matrix:
            fh.write(",".join(fmt % v for v in row) + "\n")


def load_dataset(manifest_path) -> ObservationSet:
    """Read a manifest plus its per-subject CSVs into a validated ObservationSet."""
    manifest_path = Path(manifest_path)
    try:
        meta = json.loads(manifest_path.read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{manifest_path}: invalid JSON ({exc})") from None
    base = manifest_path.parent
    entries = meta.get("subjects")
    if not entries:
        raise DatasetError("manifest lists no subjects")

    subjects, masks, ids = [], [], []
    any_mask = False
    for entry in entries:
        x = read_matrix_csv(base / entry["matrix"])
        subjects.append(x)
        ids.append(entry.get("id", f"s{len(ids) + 1}"))
        if entry.get("mask"):
            any_mask = True
            masks.append(read_matrix_csv(base / entry["mask"]))
        else:
            masks.append(np.ones_like(x))

    shapes = {x.shape for x in subjects}
    if len(shapes) != 1:
        raise DatasetError(f"dimension mismatch across subjects: {sorted(shapes)}")
    n, p = subjects[0].shape
    for key, actual in (("n", n), ("p", p), ("S", len(subjects))):
        if key in meta and int(meta[key]) != actual:
            raise DatasetError(f"manifest {key}={meta[key]} but data has {key}={actual}")
    return ObservationSet(
        subjects=subjects,
        masks=masks if any_mask else None,
        subject_ids=ids,
        variable_ids=meta.get("variable_ids") or (),
        time_points=meta.get("time_points") or (),
    )


def save_dataset(data: ObservationSet, out_dir, fmt: str = FLOAT_FMT) -> Path:
    """Write ``data`` as manifest.json plus CSVs; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for s, sid in enumerate(data.subject_ids):
        stem = _safe_name(sid)
        entry = {"id": sid, "matrix": f"{stem}.csv"}
        write_matrix_csv(out_dir / entry["matrix"], data.subjects[s], fmt)
        if data.masks is not None:
            entry["mask"] = f"{stem}_mask.csv"
            write_matrix_csv(out_dir / entry["mask"], data.masks[s], "%d")
        entries.append(entry)
    manifest = {
        "n": data.n,
        "p": data.p,
        "S": data.S,
        "time_points": list(data.time_points),
        "variable_ids": list(data.variable_ids),
        "subjects": entries,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def column_sum_normalize(data: ObservationSet) -> ObservationSet:
    """Divide every entry by the sum of its column, subject by subject."""
    out = []
    for s, x in enumerate(data.subjects):
        sums = x.sum(axis=0)
        bad = np.flatnonzero(~(sums > 0))
        if bad.size:
            raise DatasetError(
                f"subject {data.subject_ids[s]}: column(s) {bad.tolist()} have non-positive sum"
            )
        out.append(x / sums)
    return data.with_subjects(out)


# ---------------------------------------------------------------------------
# Fit artifacts
# ---------------------------------------------------------------------------


def _safe_name(s: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", str(s))


def write_fit(fit: OpfaFit, out_dir) -> None:
    """Write factors, delays, scores, objective trace and fit.json into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(out_dir / "factors.csv", fit.factors)
    write_matrix_csv(out_dir / "delays.csv", np.asarray(fit.delays, dtype=int), "%d")
    ids = list(fit.subject_ids) or [f"s{k + 1}" for k in range(len(fit.delays))]
    if fit.config.variant == "OPFA_C":
        score_files = ["scores.csv"]
        write_matrix_csv(out_dir / "scores.csv", fit.scores[0])
    else:
        score_files = [f"scores_{_safe_name(sid)}.csv" for sid in ids]
        if len(set(score_files)) != len(score_files):
            score_files = [f"scores_{k}.csv" for k in range(len(ids))]
        for name, a in zip(score_files, fit.scores):
            write_matrix_csv(out_dir / name, a)
    with open(out_dir / "objective_trace.csv", "w") as fh:
        fh.write("iteration,objective\n")
        for t, c in enumerate(fit.objective_trace):
            fh.write(f"{t},{FLOAT_FMT % c}\n")
    meta = {
        "config": fit.config.to_dict(),
        "subject_ids": ids,
        "score_files": score_files,
        "converged": bool(fit.converged),
        "iterations": int(fit.iterations),
        "objective": float(fit.objective_trace[-1]),
    }
    meta.update({k: v for k, v in fit.extra.items() if _jsonable(v)})
    (out_dir / "fit.json").write_text(json.dumps(meta, indent=2) + "\n")


def _jsonable(v) -> bool:
    try:
        json.dumps(v)
    except TypeError:
        return False
    return True


def load_fit(fit_dir) -> OpfaFit:
    """Inverse of :func:`write_fit`."""
    fit_dir = Path(fit_dir)
    try:
        meta = json.loads((fit_dir / "fit.json").read_text())
    except FileNotFoundError:
        raise DatasetError(f"{fit_dir} is not a fit directory (no fit.json)") from None
    config = ModelConfig.from_dict(meta["config"])
    factors = read_matrix_csv(fit_dir / "factors.csv")
    delays = read_matrix_csv(fit_dir / "delays.csv").astype(int)
    scores = [read_matrix_csv(fit_dir / name) for name in meta["score_files"]]
    trace = []
    with open(fit_dir / "objective_trace.csv") as fh:
        next(fh)
        for line in fh:
            if line.strip():
                trace.append(float(line.split(",")[1]))
    return OpfaFit(
        factors=factors,
        scores=scores,
        delays=delays,
        objective_trace=trace,
        converged=meta["converged"],
        iterations=meta["iterations"],
        config=config,
        subject_ids=tuple(meta["subject_ids"]),
    )


def stack_masks(data: ObservationSet, masks: Sequence | None = None) -> np.ndarray:
    """(S, n, p) float array of masks, combining ``data.masks`` with ``masks``."""
    base = np.ones((data.S, data.n, data.p))
    if data.masks is not None:
        base = base * np.stack(data.masks)
    if masks is not None:
        base = base * np.stack([np.asarray(m, dtype=float) for m in masks])
    return base
