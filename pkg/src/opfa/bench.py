"""Monte-Carlo sweeps comparing OPFA, OPFA-C and SFA on synthetic data."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .data import ModelConfig
from .driver import fit_opfa
from .synthetic import SyntheticConfig, aligned_dtf, generate_synthetic, mse

log = logging.getLogger(__name__)

MODELS = ("OPFA", "OPFA_C", "SFA")
AXES = ("sigma_d2", "snr_db")
RESULT_FIELDS = ["axis_name", "axis_value", "model", "trial", "mse", "dtf"]
SUMMARY_FIELDS = ["axis_name", "axis_value", "model", "trials", "mse_mean", "mse_ci95", "dtf_mean", "dtf_ci95"]


@dataclass
class SweepConfig:
    """A one-dimensional sweep.

    ``synthetic`` and ``fit`` hold SyntheticConfig / ModelConfig overrides.
    When ``fit`` leaves ``d_max`` unset, OPFA models use the generator's
    ``d_max``. SFA is always fitted with ``d_max = 0`` and ``n_F = n``.
    Trial ``t`` uses seed ``seed + t`` for both generation and fitting.
    """

    axis: str = "sigma_d2"
    values: list = field(default_factory=lambda: [0.0, 5.0])
    trials: int = 20
    models: list = field(default_factory=lambda: ["OPFA", "SFA"])
    synthetic: dict = field(default_factory=dict)
    fit: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}, got {self.axis!r}")
        if not self.values:
            raise ValueError("values must be nonempty")
        if self.trials < 1:
            raise ValueError("trials must be positive")
        self.models = [str(m).upper().replace("-", "_") for m in self.models]
        bad = [m for m in self.models if m not in MODELS]
        if bad or not self.models:
            raise ValueError(f"models must be a nonempty subset of {MODELS}, got {bad or self.models}")

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        return cls(**d)


def model_config(model: str, synth: SyntheticConfig, overrides: dict, seed: int) -> ModelConfig:
    base = {"f": synth.f, "seed": seed}
    base.update(overrides)
    if model == "SFA":
        base.update(d_max=0, n_F=synth.n, window_start=0, variant="OPFA")
    else:
        base.setdefault("d_max", synth.d_max)
        base.setdefault("n_F", synth.n_F)
        base.setdefault("window_start", synth.window_start)
        base["variant"] = "OPFA_C" if model == "OPFA_C" else "OPFA"
    return ModelConfig.from_dict(base)


def _run_trial(sweep: SweepConfig, value: float, trial: int):
    seed = sweep.seed + trial
    synth = SyntheticConfig.from_dict({**sweep.synthetic, sweep.axis: value, "seed": seed})
    truth = generate_synthetic(synth)
    rows = []
    for model in sweep.models:
        cfg = model_config(model, synth, sweep.fit, seed)
        fit = fit_opfa(truth.data, cfg)
        rows.append({
            "axis_name": sweep.axis,
            "axis_value": float(value),
            "model": model,
            "trial": trial,
            "mse": mse(truth, fit),
            "dtf": aligned_dtf(truth, fit),
        })
    return rows


def summarize(rows) -> list:
    """Mean and normal-approximation 95% half-width (1.96 standard errors) per point and model."""
    groups = {}
    for r in rows:
        groups.setdefault((r["axis_name"], r["axis_value"], r["model"]), []).append(r)
    out = []
    for (axis, value, model), rs in groups.items():
        entry = {"axis_name": axis, "axis_value": value, "model": model, "trials": len(rs)}
        for metric in ("mse", "dtf"):
            v = np.array([r[metric] for r in rs], dtype=float)
            half = 1.96 * v.std(ddof=1) / math.sqrt(v.size) if v.size > 1 else float("nan")
            entry[f"{metric}_mean"] = float(v.mean())
            entry[f"{metric}_ci95"] = float(half)
        out.append(entry)
    return out


def run_sweep(sweep, n_jobs: int = 1) -> list:
    """Generate, fit and score every (axis value, trial, model); returns result rows."""
    if isinstance(sweep, dict):
        sweep = SweepConfig.from_dict(sweep)
    jobs = [(v, t) for v in sweep.values for t in range(sweep.trials)]
    if n_jobs == 1:
        chunks = [_run_trial(sweep, v, t) for v, t in jobs]
    else:
        chunks = Parallel(n_jobs=n_jobs)(delayed(_run_trial)(sweep, v, t) for v, t in jobs)
    return [r for chunk in chunks for r in chunk]


def _write_csv(path, rows, fields):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def plot_summary(summary, metric: str, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "opfa"

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for model in dict.fromkeys(r["model"] for r in summary):
        rs = sorted((r for r in summary if r["model"] == model), key=lambda r: r["axis_value"])
        ax.errorbar(
            [r["axis_value"] for r in rs],
            [r[f"{metric}_mean"] for r in rs],
            yerr=[r[f"{metric}_ci95"] for r in rs],
            marker="o", capsize=3, label=model,
        )
    ax.set_xlabel(summary[0]["axis_name"])
    ax.set_ylabel(metric.upper())
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def write_sweep(rows, out_dir) -> list:
    """Write results.csv, summary.csv and one SVG chart per metric; returns the summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = summarize(rows)
    _write_csv(out_dir / "results.csv", rows, RESULT_FIELDS)
    _write_csv(out_dir / "summary.csv", summary, SUMMARY_FIELDS)
    for metric in ("mse", "dtf"):
        plot_summary(summary, metric, out_dir / f"{metric}.svg")
    return summary
