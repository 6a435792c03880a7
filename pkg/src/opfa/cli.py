"""Command-line interface: ``opfa {fit,cv,simulate,bench,align}``.

Exit codes: 0 success, 1 usage or input error, 2 fit stopped at the
iteration limit (results are still written).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .bench import SweepConfig, run_sweep, write_sweep
from .data import (
    DatasetError,
    ModelConfig,
    column_sum_normalize,
    load_dataset,
    load_fit,
    save_dataset,
    write_fit,
    write_matrix_csv,
)
from .driver import fit_opfa
from .selection import CvConfig, cross_validate
from .synthetic import SyntheticConfig, absolute_onset_times, generate_synthetic

log = logging.getLogger("opfa")

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2

# flag name -> ModelConfig field
MODEL_FLAGS = {
    "f": "f",
    "d_max": "d_max",
    "lam": "lam",
    "beta": "beta",
    "n_F": "n_F",
    "window_start": "window_start",
    "frobenius_bound": "frobenius_bound",
    "variant": "variant",
    "max_outer_iters": "max_outer_iters",
    "outer_tol": "outer_tol",
    "inner_tol": "inner_tol",
    "restarts": "restarts",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _read_json(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise ValueError(f"{path}: expected a JSON object")
    return obj


def _model_config(args) -> ModelConfig:
    raw = _read_json(args.config)
    cfg = ModelConfig.from_dict(raw)
    overrides = {
        field: getattr(args, flag)
        for flag, field in MODEL_FLAGS.items()
        if getattr(args, flag, None) is not None
    }
    if args.seed is not None:
        overrides["seed"] = args.seed
    return replace(cfg, **overrides) if overrides else cfg


def _load(args):
    data = load_dataset(args.data)
    if getattr(args, "normalize", False):
        data = column_sum_normalize(data)
    return data


def _threads(args) -> int:
    return args.threads if args.threads else (os.cpu_count() or 1)


def cmd_fit(args) -> int:
    data = _load(args)
    cfg = _model_config(args)
    fit = fit_opfa(data, cfg, n_jobs=_threads(args))
    write_fit(fit, args.out)
    log.info("objective %.6g after %d iterations (converged=%s)", fit.objective, fit.iterations, fit.converged)
    return EXIT_OK if fit.converged else EXIT_NOT_CONVERGED


def cmd_cv(args) -> int:
    data = _load(args)
    cfg = _model_config(args)
    grid = _read_json(args.grid)
    if args.holdout_fraction is not None:
        grid["holdout_fraction"] = args.holdout_fraction
    grid.setdefault("seed", cfg.seed)
    cv_cfg = CvConfig.from_dict(grid)
    table = cross_validate(data, cfg, cv_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "cv_table.csv")
    row = table.selected
    write_fit(table.selected_fit, out / "cv_fit")
    refit = fit_opfa(data, replace(cfg, f=row.f, lam=row.lam, beta=row.beta), n_jobs=_threads(args))
    write_fit(refit, out / "fit")
    selected = {
        "f": row.f,
        "lambda": row.lam,
        "beta": row.beta,
        "cv_error": row.cv_error,
        "train_error": row.train_error,
    }
    (out / "selected.json").write_text(json.dumps(selected, indent=2) + "\n")
    print(json.dumps(selected))
    return EXIT_OK if refit.converged else EXIT_NOT_CONVERGED


def cmd_simulate(args) -> int:
    raw = _read_json(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = SyntheticConfig.from_dict(raw)
    ds = generate_synthetic(cfg)
    out = Path(args.out)
    save_dataset(ds.data, out)
    truth = out / "truth"
    truth.mkdir(exist_ok=True)
    write_matrix_csv(truth / "factors.csv", ds.true_factors)
    write_matrix_csv(truth / "delays.csv", ds.true_delays, "%d")
    for sid, a, d in zip(ds.data.subject_ids, ds.true_scores, ds.noiseless):
        write_matrix_csv(truth / f"scores_{sid}.csv", a)
        write_matrix_csv(truth / f"noiseless_{sid}.csv", d)
    meta = {"config": cfg.to_dict(), "sigma_eps2": ds.sigma_eps2}
    (truth / "synthetic.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_bench(args) -> int:
    raw = _read_json(args.sweep)
    if args.seed is not None:
        raw["seed"] = args.seed
    sweep = SweepConfig.from_dict(raw)
    rows = run_sweep(sweep, n_jobs=_threads(args))
    write_sweep(rows, args.out)
    return EXIT_OK


def cmd_align(args) -> int:
    fit = load_fit(args.fit)
    cfg = fit.config
    f = fit.factors.shape[1]
    factors = args.factor
    for j in factors:
        if not 0 <= j < f:
            raise ValueError(f"factor index {j} outside [0, {f})")
    columns = [absolute_onset_times(fit.delays, args.t_i, j, cfg.n_F, cfg.window_start) for j in factors]
    ids = list(fit.subject_ids) or [f"s{k + 1}" for k in range(len(fit.delays))]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write(",".join(["subject_id"] + [f"factor_{j}" for j in factors]) + "\n")
        for s, sid in enumerate(ids):
            fh.write(",".join([sid] + ["%g" % col[s] for col in columns]) + "\n")
    return EXIT_OK


def _add_model_flags(p):
    g = p.add_argument_group("model overrides (take precedence over --config)")
    g.add_argument("--f", type=int)
    g.add_argument("--d-max", dest="d_max", type=int)
    g.add_argument("--lambda", dest="lam", type=float)
    g.add_argument("--beta", type=float)
    g.add_argument("--n-f", dest="n_F", type=int)
    g.add_argument("--window-start", type=int)
    g.add_argument("--frobenius-bound", type=float)
    g.add_argument("--variant", choices=["opfa", "opfa-c", "OPFA", "OPFA_C"])
    g.add_argument("--max-outer-iters", type=int)
    g.add_argument("--outer-tol", type=float)
    g.add_argument("--inner-tol", type=float)
    g.add_argument("--restarts", type=int)
    p.add_argument("--normalize", action="store_true", help="divide each column by its sum per subject")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="worker processes (default: all cores)")
    common.add_argument("--seed", type=int, default=None, help="overrides the seed in the config file")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = _Parser(prog="opfa", description="Factor models with order-preserving per-subject delays")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", parents=[common], help="fit a model to a dataset")
    p.add_argument("--data", required=True, help="dataset manifest (JSON)")
    p.add_argument("--config", help="ModelConfig JSON")
    p.add_argument("--out", required=True)
    _add_model_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("cv", parents=[common], help="select (f, lambda, beta) by hold-out CV")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="ModelConfig JSON (base settings)")
    p.add_argument("--grid", required=True, help="CvConfig JSON: f_values, lambda_grid, beta_grid, ...")
    p.add_argument("--out", required=True)
    p.add_argument("--holdout-fraction", type=float, default=None, help="fraction held out (default 0.1)")
    _add_model_flags(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--config", help="SyntheticConfig JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", parents=[common], help="run a Monte-Carlo sweep")
    p.add_argument("--sweep", required=True, help="sweep JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("align", parents=[common], help="absolute onset times from a fit")
    p.add_argument("--fit", required=True, help="fit directory")
    p.add_argument("--t-i", dest="t_i", type=int, required=True, help="feature index in factor coordinates")
    p.add_argument("--factor", type=int, nargs="+", required=True, help="factor column(s), 0-based")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_align)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DatasetError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"opfa {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
