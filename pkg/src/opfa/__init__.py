"""Nonnegative factor models with order-preserving per-subject delays (OPFA / OPFA-C) for misaligned time courses."""

from .data import (
    DatasetError,
    ModelConfig,
    ObservationSet,
    OpfaFit,
    column_sum_normalize,
    load_dataset,
    load_fit,
    save_dataset,
    write_fit,
)
from .bench import SweepConfig, run_sweep, summarize, write_sweep
from .delays import (
    BBNode,
    delay_lower_bound,
    delay_objective,
    estimate_delays_bb,
    estimate_delays_bruteforce,
)
from .driver import fit_opfa, init_factors, opfa_objective, reconstruct
from .penalties import (
    difference_operator,
    group_lasso_penalty,
    nonneg_group_prox,
    project_factor_set,
    tv_penalty,
)
from .quadratic import (
    BlockQuadraticForm,
    QuadraticForm,
    assemble_factor_quadratic,
    assemble_score_quadratic,
    estimate_factors,
    estimate_scores,
)
from .selection import CvConfig, CvRow, CvTable, cross_validate, holdout_masks, masked_error
from .shift import (
    build_shifted_factors,
    circular_shift,
    in_order_cone,
    predict_subject,
    window_restrict,
)
from .synthetic import (
    SyntheticConfig,
    SyntheticDataset,
    absolute_onset_times,
    aligned_dtf,
    dtf,
    generate_synthetic,
    mse,
    snr_db,
)

__version__ = "0.1.0"
