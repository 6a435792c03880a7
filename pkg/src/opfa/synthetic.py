"""Synthetic misaligned factor data and the evaluation metrics used on it."""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .data import ObservationSet
from .shift import build_shifted_factors, predict_subject


@dataclass(frozen=True)
class SyntheticConfig:
    """Generator settings.

    ``d_max`` defaults to the largest delay the generator can draw and
    ``n_F`` to ``n + d_max``. When ``snr_db`` is set it overrides
    ``sigma_eps2``: the noise variance is chosen so that the realised mean
    signal energy over ``n * p * sigma_eps2`` hits the requested SNR.
    """

    S: int = 10
    n: int = 20
    p: int = 100
    f: int = 2
    d_max: int | None = None
    n_F: int | None = None
    window_start: int = 0
    sigma_eps2: float = 0.0
    sigma_d2: float = 5.0
    sparsity: float = 0.5
    dictionary: str = "bump"
    seed: int = 0
    snr_db: float | None = None

    def __post_init__(self):
        if min(self.S, self.n, self.p, self.f) < 1:
            raise ValueError("S, n, p, f must be positive")
        if self.sigma_eps2 < 0 or self.sigma_d2 < 0:
            raise ValueError("variances must be nonnegative")
        if not 0 < self.sparsity <= 1:
            raise ValueError("sparsity must lie in (0, 1]")
        if self.dictionary not in DICTIONARIES:
            raise ValueError(f"unknown dictionary {self.dictionary!r}; choose from {sorted(DICTIONARIES)}")
        d_max = self.d_max if self.d_max is not None else delay_support(self.sigma_d2) - 1
        n_F = self.n_F if self.n_F is not None else self.n + d_max
        if d_max < 0 or n_F < self.n + d_max or self.window_start + self.n > n_F:
            raise ValueError(f"inconsistent shapes: n={self.n}, d_max={d_max}, n_F={n_F}")
        object.__setattr__(self, "d_max", int(d_max))
        object.__setattr__(self, "n_F", int(n_F))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown SyntheticConfig keys: {sorted(unknown)}")
        return cls(**d)


def delay_support(sigma_d2: float) -> int:
    """Number of distinct integer delays the generator draws from."""
    return max(1, math.ceil(math.sqrt(12.0 * sigma_d2 + 1.0) - 1e-12))


# ---------------------------------------------------------------------------
# Factor dictionaries. Every column vanishes (or is constant) on the last
# d_max samples so that shifts up to d_max never wrap into the window.
# ---------------------------------------------------------------------------


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def bump_dictionary(n: int, n_F: int, d_max: int, f: int) -> np.ndarray:
    """Gaussian peak motifs at staggered onsets."""
    t = np.arange(n_F, dtype=float)
    width = max(n / 6.0, 1.0)
    centers = 0.25 * n + 0.35 * n * np.arange(f) / max(f - 1, 1)
    F = np.exp(-0.5 * ((t[:, None] - centers[None, :]) / width) ** 2)
    if d_max:
        F[n_F - d_max:] = 0.0
    return F


def updown_dictionary(n: int, n_F: int, d_max: int, f: int) -> np.ndarray:
    """Alternating smoothed up-regulation and down-regulation motifs."""
    t = np.arange(n_F, dtype=float)
    onsets = 0.25 * n + 0.3 * n * np.arange(f) / max(f - 1, 1)
    steep = 4.0 / max(n / 10.0, 1.0)
    F = np.empty((n_F, f))
    for j, a in enumerate(onsets):
        up = _sigmoid(steep * (t - a))
        up[n:] = 0.0
        F[:, j] = up if j % 2 == 0 else 1.0 - up
    return F


DICTIONARIES = {"bump": bump_dictionary, "sigmoid_updown": updown_dictionary}


@dataclass
class SyntheticDataset:
    data: ObservationSet
    true_factors: np.ndarray
    true_scores: list
    true_delays: np.ndarray
    config: SyntheticConfig
    noiseless: list
    sigma_eps2: float


def generate_synthetic(config: SyntheticConfig) -> SyntheticDataset:
    """Draw delays, a shared sparsity pattern, scores and noise; see SyntheticConfig."""
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    F = DICTIONARIES[cfg.dictionary](cfg.n, cfg.n_F, cfg.d_max, cfg.f)

    # discrete uniform on {0, ..., m-1} has variance (m^2 - 1) / 12 = sigma_d2
    width = math.sqrt(12.0 * cfg.sigma_d2 + 1.0)
    t = rng.uniform(0.0, width, size=(cfg.S, cfg.f))
    delays = np.clip(np.sort(np.floor(t).astype(int), axis=1), 0, cfg.d_max)

    support = rng.random((cfg.f, cfg.p)) < cfg.sparsity
    scores = [np.abs(rng.standard_normal((cfg.f, cfg.p))) * support for _ in range(cfg.S)]

    clean = [predict_subject(F, delays[s], scores[s], cfg.window_start, cfg.n) for s in range(cfg.S)]
    if cfg.snr_db is not None:
        energy = np.mean([(D ** 2).sum() for D in clean])
        sigma2 = energy / (cfg.n * cfg.p * 10.0 ** (cfg.snr_db / 10.0))
    else:
        sigma2 = cfg.sigma_eps2
    noise = rng.standard_normal((cfg.S, cfg.n, cfg.p)) * math.sqrt(sigma2)
    subjects = [clean[s] + noise[s] if sigma2 > 0 else clean[s].copy() for s in range(cfg.S)]
    data = ObservationSet(
        subjects=subjects,
        subject_ids=[f"s{s + 1}" for s in range(cfg.S)],
        time_points=[float(cfg.window_start + k) for k in range(cfg.n)],
    )
    return SyntheticDataset(data, F, scores, delays, cfg, clean, float(sigma2))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def mse(truth: SyntheticDataset, fit) -> float:
    """Mean over subjects of the squared Frobenius error against the noiseless data."""
    cfg = fit.config
    errs = []
    for s, D in enumerate(truth.noiseless):
        D_hat = predict_subject(fit.factors, fit.delays[s], fit.subject_scores(s), cfg.window_start, D.shape[0])
        if D_hat.shape != D.shape:
            raise ValueError(f"shape mismatch {D_hat.shape} vs {D.shape}")
        errs.append(((D - D_hat) ** 2).sum())
    return float(np.mean(errs))


def dtf(F_true, F_hat) -> float:
    """One minus the mean column cosine similarity under the best column matching."""
    F_true = np.asarray(F_true, dtype=float)
    F_hat = np.asarray(F_hat, dtype=float)
    if F_true.shape != F_hat.shape:
        raise ValueError(f"shape mismatch {F_true.shape} vs {F_hat.shape}")
    nt = np.linalg.norm(F_true, axis=0)
    nh = np.linalg.norm(F_hat, axis=0)
    if np.any(nt == 0) or np.any(nh == 0):
        raise ValueError("dtf is undefined for zero columns")
    cos = (F_true / nt).T @ (F_hat / nh)
    f = F_true.shape[1]
    best = max(
        sum(cos[i, perm[i]] for i in range(f)) for perm in itertools.permutations(range(f))
    )
    return float(1.0 - best / f)


def canonical_shifts(delays) -> np.ndarray:
    """Per-factor offsets ``c`` making every factor's smallest delay zero.

    Circularly shifting factor ``j`` later by ``c[j]`` while lowering its
    delays by ``c[j]`` leaves every reconstruction unchanged, so factors are
    only determined up to this shift. Anchoring the earliest subject at zero
    picks one representative per factor, independent of factor labels.
    """
    delays = np.atleast_2d(np.asarray(delays, dtype=int))
    return delays.min(axis=0)


def canonicalize(F, delays):
    """Canonical (factors, delays) representative; see :func:`canonical_shifts`.

    The returned delays need not respect the factor ordering; they are meant
    for comparing fits, not for further optimisation.
    """
    c = canonical_shifts(delays)
    return build_shifted_factors(F, c), np.asarray(delays) - c[None, :]


def _common_frame(F, window_start, offset, length):
    out = np.zeros((length, F.shape[1]))
    out[offset - window_start:offset - window_start + F.shape[0]] = F
    return out


def aligned_dtf(truth: SyntheticDataset, fit) -> float:
    """DTF between the canonical representatives of truth and estimate.

    Both factor matrices are first moved to their canonical shifts (see
    :func:`canonical_shifts`) and then placed on a common time axis, lined
    up by their observation windows and zero-padded, so fits with a
    different ``n_F`` (e.g. an unshifted model with ``n_F = n``) compare
    against the same truth.
    """
    Ft, _ = canonicalize(truth.true_factors, truth.true_delays)
    Fh, _ = canonicalize(fit.factors, fit.delays)
    wt, wh = truth.config.window_start, fit.config.window_start
    offset = max(wt, wh)
    length = max(offset - wt + Ft.shape[0], offset - wh + Fh.shape[0])
    return dtf(_common_frame(Ft, wt, offset, length), _common_frame(Fh, wh, offset, length))


def snr_db(dataset: SyntheticDataset) -> float:
    """10 log10 of mean signal energy over ``n * p * sigma_eps2``; +inf when noiseless."""
    if dataset.sigma_eps2 <= 0:
        return math.inf
    energy = np.mean([(D ** 2).sum() for D in dataset.noiseless])
    n, p = dataset.noiseless[0].shape
    return float(10.0 * math.log10(energy / (n * p * dataset.sigma_eps2)))


def absolute_onset_times(delays, t_I: int, factor: int, n_F: int, window_start: int = 0) -> np.ndarray:
    """Per-subject time of a factor's feature of interest on the observation clock."""
    if not 0 <= t_I < n_F:
        raise ValueError(f"t_I={t_I} outside [0, {n_F})")
    d = np.atleast_2d(np.asarray(delays, dtype=int))[:, factor]
    return ((d + t_I) % n_F - window_start).astype(float)


def with_overrides(config: SyntheticConfig, **kw) -> SyntheticConfig:
    return replace(config, **kw)
