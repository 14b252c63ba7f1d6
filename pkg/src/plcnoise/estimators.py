"""Estimator-style wrappers (fit / transform / score / sample) around the
functional API, plus the input validation they share.

The wrappers hold only hyper-parameters in ``__init__`` and learned state in
trailing-underscore attributes, so ``get_params`` / ``set_params`` / ``clone``
behave as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, DensityMixin, TransformerMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_is_fitted

from .grid import DEFAULT_BIN_WIDTH, DEFAULT_COUNT, DEFAULT_LEVEL_RANGE, QuantizationPolicy
from .modelfit import FAMILIES, TLocationScale, best_fit, fit_t_location_scale
from .spectral import SpectralAccumulator
from .synthesis import DEFAULT_HALF_BAND, NoiseModel, sample_t_location_scale, synthesize


# -- validation helpers ----------------------------------------------------------

def check_series(x, min_length=1, name="series", allow_2d_column=True):
    """1-D finite float array of at least ``min_length`` samples.

    A single-column 2-D array is accepted and flattened.
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 2 and allow_2d_column and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if len(arr) < min_length:
        raise ValueError(f"{name} needs at least {min_length} samples, got {len(arr)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_samples(X, n_frequencies):
    """``(freq_index, level)`` pairs from an ``(n, 2)`` array or a structured
    sample array."""
    if isinstance(X, np.ndarray) and X.dtype.names:
        f, v = np.asarray(X["freq_index"]), np.asarray(X["level"], dtype=float)
    else:
        arr = np.asarray(X, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError("X must have shape (n_samples, 2): freq_index, level")
        f, v = arr[:, 0], arr[:, 1]
        if np.any(f != np.round(f)):
            raise ValueError("freq_index column must hold integers")
    f = f.astype(np.int64)
    if np.any((f < 0) | (f >= n_frequencies)):
        raise ValueError(f"freq_index outside [0, {n_frequencies - 1}]")
    if not np.all(np.isfinite(v)):
        raise ValueError("levels must be finite")
    return f, v


# -- estimators ------------------------------------------------------------------

class SpectralSummarizer(TransformerMixin, BaseEstimator, auto_wrap_output_keys=None):
    """Streaming per-frequency quantile spectrum.

    ``transform`` returns an ``(n_frequencies, 5)`` array of
    min, q10, q50, q90 and max (NaN for frequencies without data).
    """

    def __init__(self, n_frequencies=DEFAULT_COUNT, bin_width=DEFAULT_BIN_WIDTH,
                 level_range=DEFAULT_LEVEL_RANGE):
        self.n_frequencies = n_frequencies
        self.bin_width = bin_width
        self.level_range = level_range

    def fit(self, X, y=None):
        self.accumulator_ = SpectralAccumulator(
            self.n_frequencies, QuantizationPolicy(self.bin_width, tuple(self.level_range)))
        return self.partial_fit(X)

    def partial_fit(self, X, y=None):
        if not hasattr(self, "accumulator_"):
            return self.fit(X)
        f, v = check_samples(X, self.n_frequencies)
        self.accumulator_.add_batch(f, v)
        return self

    def transform(self, X=None):
        check_is_fitted(self, "accumulator_")
        acc = self.accumulator_
        empty = acc.count == 0
        cols = [np.where(empty, np.nan, acc.min)]
        cols += [acc.quantile(p) for p in (0.10, 0.50, 0.90)]
        cols.append(np.where(empty, np.nan, acc.max))
        return np.column_stack(cols)

    def get_feature_names_out(self, input_features=None):
        return np.array(["min", "q10", "q50", "q90", "max"], dtype=object)


class TLocationScaleFitter(DensityMixin, BaseEstimator):
    """Maximum-likelihood t location-scale density."""

    def fit(self, X, y=None):
        x = check_series(X, 100, "X")
        self.model_ = fit_t_location_scale(x)
        self.mu_, self.sigma_, self.nu_ = self.model_.mu, self.model_.sigma, self.model_.nu
        self.loglik_ = self.model_.loglik
        return self

    def score_samples(self, X):
        check_is_fitted(self, "model_")
        return self.model_.logpdf(check_series(X, 1, "X"))

    def score(self, X, y=None):
        return float(np.sum(self.score_samples(X)))

    def sample(self, n_samples=1, random_state=None):
        check_is_fitted(self, "model_")
        rng = np.random.default_rng(check_random_state(random_state).randint(2 ** 31))
        return sample_t_location_scale(self.mu_, self.sigma_, self.nu_, rng, n_samples)


class StepDistributionSelector(BaseEstimator):
    """Fits every candidate family to the level steps and keeps the best.

    With ``difference=True`` the input is a level series and its first
    differences are fitted; otherwise the input already is the step series.
    """

    def __init__(self, candidates=FAMILIES, difference=True, tie_tolerance=1e-3):
        self.candidates = candidates
        self.difference = difference
        self.tie_tolerance = tie_tolerance

    def fit(self, X, y=None):
        x = check_series(X, 2 if self.difference else 100, "X")
        d = np.diff(x) if self.difference else x
        self.selection_ = best_fit(d, tuple(self.candidates), tie_tolerance=self.tie_tolerance)
        self.winner_ = self.selection_.winner
        self.logliks_ = {c.family: c.loglik for c in self.selection_.candidates}
        return self

    def predict(self, X=None):
        check_is_fitted(self, "selection_")
        return self.winner_


class NoiseSynthesizer(BaseEstimator):
    """Learns a step model from a level series and generates new series.

    The anchor is the median level of the fitted series and the reflective
    band is ``anchor +/- half_band`` clipped to the quantization range.
    """

    def __init__(self, kappa=0.01, half_band=DEFAULT_HALF_BAND, bin_width=DEFAULT_BIN_WIDTH,
                 level_range=DEFAULT_LEVEL_RANGE, seed=0):
        self.kappa = kappa
        self.half_band = half_band
        self.bin_width = bin_width
        self.level_range = level_range
        self.seed = seed

    def fit(self, X, y=None):
        x = check_series(X, 101, "X")
        step = fit_t_location_scale(np.diff(x))
        policy = QuantizationPolicy(self.bin_width, tuple(self.level_range))
        anchor = float(policy.snap(np.median(x)))
        band = (max(policy.min, anchor - self.half_band), min(policy.max, anchor + self.half_band))
        self.model_ = NoiseModel(step, anchor, band, self.kappa, policy, self.seed)
        return self

    @classmethod
    def from_model(cls, model: NoiseModel):
        est = cls(model.kappa, bin_width=model.quantization.bin_width,
                  level_range=model.quantization.range, seed=model.seed)
        est.model_ = model
        return est

    def generate(self, length, freq_index=0):
        check_is_fitted(self, "model_")
        return synthesize(self.model_, length, freq_index)

    def step_model(self) -> TLocationScale:
        check_is_fitted(self, "model_")
        return self.model_.step_dist
