"""Autocorrelation, Bartlett significance bounds and the Ljung-Box Q test."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy import special

from .exceptions import DegenerateSeriesError
from .stationarity import TestOutcome

DIRECT_MAX_LAG = 64


# -- chi-square distribution -------------------------------------------------

def chi2_cdf(x, df):
    x = np.asarray(x, dtype=float)
    return special.gammainc(df / 2.0, np.maximum(x, 0.0) / 2.0)


def chi2_sf(x, df):
    x = np.asarray(x, dtype=float)
    return special.gammaincc(df / 2.0, np.maximum(x, 0.0) / 2.0)


def _chi2_logpdf(x, df):
    k = df / 2.0
    return (k - 1.0) * math.log(x) - x / 2.0 - k * math.log(2.0) - special.gammaln(k)


def chi2_ppf(p: float, df: float, tol: float = 1e-14, max_iter: int = 100) -> float:
    """Quantile of the chi-square distribution.

    Inverts the regularized lower incomplete gamma function by Newton steps,
    falling back to bisection whenever a step leaves the current bracket.
    """
    if not 0.0 < p < 1.0:
        if p == 0.0:
            return 0.0
        if p == 1.0:
            return math.inf
        raise ValueError("p must lie in [0, 1]")
    if not df > 0:
        raise ValueError("df must be positive")
    # Wilson-Hilferty start.
    z = special.ndtri(p)
    h = 2.0 / (9.0 * df)
    x = df * max(1.0 - h + z * math.sqrt(h), 1e-3) ** 3
    lo, hi = 0.0, max(2.0 * x, df + 10.0 * math.sqrt(2.0 * df) + 50.0)
    while float(chi2_cdf(hi, df)) < p:
        lo, hi = hi, 2.0 * hi
    for _ in range(max_iter):
        f = float(chi2_cdf(x, df)) - p
        if f > 0:
            hi = min(hi, x)
        else:
            lo = max(lo, x)
        dens = math.exp(_chi2_logpdf(x, df)) if x > 0 else 0.0
        step = f / dens if dens > 0 else math.inf
        nxt = x - step
        if not (lo < nxt < hi) or not math.isfinite(nxt):
            nxt = 0.5 * (lo + hi)
        if abs(nxt - x) <= tol * max(1.0, x):
            return nxt
        x = nxt
    return x


def normal_ppf(p):
    return float(special.ndtri(p))


# -- autocorrelation ---------------------------------------------------------

@dataclass
class AcfResult:
    """Sample autocorrelation at ``lags`` with the white-noise bound."""

    lags: np.ndarray
    values: np.ndarray
    bartlett_bound: float
    n: int

    @property
    def significant(self):
        return np.abs(self.values) > self.bartlett_bound


def _acf_direct(x, max_lag):
    """Biased ACF along the last axis by direct summation; x is demeaned."""
    denom = np.einsum("...i,...i->...", x, x)
    out = np.empty(x.shape[:-1] + (max_lag + 1,))
    out[..., 0] = 1.0
    for k in range(1, max_lag + 1):
        out[..., k] = np.einsum("...i,...i->...", x[..., k:], x[..., :-k]) / denom
    return out


def _acf_fft(x, max_lag):
    n = x.shape[-1]
    size = sfft.next_fast_len(2 * n - 1, real=True)
    spec = sfft.rfft(x, size, axis=-1)
    acov = sfft.irfft(spec * np.conj(spec), size, axis=-1)[..., : max_lag + 1]
    return acov / acov[..., :1]


def acf_values(x, max_lag, method="auto"):
    """ACF for lags 0..max_lag along the last axis of ``x`` (1-D or 2-D).

    Uses the full-sample mean and the biased (sum over all T) denominator.
    Rows with zero variance give NaN.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    if max_lag < 0 or n <= max_lag:
        raise ValueError(f"series length {n} must exceed max_lag {max_lag}")
    xc = x - x.mean(axis=-1, keepdims=True)
    if method == "auto":
        method = "direct" if max_lag <= DIRECT_MAX_LAG else "fft"
    with np.errstate(invalid="ignore", divide="ignore"):
        out = _acf_direct(xc, max_lag) if method == "direct" else _acf_fft(xc, max_lag)
    flat = np.ptp(x, axis=-1) == 0
    if np.any(flat):
        out[flat] = np.nan
    return out


def bartlett_bound(n: int, alpha: float = 0.05) -> float:
    """Half-width ``z_{1 - alpha/2} / sqrt(n)`` of the white-noise ACF band."""
    if n < 2:
        raise ValueError("n must be at least 2")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return normal_ppf(1.0 - alpha / 2.0) / math.sqrt(n)


def acf(series, max_lag: int = 10, alpha: float = 0.05, method="auto") -> AcfResult:
    """Autocorrelation at lags 0..max_lag of a 1-D series."""
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if len(x) <= max_lag:
        raise ValueError(f"series length {len(x)} must exceed max_lag {max_lag}")
    if np.ptp(x) == 0:
        raise DegenerateSeriesError("ACF undefined for a zero-variance series")
    vals = acf_values(x, max_lag, method)
    return AcfResult(np.arange(max_lag + 1), vals, bartlett_bound(len(x), alpha), len(x))


# -- Ljung-Box -----------------------------------------------------------------

def ljung_box_statistic(x, n_lags):
    """Q = T(T+2) sum_k rho(k)^2 / (T-k), along the last axis."""
    x = np.asarray(x, dtype=float)
    t = x.shape[-1]
    rho = acf_values(x, n_lags)[..., 1:]
    k = np.arange(1, n_lags + 1)
    return t * (t + 2.0) * np.sum(rho ** 2 / (t - k), axis=-1)


def ljung_box(series, n_lags: int = 10, alpha: float = 0.05) -> TestOutcome:
    """Portmanteau test of joint independence over lags 1..n_lags.

    Rejects when Q exceeds the (1 - alpha) chi-square quantile with
    ``n_lags`` degrees of freedom.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if not 1 <= n_lags < len(x):
        raise ValueError("need 1 <= n_lags < series length")
    if np.ptp(x) == 0:
        raise DegenerateSeriesError("Ljung-Box undefined for a zero-variance series")
    q = float(ljung_box_statistic(x, n_lags))
    crit = chi2_ppf(1.0 - alpha, n_lags)
    return TestOutcome(
        statistic=q,
        critical_value=crit,
        alpha=alpha,
        decision="reject" if q > crit else "fail-to-reject",
        test_id="ljung-box",
        lags=n_lags,
        p_value=float(chi2_sf(q, n_lags)),
    )
