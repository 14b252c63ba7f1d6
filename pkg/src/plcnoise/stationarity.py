"""KPSS level-stationarity and ADF unit-root tests, and the chunked
stationarity curve.

Both tests are vectorized over the leading axes so that many chunks (or
Monte Carlo replicates) are tested in one call.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

ALPHAS = (0.10, 0.05, 0.025, 0.01)

# Upper-tail quantiles of the integral of a squared Brownian bridge, i.e.
# the limiting law of the level KPSS statistic. Re-derived by simulation in
# scripts/calibrate_critical_values.py.
KPSS_LEVEL_CRITICAL = {0.10: 0.347, 0.05: 0.463, 0.025: 0.574, 0.01: 0.739}

# Response surfaces crit(T) = b0 + b1/T + b2/T^2 + b3/T^3 for the
# constant-only Dickey-Fuller t statistic. The 1/5/10% rows are the
# published MacKinnon (2010) values; the 2.5% row was fitted by simulation
# (scripts/calibrate_critical_values.py).
ADF_C_SURFACE = {
    0.01: (-3.43035, -6.5393, -16.786, -79.433),
    0.025: (-3.12232, -4.3962, -6.9912, 0.0),
    0.05: (-2.86154, -2.8903, -4.2340, -40.040),
    0.10: (-2.56677, -1.5384, -2.8090, 0.0),
}

DEFAULT_CHUNK_LENGTHS = (30, 60, 120, 300, 600)


@dataclass
class TestOutcome:
    """Result of a hypothesis test.

    ``decision`` is ``"reject"`` or ``"fail-to-reject"`` of the test's own
    null (stationarity for KPSS, unit root for ADF, independence for
    Ljung-Box).
    """

    __test__ = False  # not a pytest class

    statistic: float
    critical_value: float
    alpha: float
    decision: str
    test_id: str
    degenerate: bool = False
    lags: int | None = None
    p_value: float | None = None

    @property
    def rejected(self):
        return self.decision == "reject"


def _check_alpha(alpha):
    for a in ALPHAS:
        if math.isclose(alpha, a):
            return a
    raise ValueError(f"alpha must be one of {ALPHAS}, got {alpha!r}")


def newey_west_lags(n_obs: int) -> int:
    """Short-lag bandwidth floor(4 * (T/100)^(1/4))."""
    return int(math.floor(4.0 * (n_obs / 100.0) ** 0.25))


def kpss_critical_value(alpha=0.05):
    return KPSS_LEVEL_CRITICAL[_check_alpha(alpha)]


def adf_critical_value(alpha=0.05, n_obs=None):
    b = ADF_C_SURFACE[_check_alpha(alpha)]
    if n_obs is None:
        return b[0]
    t = float(n_obs)
    return b[0] + b[1] / t + b[2] / t ** 2 + b[3] / t ** 3


def kpss_statistic(x, bandwidth="auto"):
    """Level KPSS statistic along the last axis.

    Returns ``(statistic, degenerate)`` arrays; degenerate rows (zero
    variance) have statistic 0.
    """
    x = np.asarray(x, dtype=float)
    t = x.shape[-1]
    lags = newey_west_lags(t) if bandwidth == "auto" else int(bandwidth)
    if lags < 0 or lags >= t:
        raise ValueError(f"bandwidth {lags} invalid for series of length {t}")
    e = x - x.mean(axis=-1, keepdims=True)
    s = np.cumsum(e, axis=-1)
    eta = np.einsum("...i,...i->...", s, s) / t ** 2
    lrv = np.einsum("...i,...i->...", e, e) / t
    for k in range(1, lags + 1):
        w = 1.0 - k / (lags + 1.0)
        lrv = lrv + 2.0 * w * np.einsum("...i,...i->...", e[..., k:], e[..., :-k]) / t
    degenerate = (np.ptp(x, axis=-1) == 0) | ~(lrv > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        stat = np.where(degenerate, 0.0, eta / np.where(degenerate, 1.0, lrv))
    return stat, degenerate


def kpss_level(series, bandwidth="auto", alpha=0.05) -> TestOutcome:
    """KPSS test of level stationarity.

    Rejects stationarity when the statistic exceeds the critical value.
    A constant series gives a degenerate, fail-to-reject outcome.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if len(x) < 10:
        raise ValueError("KPSS needs at least 10 observations")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    crit = kpss_critical_value(alpha)
    lags = newey_west_lags(len(x)) if bandwidth == "auto" else int(bandwidth)
    stat, deg = kpss_statistic(x, lags)
    stat, deg = float(stat), bool(deg)
    reject = (stat > crit) and not deg
    return TestOutcome(stat, crit, _check_alpha(alpha),
                       "reject" if reject else "fail-to-reject", "kpss-level",
                       degenerate=deg, lags=lags)


def adf_statistic(x, lag_order):
    """ADF t statistic on the lagged level in the constant-only regression.

    Works along the last axis. Returns ``(tstat, degenerate, n_obs)`` where
    ``n_obs`` is the effective regression sample size.
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    x2 = np.atleast_2d(x).reshape(-1, x.shape[-1])
    p = int(lag_order)
    dy = np.diff(x2, axis=-1)
    n = dy.shape[-1] - p
    cols = [np.ones((x2.shape[0], n)), x2[:, p:-1]]
    cols += [dy[:, p - j:-j] for j in range(1, p + 1)]
    design = np.stack(cols, axis=-1)  # (m, n, k)
    lhs = dy[:, p:]
    k = design.shape[-1]
    xtx = np.einsum("mnk,mnj->mkj", design, design)
    xty = np.einsum("mnk,mn->mk", design, lhs)
    cond = np.linalg.cond(xtx)
    degenerate = (np.ptp(x2, axis=-1) == 0) | ~(cond < 1e12)
    xtx[degenerate] = np.eye(k)
    inv = np.linalg.inv(xtx)
    beta = np.einsum("mkj,mj->mk", inv, xty)
    resid = lhs - np.einsum("mnk,mk->mn", design, beta)
    s2 = np.einsum("mn,mn->m", resid, resid) / (n - k)
    with np.errstate(invalid="ignore", divide="ignore"):
        tstat = beta[:, 1] / np.sqrt(s2 * inv[:, 1, 1])
    tstat = np.where(degenerate | ~np.isfinite(tstat), 0.0, tstat)
    degenerate = degenerate | (s2 <= 0)
    if squeeze:
        return float(tstat[0]), bool(degenerate[0]), n
    return tstat.reshape(x.shape[:-1]), degenerate.reshape(x.shape[:-1]), n


def adf(series, lag_order: int = 1, alpha=0.05) -> TestOutcome:
    """Augmented Dickey-Fuller test with a constant.

    Rejects the unit root when the t statistic falls below the critical
    value for the effective sample size.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if lag_order < 0:
        raise ValueError("lag_order must be non-negative")
    if len(x) < lag_order + 10:
        raise ValueError(f"ADF with {lag_order} lags needs at least {lag_order + 10} observations")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    stat, deg, n = adf_statistic(x, lag_order)
    crit = adf_critical_value(alpha, n)
    reject = (stat < crit) and not deg
    return TestOutcome(stat, crit, _check_alpha(alpha),
                       "reject" if reject else "fail-to-reject", "adf",
                       degenerate=deg, lags=lag_order)


# -- chunked analysis --------------------------------------------------------

@dataclass
class ChunkTally:
    chunk_len: int
    n_chunks: int
    n_stationary: int
    n_degenerate: int

    @property
    def fraction(self):
        return self.n_stationary / self.n_chunks


def chunk_tally(series, chunk_len, alpha=0.05, bandwidth="auto") -> ChunkTally:
    """Run KPSS on consecutive disjoint chunks and count the outcomes.

    Degenerate (constant) chunks count as stationary and are tallied apart.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if not 10 <= chunk_len:
        raise ValueError("chunk_len must be at least 10")
    n_chunks = len(x) // chunk_len
    if n_chunks == 0:
        raise ValueError(f"series of length {len(x)} holds no chunk of {chunk_len}")
    chunks = x[: n_chunks * chunk_len].reshape(n_chunks, chunk_len)
    stat, deg = kpss_statistic(chunks, bandwidth)
    stationary = deg | (stat <= kpss_critical_value(alpha))
    return ChunkTally(int(chunk_len), n_chunks, int(stationary.sum()), int(deg.sum()))


def chunked_stationarity(series, chunk_len, alpha=0.05, bandwidth="auto") -> float:
    """Fraction of disjoint chunks for which KPSS fails to reject stationarity."""
    return chunk_tally(series, chunk_len, alpha, bandwidth).fraction


@dataclass
class StationarityCurve:
    """Stationary-chunk fraction per chunk length, overall and per channel.

    ``per_channel[c][i]`` is the mean over that channel's sub-carriers at
    ``chunk_lengths[i]``; ``fraction_stationary`` averages the channels.
    """

    chunk_lengths: list
    fraction_stationary: np.ndarray
    per_channel: dict = field(default_factory=dict)
    degenerate: dict = field(default_factory=dict)
    alpha: float = 0.05

    def rows(self):
        out = []
        for i, n in enumerate(self.chunk_lengths):
            for ch in sorted(self.per_channel, key=str):
                out.append((n, ch, float(self.per_channel[ch][i]),
                            int(self.degenerate[ch][i])))
        return out


def _curve_for(series_list, lengths, alpha, bandwidth):
    """Mean fraction over the series long enough for each chunk length."""
    fr = np.full(len(lengths), np.nan)
    deg = np.zeros(len(lengths), dtype=int)
    for i, n in enumerate(lengths):
        tallies = [chunk_tally(s, n, alpha, bandwidth) for s in series_list if len(s) >= n]
        if tallies:
            fr[i] = np.mean([t.fraction for t in tallies])
            deg[i] = sum(t.n_degenerate for t in tallies)
    return fr, deg


def stationarity_curve(series, lengths=DEFAULT_CHUNK_LENGTHS, alpha=0.05,
                       bandwidth="auto", n_jobs=1) -> StationarityCurve:
    """Stationary-chunk fraction as a function of chunk length.

    ``series`` is either one 1-D series or a mapping ``channel -> series``
    or ``channel -> list of series`` (sub-carriers averaged per channel).
    """
    lengths = [int(n) for n in lengths]
    if not lengths:
        raise ValueError("need at least one chunk length")
    if isinstance(series, dict):
        groups = {ch: (v if isinstance(v, (list, tuple)) else [v]) for ch, v in series.items()}
    else:
        groups = {"all": [series]}
    if not groups or any(len(v) == 0 for v in groups.values()):
        raise ValueError("every channel needs at least one series")
    keys = list(groups)

    def work(ch):
        return _curve_for(groups[ch], lengths, alpha, bandwidth)

    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as ex:
            results = list(ex.map(work, keys))
    else:
        results = [work(ch) for ch in keys]
    per_channel = {ch: r[0] for ch, r in zip(keys, results)}
    degenerate = {ch: r[1] for ch, r in zip(keys, results)}
    stacked = np.array([per_channel[ch] for ch in keys])
    with np.errstate(invalid="ignore"):
        counts = np.sum(~np.isnan(stacked), axis=0)
        overall = np.where(counts > 0, np.nansum(stacked, axis=0) / np.maximum(counts, 1), np.nan)
    return StationarityCurve(lengths, overall, per_channel, degenerate, alpha)


