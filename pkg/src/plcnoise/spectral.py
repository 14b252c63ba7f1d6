"""Streaming per-frequency level statistics.

The accumulator keeps an exact histogram per frequency, so quantiles are
exact at the quantization resolution and two accumulators merge without
loss. Means and variances use Welford/Chan updates alongside a compensated
running sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import FrequencyGrid, NoiseSample, QuantizationPolicy, Region

SUMMARY_QUANTILES = (0.10, 0.50, 0.90)
DEFAULT_REGION_BOUNDARIES_HZ = (95_000.0, 200_000.0, 300_000.0)


def _lower_quantile_bins(hist, counts, p):
    """Bin index of the smallest value whose empirical CDF reaches ``p``.

    ``hist`` is (n_freq, n_bins); rows with zero count give -1.
    """
    cum = np.cumsum(hist, axis=1)
    need = np.maximum(np.ceil(p * counts - 1e-9 * counts), 1)
    idx = (cum < need[:, None]).sum(axis=1)
    return np.where(counts > 0, idx, -1)


class SpectralAccumulator:
    """Mergeable per-frequency histogram and moment accumulator.

    Parameters
    ----------
    n_frequencies : int
    policy : QuantizationPolicy
    """

    def __init__(self, n_frequencies: int, policy: QuantizationPolicy | None = None):
        self.policy = policy if policy is not None else QuantizationPolicy()
        self.n_frequencies = int(n_frequencies)
        nf, nb = self.n_frequencies, self.policy.n_bins
        self.hist = np.zeros((nf, nb), dtype=np.int64)
        self.count = np.zeros(nf, dtype=np.int64)
        self.min = np.full(nf, np.inf)
        self.max = np.full(nf, -np.inf)
        self.mean = np.zeros(nf)
        self.m2 = np.zeros(nf)
        self._sum = np.zeros(nf)
        self._comp = np.zeros(nf)

    @classmethod
    def for_grid(cls, grid: FrequencyGrid, policy=None):
        return cls(grid.count, policy)

    @property
    def total_count(self):
        return int(self.count.sum())

    @property
    def compensated_sum(self):
        return self._sum + self._comp

    def _add_sums(self, s):
        # Neumaier compensated addition, elementwise.
        t = self._sum + s
        big = np.abs(self._sum) >= np.abs(s)
        self._comp += np.where(big, (self._sum - t) + s, (s - t) + self._sum)
        self._sum = t

    def add(self, sample: NoiseSample):
        """Fold in one sample in O(1)."""
        _, f, x = sample
        b = self.policy.quantize(x)
        self.hist[f, b] += 1
        n = self.count[f] + 1
        self.count[f] = n
        if x < self.min[f]:
            self.min[f] = x
        if x > self.max[f]:
            self.max[f] = x
        delta = x - self.mean[f]
        self.mean[f] += delta / n
        self.m2[f] += delta * (x - self.mean[f])
        s, c = self._sum[f], x
        t = s + c
        self._comp[f] += ((s - t) + c) if abs(s) >= abs(c) else ((c - t) + s)
        self._sum[f] = t

    def add_batch(self, freq_index, levels):
        """Vectorized fold of many samples."""
        f = np.asarray(freq_index, dtype=np.int64)
        x = np.asarray(levels, dtype=float)
        if len(x) == 0:
            return self
        if f.min() < 0 or f.max() >= self.n_frequencies:
            raise ValueError("frequency index out of range")
        nf, nb = self.n_frequencies, self.policy.n_bins
        b = self.policy.quantize(x)
        self.hist += np.bincount(f * nb + b, minlength=nf * nb).reshape(nf, nb)
        n_b = np.bincount(f, minlength=nf)
        s_b = np.bincount(f, weights=x, minlength=nf)
        mean_b = np.divide(s_b, n_b, out=np.zeros(nf), where=n_b > 0)
        m2_b = np.bincount(f, weights=(x - mean_b[f]) ** 2, minlength=nf)
        mn = np.full(nf, np.inf)
        mx = np.full(nf, -np.inf)
        np.minimum.at(mn, f, x)
        np.maximum.at(mx, f, x)
        self._merge_moments(n_b, mean_b, m2_b, mn, mx)
        self._add_sums(s_b)
        return self

    def _merge_moments(self, n_b, mean_b, m2_b, mn, mx):
        n_a = self.count
        n = n_a + n_b
        safe = np.where(n > 0, n, 1)
        delta = mean_b - self.mean
        self.mean = np.where(n > 0, self.mean + delta * n_b / safe, 0.0)
        self.m2 = self.m2 + m2_b + delta ** 2 * n_a * n_b / safe
        self.count = n
        self.min = np.minimum(self.min, mn)
        self.max = np.maximum(self.max, mx)

    def merge(self, other: "SpectralAccumulator") -> "SpectralAccumulator":
        """Fold ``other`` into ``self`` (in place) and return ``self``."""
        if other.n_frequencies != self.n_frequencies or other.policy != self.policy:
            raise ValueError("accumulators have different layouts")
        self.hist += other.hist
        self._merge_moments(other.count, other.mean, other.m2, other.min, other.max)
        self._add_sums(other._sum)
        self._add_sums(other._comp)
        return self

    def copy(self):
        new = SpectralAccumulator(self.n_frequencies, self.policy)
        for name in ("hist", "count", "min", "max", "mean", "m2", "_sum", "_comp"):
            setattr(new, name, getattr(self, name).copy())
        return new

    def variance(self):
        """Sample variance (n-1 divisor); NaN where count < 2."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.count > 1, self.m2 / (self.count - 1), np.nan)

    def quantile_bins(self, p):
        return _lower_quantile_bins(self.hist, self.count, p)

    def quantile(self, p):
        """Per-frequency lower quantile at bin centers, clipped to [min, max]."""
        bins = self.quantile_bins(p)
        centers = self.policy.centers()
        val = np.where(bins >= 0, centers[np.maximum(bins, 0)], np.nan)
        return np.clip(val, self.min, self.max)


def accumulate(acc: SpectralAccumulator, sample: NoiseSample) -> None:
    acc.add(sample)


@dataclass
class FrequencySummary:
    """Per-frequency min/q10/q50/q90/max (NaN where ``missing``)."""

    hz: np.ndarray
    min: np.ndarray
    q10: np.ndarray
    q50: np.ndarray
    q90: np.ndarray
    max: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    count: np.ndarray

    @property
    def missing(self):
        return self.count == 0

    COLUMNS = ("hz", "min", "q10", "q50", "q90", "max", "mean", "var", "count")

    def rows(self):
        cols = [getattr(self, c) for c in self.COLUMNS]
        return [tuple(c[i] for c in cols) for i in range(len(self.hz))]


def frequency_summary(acc: SpectralAccumulator, grid: FrequencyGrid | None = None):
    """Quantile spectrum from histogram counts (lower interpolation)."""
    if grid is not None and grid.count != acc.n_frequencies:
        raise ValueError("grid size does not match accumulator")
    hz = grid.frequencies if grid is not None else np.arange(acc.n_frequencies, dtype=float)
    empty = acc.count == 0
    q10, q50, q90 = (acc.quantile(p) for p in SUMMARY_QUANTILES)
    return FrequencySummary(
        hz=hz,
        min=np.where(empty, np.nan, acc.min),
        q10=q10, q50=q50, q90=q90,
        max=np.where(empty, np.nan, acc.max),
        mean=np.where(empty, np.nan, acc.mean),
        var=acc.variance(),
        count=acc.count.copy(),
    )


def segment_regions(summary: FrequencySummary,
                    boundaries=DEFAULT_REGION_BOUNDARIES_HZ) -> list[Region]:
    """Split the spectrum at ``boundaries`` (Hz) into regions R1, R2, ...

    Each region reports the median of its per-frequency medians and the mean
    q90 - q10 spread, ignoring missing frequencies.
    """
    hz = np.asarray(summary.hz, dtype=float)
    b = sorted(float(x) for x in boundaries)
    for x in b:
        if not hz[0] < x <= hz[-1]:
            raise ValueError(f"region boundary {x} Hz outside grid span "
                             f"({hz[0]}, {hz[-1]}]")
    edges = [hz[0]] + b + [hz[-1]]
    labels = np.searchsorted(np.array(b), hz, side="right")
    regions = []
    for k in range(len(b) + 1):
        sel = (labels == k) & ~summary.missing
        n = int((labels == k).sum())
        med = float(np.median(summary.q50[sel])) if sel.any() else float("nan")
        spread = float(np.mean(summary.q90[sel] - summary.q10[sel])) if sel.any() else float("nan")
        regions.append(Region(f"R{k + 1}", float(edges[k]), float(edges[k + 1]),
                              med, spread, n))
    return regions


@dataclass
class GlobalDistribution:
    """Pooled level distribution over all frequencies."""

    centers: np.ndarray
    pdf: np.ndarray
    cdf: np.ndarray
    counts: np.ndarray

    def quantile_bin(self, p):
        total = self.counts.sum()
        cum = np.cumsum(self.counts)
        return int((cum < max(np.ceil(p * total - 1e-9 * total), 1)).sum())

    def quantile(self, p):
        return float(self.centers[self.quantile_bin(p)])

    def modes(self, k=3, min_separation=5.0):
        """Up to ``k`` local maxima of the PDF, at least ``min_separation`` apart."""
        order = np.argsort(-self.pdf, kind="stable")
        picked = []
        for i in order:
            if self.pdf[i] <= 0 or len(picked) == k:
                break
            if all(abs(self.centers[i] - self.centers[j]) >= min_separation for j in picked):
                picked.append(i)
        return sorted(float(self.centers[i]) for i in picked)


def global_distribution(acc: SpectralAccumulator) -> GlobalDistribution:
    counts = acc.hist.sum(axis=0)
    total = counts.sum()
    if total == 0:
        raise ValueError("accumulator is empty")
    pdf = counts / total
    cdf = np.cumsum(counts) / total
    return GlobalDistribution(acc.policy.centers(), pdf, cdf, counts)


@dataclass
class MovingStats:
    """Sliding-window moments; entry ``i`` covers ``series[i:i + window]``."""

    window: int
    mean: np.ndarray
    std: np.ndarray
    var: np.ndarray


_RECENTER_BLOCK = 1 << 20


def moving_stats(series, window: int = 3600) -> MovingStats:
    """Step-1 sliding mean, standard deviation and sample variance.

    Window sums come from cumulative sums that are re-centred on a local
    mean every 2**20 positions to avoid cancellation on long series.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if window < 2:
        raise ValueError("window must be at least 2")
    if window > len(x):
        raise ValueError(f"window {window} exceeds series length {len(x)}")
    n_out = len(x) - window + 1
    mean = np.empty(n_out)
    var = np.empty(n_out)
    for start in range(0, n_out, _RECENTER_BLOCK):
        stop = min(start + _RECENTER_BLOCK, n_out)
        seg = x[start:stop + window - 1]
        c = seg.mean()
        y = seg - c
        s1 = np.concatenate(([0.0], np.cumsum(y)))
        s2 = np.concatenate(([0.0], np.cumsum(y * y)))
        w1 = s1[window:] - s1[:-window]
        w2 = s2[window:] - s2[:-window]
        mean[start:stop] = c + w1 / window
        var[start:stop] = (w2 - w1 * w1 / window) / (window - 1)
    np.maximum(var, 0.0, out=var)
    return MovingStats(window, mean, np.sqrt(var), var)
