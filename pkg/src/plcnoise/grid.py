"""Domain types: noise samples, the PRIME-band frequency grid and the
level quantization policy."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

DEFAULT_COUNT = 776
DEFAULT_START_HZ = 41_992.0
DEFAULT_STOP_HZ = 471_680.0
DEFAULT_N_CHANNELS = 8
DEFAULT_LEVEL_RANGE = (-20.0, 120.0)
DEFAULT_BIN_WIDTH = 0.1

# Values within this fraction of a bin below an edge are counted in the upper
# bin, so decimal levels such as 68.0 are not pushed down by float rounding.
_EDGE_TOL = 1e-7


class NoiseSample(NamedTuple):
    """One measurement: seconds since trace epoch, grid index, level in dBuV."""

    timestamp: float
    freq_index: int
    level: float


def default_channel_bounds(count=DEFAULT_COUNT, start_hz=DEFAULT_START_HZ,
                           stop_hz=DEFAULT_STOP_HZ, n_channels=DEFAULT_N_CHANNELS):
    """Split the grid into ``n_channels`` contiguous channels of equal size.

    Edges sit half a step between neighbouring grid points; the outer edges
    extend half a step beyond the first and last frequency.
    """
    if count < n_channels:
        raise ValueError("grid has fewer frequencies than channels")
    step = (stop_hz - start_hz) / (count - 1) if count > 1 else 1.0
    cuts = [round(k * count / n_channels) for k in range(n_channels + 1)]
    edges = [start_hz + (c - 0.5) * step for c in cuts]
    return tuple((edges[k], edges[k + 1]) for k in range(n_channels))


@dataclass(frozen=True)
class FrequencyGrid:
    """Linearly spaced sub-carrier grid with its channel plan.

    Parameters
    ----------
    count : int
        Number of frequencies.
    start_hz, stop_hz : float
        First and last grid frequency; both are reproduced exactly.
    channel_bounds : tuple of (low_hz, high_hz)
        Half-open channel intervals, ordered and contiguous. When omitted the
        grid is split into eight equal channels.
    """

    count: int = DEFAULT_COUNT
    start_hz: float = DEFAULT_START_HZ
    stop_hz: float = DEFAULT_STOP_HZ
    channel_bounds: tuple = field(default=None)

    def __post_init__(self):
        if int(self.count) != self.count or self.count < 1:
            raise ValueError(f"count must be a positive integer, got {self.count!r}")
        if self.count > 1 and not self.stop_hz > self.start_hz:
            raise ValueError("stop_hz must exceed start_hz")
        if self.channel_bounds is None:
            n_ch = min(DEFAULT_N_CHANNELS, self.count)
            bounds = default_channel_bounds(self.count, self.start_hz,
                                            self.stop_hz, n_ch)
        else:
            bounds = tuple((float(lo), float(hi)) for lo, hi in self.channel_bounds)
        object.__setattr__(self, "channel_bounds", bounds)
        for lo, hi in bounds:
            if not hi > lo:
                raise ValueError(f"empty channel interval ({lo}, {hi})")
        for (_, hi), (lo, _) in zip(bounds[:-1], bounds[1:]):
            if lo != hi:
                raise ValueError("channel intervals must be contiguous")
        f = self.frequencies
        if f[0] < bounds[0][0] or f[-1] >= bounds[-1][1]:
            raise ValueError("channel plan does not cover the grid")

    @property
    def step_hz(self):
        return (self.stop_hz - self.start_hz) / (self.count - 1) if self.count > 1 else 0.0

    @property
    def frequencies(self):
        if self.count == 1:
            return np.array([float(self.start_hz)])
        return np.linspace(self.start_hz, self.stop_hz, self.count)

    @property
    def n_channels(self):
        return len(self.channel_bounds)

    def hz(self, freq_index):
        return float(self.frequencies[_check_index(self, freq_index)])

    def channel_edges(self):
        return np.array([lo for lo, _ in self.channel_bounds] + [self.channel_bounds[-1][1]])

    def channel_map(self):
        """Channel number (1-based) for every grid index."""
        return np.searchsorted(self.channel_edges(), self.frequencies, side="right")

    def channel_indices(self, channel):
        return np.flatnonzero(self.channel_map() == channel)


def _check_index(grid, freq_index):
    if isinstance(freq_index, bool) or int(freq_index) != freq_index:
        raise ValueError(f"frequency index must be an integer, got {freq_index!r}")
    i = int(freq_index)
    if not 0 <= i < grid.count:
        raise ValueError(f"frequency index {i} outside [0, {grid.count - 1}]")
    return i


def channel_of_hz(grid: FrequencyGrid, hz: float) -> int:
    """Channel (1-based) whose [low, high) interval contains ``hz``."""
    edges = grid.channel_edges()
    if not (edges[0] <= hz < edges[-1]):
        raise ValueError(f"{hz} Hz lies outside the channel plan")
    return int(np.searchsorted(edges, hz, side="right"))


def channel_of(grid: FrequencyGrid, freq_index: int) -> int:
    """Channel (1-based) of a grid index."""
    return channel_of_hz(grid, grid.hz(freq_index))


@dataclass(frozen=True)
class QuantizationPolicy:
    """Fixed-width level bins over a bounded dBuV range.

    Bin ``b`` covers ``[min + b*w, min + (b+1)*w)``; the range maximum is
    folded into the last bin.
    """

    bin_width: float = DEFAULT_BIN_WIDTH
    range: tuple = DEFAULT_LEVEL_RANGE

    def __post_init__(self):
        lo, hi = (float(v) for v in self.range)
        object.__setattr__(self, "range", (lo, hi))
        if not self.bin_width > 0 or not math.isfinite(self.bin_width):
            raise ValueError("bin_width must be positive")
        if not hi > lo:
            raise ValueError("range max must exceed range min")
        n = (hi - lo) / self.bin_width
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError(f"range width {hi - lo} is not a whole number of bins")

    @property
    def min(self):
        return self.range[0]

    @property
    def max(self):
        return self.range[1]

    @property
    def n_bins(self):
        return int(round((self.max - self.min) / self.bin_width))

    def contains(self, level):
        level = np.asarray(level, dtype=float)
        return np.isfinite(level) & (level >= self.min) & (level <= self.max)

    def quantize(self, level):
        """Bin index of ``level`` (scalar or array)."""
        arr = np.asarray(level, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ValueError("level must be finite")
        if np.any((arr < self.min) | (arr > self.max)):
            raise ValueError(f"level outside representable range {self.range}")
        b = np.floor((arr - self.min) / self.bin_width + _EDGE_TOL).astype(np.int64)
        b = np.minimum(b, self.n_bins - 1)
        return int(b) if b.ndim == 0 else b

    def dequantize(self, bin_index):
        """Center of bin ``bin_index``."""
        b = np.asarray(bin_index)
        if np.any((b < 0) | (b >= self.n_bins)):
            raise ValueError("bin index out of range")
        out = self.min + (b + 0.5) * self.bin_width
        return float(out) if out.ndim == 0 else out

    def centers(self):
        return self.min + (np.arange(self.n_bins) + 0.5) * self.bin_width

    def snap(self, level):
        """Round to the nearest lattice point ``min + k*w`` (bin lower edge)."""
        arr = np.asarray(level, dtype=float)
        k = np.round((arr - self.min) / self.bin_width)
        out = self.min + k * self.bin_width
        return float(out) if out.ndim == 0 else out


def validate_sample(sample: NoiseSample, grid: FrequencyGrid,
                    policy: QuantizationPolicy) -> NoiseSample:
    t, f, level = sample
    if not (math.isfinite(t) and t >= 0):
        raise ValueError(f"timestamp must be finite and non-negative, got {t!r}")
    _check_index(grid, f)
    if not policy.contains(level):
        raise ValueError(f"level {level!r} outside representable range {policy.range}")
    return sample


@dataclass(frozen=True)
class Region:
    """Contiguous frequency band with similar noise level."""

    id: str
    low_hz: float
    high_hz: float
    median_level: float
    spread_q90_q10: float
    n_frequencies: int = 0
