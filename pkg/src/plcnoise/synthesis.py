"""Synthetic noise traces from a fitted step distribution.

The level performs a quantized random walk driven by t location-scale
steps. A weak pull towards a per-frequency anchor and reflection at the
band edges keep it bounded; neither is part of the fitted model, both are
stored in the model file so that ``kappa = 0`` with a wide band gives the
pure walk back.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .grid import FrequencyGrid, QuantizationPolicy
from .ingest import SAMPLE_DTYPE
from .modelfit import TLocationScale, difference, fit_t_location_scale
from .spectral import DEFAULT_REGION_BOUNDARIES_HZ

PUBLISHED_STEP = TLocationScale(mu=1.8e-3, sigma=3.47, nu=2.87)
PUBLISHED_REGION_ANCHORS = (68.0, 40.0, 30.0, 23.0)
DEFAULT_HALF_BAND = 35.0
DEFAULT_KAPPA = 0.01
SCHEMA_KEYS = ("family", "mu", "sigma", "nu", "loglik", "n", "quantization",
               "anchor", "band", "kappa", "seed")


def sample_t_location_scale(mu, sigma, nu, rng, size=None):
    """Draw ``mu + sigma * Z / sqrt(V / nu)``, Z ~ N(0, 1), V ~ chi2(nu).

    Exact for any real ``nu > 0``. ``sigma = 0`` returns ``mu``.
    """
    if not sigma >= 0 or not nu > 0:
        raise ValueError("need sigma >= 0 and nu > 0")
    if sigma == 0:
        return float(mu) if size is None else np.full(size, float(mu))
    z = rng.standard_normal(size)
    v = rng.chisquare(nu, size)
    return mu + sigma * z / np.sqrt(v / nu)


@dataclass
class NoiseModel:
    """Step distribution plus the bounding scheme used for synthesis.

    ``anchor`` is a scalar or one value per frequency index; ``band`` is a
    ``(low, high)`` pair or an array of shape ``(n_frequencies, 2)``.
    """

    step_dist: TLocationScale = PUBLISHED_STEP
    anchor: object = 40.0
    band: object = None
    kappa: float = DEFAULT_KAPPA
    quantization: QuantizationPolicy = field(default_factory=QuantizationPolicy)
    seed: int = 0

    def __post_init__(self):
        self.anchor = np.asarray(self.anchor, dtype=float)
        if self.band is None:
            self.band = np.stack([self.anchor - DEFAULT_HALF_BAND,
                                  self.anchor + DEFAULT_HALF_BAND], axis=-1)
        self.band = np.asarray(self.band, dtype=float)
        if self.band.shape[-1] != 2:
            raise ValueError("band must be (low, high) pairs")
        if not 0 <= self.kappa < 1:
            raise ValueError("kappa must lie in [0, 1)")
        lo, hi = self.band[..., 0], self.band[..., 1]
        if np.any(lo >= hi):
            raise ValueError("band low must be below high")
        if np.any((self.anchor < lo) | (self.anchor > hi)):
            raise ValueError("anchor must lie within band")
        q = self.quantization
        if np.any(lo < q.min) or np.any(hi > q.max):
            raise ValueError("band exceeds the quantization range")

    def anchor_for(self, freq_index):
        a = self.anchor
        return float(a) if a.ndim == 0 else float(a[freq_index])

    def band_for(self, freq_index):
        b = self.band
        row = b if b.ndim == 1 else b[freq_index]
        return float(row[0]), float(row[1])

    def to_dict(self):
        s = self.step_dist
        return {
            "family": "t-location-scale",
            "mu": s.mu, "sigma": s.sigma, "nu": s.nu,
            "loglik": None if math.isnan(s.loglik) else s.loglik,
            "n": s.n,
            "quantization": {"bin_width": self.quantization.bin_width,
                             "range": list(self.quantization.range)},
            "anchor": self.anchor.tolist(),
            "band": self.band.tolist(),
            "kappa": self.kappa,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        missing = [k for k in SCHEMA_KEYS if k not in d]
        if missing:
            raise ValueError(f"model file lacks keys {missing}")
        if d["family"] != "t-location-scale":
            raise ValueError(f"unsupported family {d['family']!r}")
        loglik = float("nan") if d["loglik"] is None else float(d["loglik"])
        step = TLocationScale(float(d["mu"]), float(d["sigma"]), float(d["nu"]),
                              loglik, int(d["n"]))
        q = d["quantization"]
        return cls(step, d["anchor"], d["band"], float(d["kappa"]),
                   QuantizationPolicy(float(q["bin_width"]), tuple(q["range"])),
                   int(d["seed"]))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def region_anchors(grid: FrequencyGrid, boundaries=DEFAULT_REGION_BOUNDARIES_HZ,
                   levels=PUBLISHED_REGION_ANCHORS):
    """Per-frequency anchors: one level per region split at ``boundaries``."""
    if len(levels) != len(boundaries) + 1:
        raise ValueError("need one level per region")
    labels = np.searchsorted(np.sort(np.asarray(boundaries, float)), grid.frequencies,
                             side="right")
    return np.asarray(levels, dtype=float)[labels]


def published_model(grid: FrequencyGrid | None = None, seed=0, kappa=DEFAULT_KAPPA):
    """Model with the published step fit and region-median anchors."""
    grid = grid or FrequencyGrid()
    return NoiseModel(PUBLISHED_STEP, region_anchors(grid), None, kappa, QuantizationPolicy(), seed)


@numba.njit(cache=True)
def _walk(steps, anchor, lo, hi, kappa, qmin, width):
    n = steps.shape[0] + 1
    out = np.empty(n)
    span = hi - lo
    x = anchor
    out[0] = x
    for t in range(1, n):
        y = x + kappa * (anchor - x) + steps[t - 1]
        m = (y - lo) % (2.0 * span)
        if m > span:
            m = 2.0 * span - m
        y = lo + m
        x = qmin + np.round((y - qmin) / width) * width
        if x < lo:
            x += width
        elif x > hi:
            x -= width
        out[t] = x
    return out


def _rng_for(seed, freq_index):
    return np.random.default_rng([int(seed), int(freq_index)])


def synthesize(model: NoiseModel, length: int, freq_index: int = 0):
    """One regular series of ``length`` samples for ``freq_index``.

    ``n(1)`` is the snapped anchor; afterwards
    ``n(t) = reflect(n(t-1) + kappa * (anchor - n(t-1)) + d_t)`` snapped to
    the quantization lattice. Deterministic in ``(seed, freq_index, length)``.
    """
    if length < 1:
        raise ValueError("length must be at least 1")
    s = model.step_dist
    rng = _rng_for(model.seed, freq_index)
    steps = np.asarray(sample_t_location_scale(s.mu, s.sigma, s.nu, rng, length - 1),
                       dtype=float)
    q = model.quantization
    lo, hi = model.band_for(freq_index)
    anchor = float(q.snap(model.anchor_for(freq_index)))
    return _walk(steps, anchor, lo, hi, float(model.kappa), q.min, q.bin_width)


def synthesize_samples(model: NoiseModel, length: int, freq_indices, period=1.0):
    """Interleaved multi-frequency trace as a structured sample array.

    Each frequency gets ``length`` samples at ``t = k * period``; records are
    ordered by time, then frequency.
    """
    freq_indices = [int(f) for f in freq_indices]
    out = np.empty(length * len(freq_indices), dtype=SAMPLE_DTYPE)
    nf = len(freq_indices)
    out["timestamp"] = np.repeat(np.arange(length) * float(period), nf)
    for j, f in enumerate(freq_indices):
        out["freq_index"][j::nf] = f
        out["level"][j::nf] = synthesize(model, length, f)
    return out


# -- round-trip validation -----------------------------------------------------

@dataclass
class Check:
    name: str
    value: float
    target: str
    passed: bool
    degenerate: bool = False


@dataclass
class RoundtripReport:
    checks: list

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def get(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {"passed": self.passed,
                "checks": [c.__dict__.copy() for c in self.checks]}


def validate_roundtrip(series, model: NoiseModel, alpha=0.05, freq_index=0,
                       chunk_len=30, n_lags=10, sigma_tol=0.05, nu_tol=0.10,
                       mu_tol=0.05, min_stationary=0.9):
    """Compare a series against what ``model`` implies.

    Checks: level stays in band; refitted sigma, nu and mu of the steps;
    chunked KPSS stationarity; Ljung-Box dependence of the levels (expected
    when kappa > 0) and independence of the innovations
    ``d_t - kappa * (anchor - n(t-1))``. Constant input flags every check as
    degenerate.
    """
    from .dependence import ljung_box
    from .stationarity import chunked_stationarity

    x = np.asarray(series, dtype=float)
    lo, hi = model.band_for(freq_index)
    anchor = model.anchor_for(freq_index)
    s = model.step_dist
    if len(x) < 2 or np.ptp(x) == 0:
        names = ("in_band", "sigma", "nu", "mu", "stationarity", "levels_dependent",
                 "innovations_independent")
        return RoundtripReport([Check(n, float("nan"), "degenerate input", False, True)
                                for n in names])
    checks = [Check("in_band", float(np.mean((x >= lo) & (x <= hi))), "== 1",
                    bool(np.all((x >= lo) & (x <= hi))))]
    d = difference(x)
    try:
        fit = fit_t_location_scale(d)
        rs = fit.sigma / s.sigma - 1.0
        rn = fit.nu / s.nu - 1.0
        checks += [
            Check("sigma", fit.sigma, f"within {sigma_tol:.0%} of {s.sigma}", abs(rs) <= sigma_tol),
            Check("nu", fit.nu, f"within {nu_tol:.0%} of {s.nu}", abs(rn) <= nu_tol),
            Check("mu", fit.mu, f"|mu| < {mu_tol}", abs(fit.mu) < mu_tol),
        ]
    except (ValueError, RuntimeError) as exc:
        checks += [Check(n, float("nan"), str(exc), False, True) for n in ("sigma", "nu", "mu")]
    if len(x) >= chunk_len:
        frac = chunked_stationarity(x, chunk_len, alpha=alpha)
        checks.append(Check("stationarity", frac, f">= {min_stationary}", frac >= min_stationary))
    lb = ljung_box(x, n_lags, alpha)
    checks.append(Check("levels_dependent", lb.statistic, f"Q > {lb.critical_value:.3f}"
                        if model.kappa > 0 else "n/a", lb.rejected or model.kappa == 0))
    innov = d - model.kappa * (anchor - x[:-1])
    lb2 = ljung_box(innov, n_lags, alpha)
    checks.append(Check("innovations_independent", lb2.statistic,
                        f"Q <= {lb2.critical_value:.3f}", not lb2.rejected))
    return RoundtripReport(checks)
