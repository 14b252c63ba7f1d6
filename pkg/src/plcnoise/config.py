"""Run configuration and its flat ``key = value`` file format.

One setting per line, ``#`` starts a comment, lists are comma-separated.
Documented keys (defaults in brackets):

input               trace paths, comma-separated                     []
format              auto | csv | packed                               [auto]
output_dir          report directory                                  [reports]
grid_count          number of sub-carriers                            [776]
grid_start_hz       first sub-carrier frequency                       [41992.0]
grid_stop_hz        last sub-carrier frequency                        [471680.0]
bin_width           level quantization step, dBuV                     [0.1]
level_min           lowest representable level, dBuV                  [-20.0]
level_max           highest representable level, dBuV                 [120.0]
nominal_period      sampling period, s                                [1.0]
gap_policy          none | hold-last | skip | error-above             [none]
max_gap_factor      error-above threshold in periods                  [3.0]
region_boundaries_hz  region split points                             [95000,200000,300000]
moving_window       moving-statistics window, samples                 [3600]
moving_stride       output decimation of moving statistics            [60]
moving_frequencies  frequency indices, or "auto" (one per channel)    [auto]
chunk_lengths       KPSS chunk lengths, samples                       [30,60,120,300,600]
alpha               significance level                                [0.05]
kpss_bandwidth      Newey-West lags, or "auto"                        [auto]
acf_lags            lags reported per frequency                       [1,2,5,10]
ljung_box_lags      Ljung-Box L                                       [10]
fit_candidates      step-distribution families                        [gaussian,...,t-location-scale]
fit_mode            pooled | per-frequency | both                     [pooled]
burst_thresholds    steady-state thresholds D, dBuV                   [0,1,2,3]
survival_range      burst lengths used for linearity R^2              [2,100]
synth_length        samples per frequency                             [3600]
synth_frequencies   frequency indices, or "all"                       [all]
synth_kappa         mean-reversion coefficient                        [0.01]
synth_half_band     reflective band half-width, dBuV                  [35.0]
synth_model         model JSON to synthesize from; empty = published fit  []
synth_output        output trace path                                 [synthetic.plnz]
seed                RNG seed                                          [0]
threads             worker threads, 0 = PLCNOISE_THREADS or cpu count [0]
stages              stages to run                                     [qa,...,bursts]
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

from .exceptions import ConfigError
from .grid import FrequencyGrid, QuantizationPolicy
from .modelfit import FAMILIES

THREADS_ENV = "PLCNOISE_THREADS"
STAGES = ("qa", "spectrum", "moving", "stationarity", "dependence", "fit", "bursts")


@dataclass
class RunConfig:
    input: list = field(default_factory=list)
    format: str = "auto"
    output_dir: str = "reports"
    grid_count: int = 776
    grid_start_hz: float = 41_992.0
    grid_stop_hz: float = 471_680.0
    bin_width: float = 0.1
    level_min: float = -20.0
    level_max: float = 120.0
    nominal_period: float = 1.0
    gap_policy: str = "none"
    max_gap_factor: float = 3.0
    region_boundaries_hz: list = field(default_factory=lambda: [95_000.0, 200_000.0, 300_000.0])
    moving_window: int = 3600
    moving_stride: int = 60
    moving_frequencies: str = "auto"
    chunk_lengths: list = field(default_factory=lambda: [30, 60, 120, 300, 600])
    alpha: float = 0.05
    kpss_bandwidth: str = "auto"
    acf_lags: list = field(default_factory=lambda: [1, 2, 5, 10])
    ljung_box_lags: int = 10
    fit_candidates: list = field(default_factory=lambda: list(FAMILIES))
    fit_mode: str = "pooled"
    burst_thresholds: list = field(default_factory=lambda: [0.0, 1.0, 2.0, 3.0])
    survival_range: list = field(default_factory=lambda: [2, 100])
    synth_length: int = 3600
    synth_frequencies: str = "all"
    synth_kappa: float = 0.01
    synth_half_band: float = 35.0
    synth_model: str = ""
    synth_output: str = "synthetic.plnz"
    seed: int = 0
    threads: int = 0
    stages: list = field(default_factory=lambda: list(STAGES))

    def __post_init__(self):
        self.validate()

    # -- derived objects

    def grid(self):
        return FrequencyGrid(self.grid_count, self.grid_start_hz, self.grid_stop_hz)

    def policy(self):
        return QuantizationPolicy(self.bin_width, (self.level_min, self.level_max))

    def n_threads(self):
        if self.threads > 0:
            return self.threads
        env = os.environ.get(THREADS_ENV, "").strip()
        if env:
            try:
                n = int(env)
            except ValueError:
                raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
            if n < 1:
                raise ConfigError(f"{THREADS_ENV} must be positive")
            return n
        return os.cpu_count() or 1

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.format in ("auto", "csv", "packed"), f"unknown format {self.format!r}")
        need(self.gap_policy in ("none", "hold-last", "skip", "error-above"),
             f"unknown gap_policy {self.gap_policy!r}")
        need(self.fit_mode in ("pooled", "per-frequency", "both"),
             f"unknown fit_mode {self.fit_mode!r}")
        need(0 < self.alpha < 1, "alpha must lie in (0, 1)")
        need(self.nominal_period > 0, "nominal_period must be positive")
        need(self.moving_window >= 2 and self.moving_stride >= 1, "bad moving window/stride")
        need(all(n >= 10 for n in self.chunk_lengths) and self.chunk_lengths,
             "chunk_lengths must be >= 10")
        need(all(k >= 1 for k in self.acf_lags) and self.acf_lags, "acf_lags must be >= 1")
        need(self.ljung_box_lags >= 1, "ljung_box_lags must be >= 1")
        need(set(self.fit_candidates) <= set(FAMILIES) and self.fit_candidates,
             f"fit_candidates must be a non-empty subset of {FAMILIES}")
        need(all(d >= 0 for d in self.burst_thresholds), "burst_thresholds must be >= 0")
        need(len(self.survival_range) == 2 and 1 <= self.survival_range[0] < self.survival_range[1],
             "survival_range must be two increasing lengths")
        need(set(self.stages) <= set(STAGES), f"stages must be a subset of {STAGES}")
        need(self.kpss_bandwidth == "auto" or self.kpss_bandwidth.isdigit(),
             "kpss_bandwidth must be 'auto' or a non-negative integer")
        need(0 <= self.synth_kappa < 1, "synth_kappa must lie in [0, 1)")
        need(self.synth_length >= 1, "synth_length must be positive")
        need(self.threads >= 0, "threads must be >= 0")
        try:
            self.grid()
            self.policy()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    # -- serialization

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {_format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, base=None):
        values = dataclasses.asdict(base) if base is not None else {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = value
        return cls.from_mapping(values)

    @classmethod
    def from_mapping(cls, values):
        kinds = {f.name: f for f in dataclasses.fields(cls)}
        out = {}
        for key, value in values.items():
            if key not in kinds:
                raise ConfigError(f"unknown config key {key!r}")
            default = kinds[key].default
            if default is dataclasses.MISSING:
                default = kinds[key].default_factory()
            out[key] = _parse_value(key, value, default)
        return cls(**out)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_text(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None


def _format_value(v):
    if isinstance(v, (list, tuple)):
        return ",".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_scalar(key, text, kind):
    try:
        if kind is bool:
            return text.lower() in ("1", "true", "yes")
        return kind(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind.__name__}") from None


def _parse_value(key, value, default):
    if not isinstance(value, str):
        return value
    if isinstance(default, list):
        items = [s.strip() for s in value.split(",") if s.strip()]
        kind = type(default[0]) if default else str
        return [_parse_scalar(key, s, kind) for s in items]
    return _parse_scalar(key, value.strip(), type(default))
