"""Large-scale noise analysis and synthesis for narrowband power-line traces."""

__version__ = "0.1.0"

from .config import RunConfig
from .dependence import acf, bartlett_bound, chi2_ppf, ljung_box
from .exceptions import (ConfigError, DegenerateSeriesError, EmptyReportError, FitError,
                         IngestError, PLCNoiseError, RegularizationError, StageError)
from .grid import (FrequencyGrid, NoiseSample, QuantizationPolicy, Region, channel_of,
                   channel_of_hz)
from .ingest import (open_trace, read_trace, regularize, sampling_gap_report,
                     write_trace)
from .modelfit import (BurstHistogram, ModelSelection, TLocationScale, best_fit,
                       burst_lengths, derivative_mass_report, difference,
                       fit_t_location_scale, geometric_fit)
from .pipeline import emit_plot_data, run_pipeline
from .spectral import (SpectralAccumulator, accumulate, frequency_summary,
                       global_distribution, moving_stats, segment_regions)
from .stationarity import (TestOutcome, adf, chunked_stationarity, kpss_level,
                           stationarity_curve)
from .synthesis import (NoiseModel, published_model, sample_t_location_scale, synthesize,
                        validate_roundtrip)

__all__ = [
    "BurstHistogram", "ConfigError", "DegenerateSeriesError", "EmptyReportError",
    "FitError", "FrequencyGrid", "IngestError", "ModelSelection", "NoiseModel",
    "NoiseSample", "PLCNoiseError", "published_model", "QuantizationPolicy", "Region",
    "RegularizationError", "RunConfig", "SpectralAccumulator", "StageError",
    "TLocationScale", "TestOutcome", "accumulate", "acf", "adf", "bartlett_bound",
    "best_fit", "burst_lengths", "channel_of", "channel_of_hz", "chi2_ppf",
    "chunked_stationarity", "derivative_mass_report", "difference", "emit_plot_data",
    "fit_t_location_scale", "frequency_summary", "geometric_fit", "global_distribution",
    "kpss_level", "ljung_box", "moving_stats", "open_trace", "read_trace", "regularize",
    "run_pipeline", "sample_t_location_scale", "sampling_gap_report", "segment_regions",
    "stationarity_curve", "synthesize", "validate_roundtrip", "write_trace",
]
