"""End-to-end analysis run: ingest, per-stage analysis, report files and a
manifest.

Report files are deterministic functions of the input and the config;
wall-clock timings live only in ``manifest.json``.
"""

from __future__ import annotations

import csv
import json
import math
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .config import STAGES, RunConfig
from .dependence import acf_values, bartlett_bound, chi2_ppf, chi2_sf
from .exceptions import ConfigError, EmptyReportError, IngestError, StageError
from .grid import channel_of
from .ingest import (SAMPLE_DTYPE, GapAccumulator, RegularizationAudit, TraceWriter,
                     iter_chunks, regularize_frequency)
from .modelfit import (best_fit, burst_lengths_pooled, derivative_mass_report,
                       family_logpdf, fit_t_location_scale, geometric_fit,
                       survival_linearity)
from .spectral import (SpectralAccumulator, frequency_summary, global_distribution,
                       moving_stats, segment_regions)
from .stationarity import stationarity_curve

EXIT_OK, EXIT_CONFIG, EXIT_INGEST, EXIT_STAGE = 0, 2, 3, 4

FIGURES = {
    "fig3": ("qa", "fig3_gaps.csv"),
    "fig4": ("spectrum", "fig4_spectrum.csv"),
    "fig5": ("spectrum", "fig5_distribution.csv"),
    "fig6": ("moving", "fig6_moving.csv"),
    "fig7": ("stationarity", "fig7_stationarity.csv"),
    "fig8": ("dependence", "fig8_acf.csv"),
    "dnoise": ("fit", "fig_dnoise.csv"),
    "burst": ("bursts", "fig_burst.csv"),
}


@dataclass
class TraceData:
    """Everything the stages need after one pass over the input."""

    spectral: SpectralAccumulator
    gaps: GapAccumulator
    series: dict
    audit: RegularizationAudit
    total: int


@dataclass
class Report:
    """In-memory results per completed stage plus run metadata."""

    config: RunConfig
    results: dict = field(default_factory=dict)
    status: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def require(self, stage):
        if stage not in self.results:
            state = self.status.get(stage, {}).get("status", "not run")
            raise StageError(f"stage {stage!r} is not available ({state})")
        return self.results[stage]


# -- ingest ----------------------------------------------------------------------

def load_trace(cfg: RunConfig) -> TraceData:
    """One streaming pass: gap QA, spectral accumulation, per-frequency series."""
    if not cfg.input:
        raise IngestError("no input files given")
    grid, policy = cfg.grid(), cfg.policy()
    spec = SpectralAccumulator.for_grid(grid, policy)
    gaps = GapAccumulator()
    parts_t = [[] for _ in range(grid.count)]
    parts_v = [[] for _ in range(grid.count)]
    total = 0
    fmt = None if cfg.format == "auto" else cfg.format
    for path in cfg.input:
        try:
            for chunk in iter_chunks(path, fmt, grid, policy):
                gaps.update(chunk)
                spec.add_batch(chunk["freq_index"], chunk["level"])
                order = np.argsort(chunk["freq_index"], kind="stable")
                f = chunk["freq_index"][order]
                starts = np.flatnonzero(np.r_[True, f[1:] != f[:-1]])
                ends = np.r_[starts[1:], len(f)]
                t = chunk["timestamp"][order]
                v = chunk["level"][order]
                for s, e in zip(starts, ends):
                    parts_t[f[s]].append(t[s:e])
                    parts_v[f[s]].append(v[s:e])
                total += len(chunk)
        except OSError as exc:
            raise IngestError(f"cannot read {path}: {exc}") from None
    if total == 0:
        raise IngestError("input holds no samples")
    audit = RegularizationAudit()
    series = {}
    for i in range(grid.count):
        if not parts_t[i]:
            continue
        t = np.concatenate(parts_t[i])
        v = np.concatenate(parts_v[i])
        parts_t[i] = parts_v[i] = None
        if cfg.gap_policy == "none":
            series[i] = v  # raw samples in time order, as recorded
        else:
            series[i] = regularize_frequency(i, t, v, cfg.nominal_period, cfg.gap_policy,
                                             cfg.max_gap_factor, audit).values
    return TraceData(spec, gaps, series, audit, total)


# -- stages ----------------------------------------------------------------------

def _pmap(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def stage_qa(data, cfg):
    return {"gaps": data.gaps.report(cfg.nominal_period)}


def stage_spectrum(data, cfg):
    summary = frequency_summary(data.spectral, cfg.grid())
    regions = segment_regions(summary, cfg.region_boundaries_hz)
    dist = global_distribution(data.spectral)
    return {"summary": summary, "regions": regions, "distribution": dist}


def _moving_frequencies(data, cfg):
    if cfg.moving_frequencies != "auto":
        return [int(s) for s in cfg.moving_frequencies.split(",") if s.strip()]
    grid = cfg.grid()
    picks = []
    for ch in range(1, grid.n_channels + 1):
        idx = [int(i) for i in grid.channel_indices(ch) if int(i) in data.series]
        if idx:
            picks.append(max(idx, key=lambda i: (len(data.series[i]), -i)))
    return picks


def stage_moving(data, cfg):
    grid = cfg.grid()
    out = {}
    for f in _moving_frequencies(data, cfg):
        if f not in data.series:
            raise StageError(f"moving statistics requested for frequency {f}, which has no data")
        x = data.series[f]
        if len(x) < cfg.moving_window:
            continue
        ms = moving_stats(x, cfg.moving_window)
        sel = np.arange(0, len(ms.mean), cfg.moving_stride)
        out[f] = (grid.hz(f), sel, ms.mean[sel], ms.std[sel], ms.var[sel])
    if not out:
        raise StageError(f"no selected series reaches the moving window of {cfg.moving_window}")
    return {"moving": out}


def stage_stationarity(data, cfg):
    grid = cfg.grid()
    groups = {}
    for f, x in data.series.items():
        groups.setdefault(channel_of(grid, f), []).append(x)
    bw = cfg.kpss_bandwidth if cfg.kpss_bandwidth == "auto" else int(cfg.kpss_bandwidth)
    curve = stationarity_curve(dict(sorted(groups.items())), cfg.chunk_lengths, cfg.alpha,
                               bw, n_jobs=cfg.n_threads())
    return {"curve": curve}


def stage_dependence(data, cfg):
    grid = cfg.grid()
    max_lag = max(max(cfg.acf_lags), cfg.ljung_box_lags)
    crit = chi2_ppf(1.0 - cfg.alpha, cfg.ljung_box_lags)

    def one(f):
        x = data.series[f]
        if len(x) <= max_lag or len(x) < 2:
            return f, None, None
        rho = acf_values(x, max_lag)
        if np.isnan(rho[1]):
            return f, rho, None
        t = len(x)
        k = np.arange(1, cfg.ljung_box_lags + 1)
        q = float(t * (t + 2.0) * np.sum(rho[1:cfg.ljung_box_lags + 1] ** 2 / (t - k)))
        return f, rho, q

    rows = _pmap(one, sorted(data.series), cfg.n_threads())
    acf_rows, lb_rows = [], []
    for f, rho, q in rows:
        n = len(data.series[f])
        hz = grid.hz(f)
        if rho is None:
            lb_rows.append((f, hz, n, float("nan"), crit, float("nan"), "too-short"))
            continue
        bound = bartlett_bound(n, cfg.alpha)
        for lag in cfg.acf_lags:
            r = float(rho[lag])
            acf_rows.append((hz, lag, r, bound, bool(abs(r) > bound)))
        if q is None:
            lb_rows.append((f, hz, n, float("nan"), crit, float("nan"), "degenerate"))
        else:
            lb_rows.append((f, hz, n, q, crit, float(chi2_sf(q, cfg.ljung_box_lags)),
                            "reject" if q > crit else "fail-to-reject"))
    return {"acf": acf_rows, "ljung_box": lb_rows}


def pooled_differences(series, bin_width=None):
    """All within-frequency steps as ``(values, counts)``.

    When every step is a whole multiple of ``bin_width`` the steps are
    tallied on that lattice, which avoids materializing the pooled series.
    """
    parts = [x for x in series.values() if len(x) >= 2]
    if not parts:
        raise StageError("no frequency has two or more samples")
    if bin_width:
        tallies, lo = {}, None
        for x in parts:
            d = np.diff(x)
            k = np.round(d / bin_width)
            if not np.allclose(d, k * bin_width, rtol=0, atol=1e-6 * bin_width):
                break
            k = k.astype(np.int64)
            kmin = int(k.min())
            c = np.bincount(k - kmin)
            for j in np.flatnonzero(c):
                tallies[kmin + int(j)] = tallies.get(kmin + int(j), 0) + int(c[j])
        else:
            keys = np.array(sorted(tallies), dtype=np.int64)
            return keys * bin_width, np.array([tallies[k] for k in keys.tolist()], np.int64)
    values, inverse = np.unique(np.concatenate([np.diff(x) for x in parts]),
                                return_inverse=True)
    return values, np.bincount(inverse.ravel(), minlength=len(values)).astype(np.int64)


def stage_fit(data, cfg):
    w = cfg.bin_width
    out = {}
    if cfg.fit_mode in ("pooled", "both"):
        values, counts = pooled_differences(data.series, w)
        sel = best_fit(values, cfg.fit_candidates, weights=counts.astype(float))
        t = fit_t_location_scale(values, counts.astype(float)) \
            if "t-location-scale" not in sel.failures else None
        out.update(selection=sel, t_fit=t, values=values, counts=counts,
                   mass=derivative_mass_report(values, w, counts))
    if cfg.fit_mode in ("per-frequency", "both"):
        def one(f):
            x = data.series[f]
            try:
                return f, fit_t_location_scale(np.diff(x)), None
            except (ValueError, RuntimeError) as exc:
                return f, None, str(exc)
        out["per_frequency"] = _pmap(one, sorted(data.series), cfg.n_threads())
    return out


def stage_bursts(data, cfg):
    lo, hi = cfg.survival_range
    out = []
    series = [x for _, x in sorted(data.series.items()) if len(x) >= 2]
    if not series:
        raise StageError("no frequency has two or more samples")
    for thr in cfg.burst_thresholds:
        hist = burst_lengths_pooled(series, thr)
        try:
            geo = geometric_fit(hist).to_dict()
        except ValueError as exc:
            geo = {"error": str(exc)}
        out.append({
            "threshold": thr,
            "hist": hist,
            "geometric": geo,
            "r2_loglog": survival_linearity(hist, lo, hi, "loglog"),
            "r2_semilog": survival_linearity(hist, lo, hi, "semilog"),
        })
    return {"bursts": out}


STAGE_FUNCS = {
    "qa": stage_qa,
    "spectrum": stage_spectrum,
    "moving": stage_moving,
    "stationarity": stage_stationarity,
    "dependence": stage_dependence,
    "fit": stage_fit,
    "bursts": stage_bursts,
}


# -- report writing -------------------------------------------------------------------

def _num(v):
    if isinstance(v, (np.floating, float)):
        return repr(float(v))
    if isinstance(v, (np.integer, np.bool_)):
        return str(v.item())
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) for v in row])


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def emit_plot_data(report: Report, figure_id: str, path) -> str:
    """Write the CSV behind one figure; raises if its stage did not complete."""
    if figure_id not in FIGURES:
        raise ValueError(f"unknown figure {figure_id!r}; choose from {sorted(FIGURES)}")
    stage, _ = FIGURES[figure_id]
    res = report.require(stage)
    cfg = report.config
    if figure_id == "fig3":
        hist = res["gaps"].gap_histogram
        _write_csv(path, ("gap_s", "count"), sorted(hist.items()))
    elif figure_id == "fig4":
        s = res["summary"]
        _write_csv(path, ("hz", "min", "q10", "q50", "q90", "max"),
                   zip(s.hz, s.min, s.q10, s.q50, s.q90, s.max))
    elif figure_id == "fig5":
        g = res["distribution"]
        keep = g.counts > 0
        _write_csv(path, ("level_dbuv", "count", "pdf", "cdf"),
                   zip(g.centers[keep], g.counts[keep], g.pdf[keep], g.cdf[keep]))
    elif figure_id == "fig6":
        rows = []
        for f, (hz, idx, mean, std, var) in sorted(res["moving"].items()):
            rows.extend((f, hz, i, m, s, v) for i, m, s, v in zip(idx, mean, std, var))
        _write_csv(path, ("freq_index", "hz", "start_index", "mean", "std", "var"), rows)
    elif figure_id == "fig7":
        c = res["curve"]
        rows = [(n * cfg.nominal_period, ch, fr, deg) for n, ch, fr, deg in c.rows()]
        _write_csv(path, ("chunk_len_s", "channel", "fraction", "degenerate_count"), rows)
    elif figure_id == "fig8":
        _write_csv(path, ("hz", "lag", "rho", "bound", "significant"), res["acf"])
    elif figure_id == "dnoise":
        if "selection" not in res:
            raise StageError("figure 'dnoise' needs a pooled fit (fit_mode pooled or both)")
        values, counts, sel = res["values"], res["counts"], res["selection"]
        n = counts.sum()
        width = cfg.bin_width
        fams = [c for c in sel.candidates]
        header = ["d_dbuv", "count", "empirical_pdf"] + [f"pdf_{c.family}" for c in fams]
        dens = [np.exp(family_logpdf(c.family, c.params, values)) for c in fams]
        rows = [(v, k, k / (n * width), *[dd[i] for dd in dens])
                for i, (v, k) in enumerate(zip(values, counts))]
        _write_csv(path, header, rows)
    elif figure_id == "burst":
        rows = []
        for b in res["bursts"]:
            hist = b["hist"]
            if not hist.counts:
                continue
            ks, surv = hist.survival()
            total = hist.total_runs
            for k, s in zip(ks, surv):
                c = hist.counts.get(int(k), 0)
                rows.append((b["threshold"], int(k), c, c / total, int(s)))
        _write_csv(path, ("threshold", "length", "count", "normalized", "survival"), rows)
    return str(path)


def _stage_documents(stage, res, report):
    """Non-figure report files for one stage: ``{filename: writer}``."""
    cfg = report.config
    if stage == "qa":
        return {"gaps.json": lambda p: _write_json(p, res["gaps"].to_dict())}
    if stage == "spectrum":
        s = res["summary"]

        def regions(p):
            _write_json(p, {"regions": [r.__dict__ for r in res["regions"]],
                            "modes_dbuv": res["distribution"].modes()})
        return {
            "summary.csv": lambda p: _write_csv(p, s.COLUMNS, s.rows()),
            "regions.json": regions,
        }
    if stage == "stationarity":
        c = res["curve"]
        return {"stationarity.json": lambda p: _write_json(p, {
            "alpha": c.alpha, "chunk_lengths": c.chunk_lengths,
            "fraction_stationary": c.fraction_stationary,
            "per_channel": c.per_channel, "degenerate": c.degenerate})}
    if stage == "dependence":
        return {"ljung_box.csv": lambda p: _write_csv(
            p, ("freq_index", "hz", "n", "q", "critical_value", "p_value", "decision"),
            res["ljung_box"])}
    if stage == "fit":
        docs = {}
        if "selection" in res:
            def fit_json(p):
                t = res["t_fit"]
                model = None
                if t is not None:
                    model = dict(t.to_dict(), quantization={
                        "bin_width": cfg.bin_width, "range": [cfg.level_min, cfg.level_max]})
                _write_json(p, {"model": model, "selection": res["selection"].to_dict(),
                                "derivative_mass": res["mass"]})
            docs["fit.json"] = fit_json
        if "per_frequency" in res:
            grid = cfg.grid()
            rows = []
            for f, t, err in res["per_frequency"]:
                if t is None:
                    rows.append((f, grid.hz(f), "nan", "nan", "nan", "nan", 0, err))
                else:
                    rows.append((f, grid.hz(f), t.mu, t.sigma, t.nu, t.loglik, t.n, ""))
            docs["fit_per_frequency.csv"] = lambda p: _write_csv(
                p, ("freq_index", "hz", "mu", "sigma", "nu", "loglik", "n", "error"), rows)
        return docs
    if stage == "bursts":
        def bursts_json(p):
            _write_json(p, {"bursts": [{
                "threshold": b["threshold"], "total_runs": b["hist"].total_runs,
                "n_steps": b["hist"].n_steps, "censored": b["hist"].censored,
                "geometric": b["geometric"], "r2_loglog": b["r2_loglog"],
                "r2_semilog": b["r2_semilog"]} for b in res["bursts"]]})
        return {"bursts.json": bursts_json}
    return {}


def _versions():
    import scipy
    return {"plcnoise": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def _write_manifest(report, out_dir, error=None):
    cfg = report.config
    manifest = {
        "versions": _versions(),
        "config": {k: v for k, v in cfg.__dict__.items()},
        "seed": cfg.seed,
        "inputs": list(cfg.input),
        "counts": report.counts,
        "stages": report.status,
        "timings_s": report.timings,
        "status": "ok" if error is None and all(
            s["status"] == "ok" for s in report.status.values()) else "error",
    }
    if error is not None:
        manifest["error"] = error
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)


def run_pipeline(cfg: RunConfig, data: TraceData | None = None):
    """Run the configured stages and write reports to ``cfg.output_dir``.

    Returns ``(exit_code, Report)``. Stage failures are recorded in the
    manifest and do not stop independent stages. An ingest failure writes
    only the manifest.
    """
    report = Report(cfg)
    out_dir = cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    if data is None:
        try:
            data = load_trace(cfg)
        except (IngestError, EmptyReportError) as exc:
            report.status["ingest"] = {"status": "error", "error": str(exc)}
            report.timings["ingest"] = time.perf_counter() - t0
            _write_manifest(report, out_dir, error=f"ingest: {exc}")
            return EXIT_INGEST, report
        except Exception as exc:  # regularization and friends
            report.status["ingest"] = {"status": "error", "error": f"{type(exc).__name__}: {exc}"}
            _write_manifest(report, out_dir, error=f"ingest: {exc}")
            return EXIT_INGEST, report
    report.timings["ingest"] = time.perf_counter() - t0
    report.status["ingest"] = {"status": "ok"}
    report.counts = {
        "total_samples": data.total,
        "per_frequency": data.spectral.count,
        "series_lengths": {f: len(x) for f, x in sorted(data.series.items())},
        "ticks_filled": data.audit.ticks_filled,
        "ticks_dropped": data.audit.ticks_dropped,
        "samples_merged": data.audit.samples_merged,
    }
    figures_by_stage = {}
    for fig, (stage, name) in FIGURES.items():
        figures_by_stage.setdefault(stage, []).append((fig, name))
    for stage in STAGES:
        if stage not in cfg.stages:
            continue
        t = time.perf_counter()
        files = []
        try:
            res = STAGE_FUNCS[stage](data, cfg)
            report.results[stage] = res
            for fig, name in figures_by_stage.get(stage, []):
                if stage == "fit" and "selection" not in res:
                    continue
                files.append(emit_plot_data(report, fig, os.path.join(out_dir, name)))
            for name, writer in _stage_documents(stage, res, report).items():
                path = os.path.join(out_dir, name)
                writer(path)
                files.append(path)
            report.status[stage] = {"status": "ok",
                                    "files": sorted(os.path.basename(f) for f in files)}
        except Exception as exc:  # recorded, independent stages continue
            report.results.pop(stage, None)
            report.status[stage] = {"status": "error", "error": f"{type(exc).__name__}: {exc}"}
        report.timings[stage] = time.perf_counter() - t
    report.timings["total"] = time.perf_counter() - t0
    _write_manifest(report, out_dir)
    ok = all(s["status"] == "ok" for s in report.status.values())
    return (EXIT_OK if ok else EXIT_STAGE), report


def run_synthesis(cfg: RunConfig):
    """Write a synthetic trace (and its model file) as configured."""
    from .synthesis import NoiseModel, published_model, region_anchors, synthesize

    grid = cfg.grid()
    if cfg.synth_model:
        model = NoiseModel.load(cfg.synth_model)
    else:
        anchors = region_anchors(grid, cfg.region_boundaries_hz)
        base = published_model(grid, cfg.seed, cfg.synth_kappa)
        band = np.stack([anchors - cfg.synth_half_band, anchors + cfg.synth_half_band], -1)
        model = NoiseModel(base.step_dist, anchors, band, cfg.synth_kappa, cfg.policy(), cfg.seed)
    if cfg.synth_frequencies == "all":
        freqs = list(range(grid.count))
    else:
        freqs = [int(s) for s in cfg.synth_frequencies.split(",") if s.strip()]
    if any(not 0 <= f < grid.count for f in freqs):
        raise ConfigError("synth_frequencies outside the grid")
    fmt = None if cfg.format == "auto" else cfg.format
    block = max(1, (1 << 20) // max(1, len(freqs)))
    levels = {f: synthesize(model, cfg.synth_length, f) for f in freqs}
    with TraceWriter(cfg.synth_output, fmt) as w:
        for start in range(0, cfg.synth_length, block):
            stop = min(start + block, cfg.synth_length)
            n = stop - start
            arr = np.empty(n * len(freqs), SAMPLE_DTYPE)
            arr["timestamp"] = np.repeat(np.arange(start, stop) * cfg.nominal_period, len(freqs))
            for j, f in enumerate(freqs):
                arr["freq_index"][j::len(freqs)] = f
                arr["level"][j::len(freqs)] = levels[f][start:stop]
            w.write(arr)
    model.save(cfg.synth_output + ".model.json")
    return cfg.synth_output, model
