"""Trace file I/O (CSV and packed binary), sampling-gap QA and timing
regularization.

Packed-binary layout: 16-byte header (magic ``PLNZ``, little-endian u32
version = 1, u64 record count) followed by 12-byte little-endian records
``(float64 timestamp_s, uint16 freq_index, int16 level)`` with the level in
units of 0.1 dBuV.
"""

from __future__ import annotations

import csv
import math
import os
import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .exceptions import EmptyReportError, IngestError, RegularizationError
from .grid import FrequencyGrid, NoiseSample, QuantizationPolicy

MAGIC = b"PLNZ"
VERSION = 1
HEADER = struct.Struct("<4sIQ")
HEADER_SIZE = HEADER.size  # 16
RECORD_DTYPE = np.dtype([("timestamp", "<f8"), ("freq_index", "<u2"), ("level", "<i2")])
RECORD_SIZE = RECORD_DTYPE.itemsize  # 12
LEVEL_UNIT = 0.1
LEVEL_SCALE = 10
CSV_HEADER = ("timestamp_s", "freq_index", "level_dbuv")
FORMATS = ("csv", "packed")

# Decoded chunk layout handed to downstream consumers.
SAMPLE_DTYPE = np.dtype([("timestamp", "f8"), ("freq_index", "i4"), ("level", "f8")])

DEFAULT_CHUNK = 1 << 20


def guess_format(path):
    ext = os.path.splitext(str(path))[1].lower()
    return "csv" if ext in (".csv", ".txt") else "packed"


def _check_format(fmt):
    if fmt not in FORMATS:
        raise ValueError(f"unknown trace format {fmt!r}; expected one of {FORMATS}")


# -- reading ---------------------------------------------------------------

def _validate_chunk(chunk, grid, policy, offsets, unit="byte"):
    """Raise IngestError on the first invalid record of a decoded chunk."""
    t = chunk["timestamp"]
    bad = ~(np.isfinite(t) & (t >= 0))
    if grid is not None:
        bad |= (chunk["freq_index"] < 0) | (chunk["freq_index"] >= grid.count)
    if policy is not None:
        bad |= ~policy.contains(chunk["level"])
    if bad.any():
        i = int(np.argmax(bad))
        rec = chunk[i]
        raise IngestError(
            f"invalid record (timestamp={rec['timestamp']!r}, "
            f"freq_index={rec['freq_index']}, level={rec['level']!r})",
            offset=int(offsets[i]), unit=unit)


def _read_packed_header(fh):
    raw = fh.read(HEADER_SIZE)
    if len(raw) < HEADER_SIZE:
        raise IngestError("file too short for packed-binary header", offset=0)
    magic, version, count = HEADER.unpack(raw)
    if magic != MAGIC:
        raise IngestError(f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise IngestError(f"unsupported version {version}", offset=4)
    return count


def _iter_packed(path, grid, policy, chunk_records):
    with open(path, "rb") as fh:
        declared = _read_packed_header(fh)
        payload = os.fstat(fh.fileno()).st_size - HEADER_SIZE
        whole = payload // RECORD_SIZE
        done = 0
        while done < whole:
            n = min(chunk_records, whole - done)
            raw = np.fromfile(fh, dtype=RECORD_DTYPE, count=n)
            out = np.empty(len(raw), dtype=SAMPLE_DTYPE)
            out["timestamp"] = raw["timestamp"]
            out["freq_index"] = raw["freq_index"]
            out["level"] = raw["level"] / LEVEL_SCALE  # exact nearest double to k/10
            offsets = HEADER_SIZE + (done + np.arange(len(raw))) * RECORD_SIZE
            _validate_chunk(out, grid, policy, offsets)
            done += len(raw)
            yield out
        if payload % RECORD_SIZE:
            raise IngestError(
                f"truncated record after {whole} whole records",
                offset=HEADER_SIZE + whole * RECORD_SIZE)
        if whole != declared:
            raise IngestError(
                f"header declares {declared} records but payload holds {whole}",
                offset=HEADER_SIZE + whole * RECORD_SIZE)


def _parse_csv_row(row, lineno):
    if len(row) != 3:
        raise IngestError(f"expected 3 fields, got {len(row)}", offset=lineno, unit="line")
    try:
        t = float(row[0])
        f = int(row[1])
        level = float(row[2])
    except ValueError as exc:
        raise IngestError(f"unparseable record {row!r}: {exc}", offset=lineno, unit="line") from None
    return t, f, level


def _iter_csv(path, grid, policy, chunk_records):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestError("missing CSV header", offset=1, unit="line")
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise IngestError(f"unexpected CSV header {header!r}", offset=1, unit="line")
        rows, lines = [], []
        for row in reader:
            if not row:
                continue
            rows.append(_parse_csv_row(row, reader.line_num))
            lines.append(reader.line_num)
            if len(rows) >= chunk_records:
                out = np.array(rows, dtype=SAMPLE_DTYPE)
                _validate_chunk(out, grid, policy, lines, "line")
                yield out
                rows, lines = [], []
        if rows:
            out = np.array(rows, dtype=SAMPLE_DTYPE)
            _validate_chunk(out, grid, policy, lines, "line")
            yield out


def iter_chunks(path, fmt=None, grid: FrequencyGrid | None = None,
                policy: QuantizationPolicy | None = None,
                chunk_records: int = DEFAULT_CHUNK) -> Iterator[np.ndarray]:
    """Yield validated structured arrays (``SAMPLE_DTYPE``) in file order.

    Memory use is bounded by ``chunk_records`` regardless of trace length.
    """
    fmt = fmt or guess_format(path)
    _check_format(fmt)
    if fmt == "packed":
        yield from _iter_packed(path, grid, policy, chunk_records)
    else:
        yield from _iter_csv(path, grid, policy, chunk_records)


def open_trace(path, fmt=None, grid=None, policy=None) -> Iterator[NoiseSample]:
    """Stream :class:`NoiseSample` records from a trace file.

    Records are validated against ``grid`` and ``policy`` (defaults used
    when omitted). Single pass, constant memory.
    """
    grid = grid if grid is not None else FrequencyGrid()
    policy = policy if policy is not None else QuantizationPolicy()
    for chunk in iter_chunks(path, fmt, grid, policy):
        for t, f, level in zip(chunk["timestamp"].tolist(),
                               chunk["freq_index"].tolist(),
                               chunk["level"].tolist()):
            yield NoiseSample(t, f, level)


def read_trace(path, fmt=None, grid=None, policy=None):
    """Load a whole trace into one ``SAMPLE_DTYPE`` array."""
    chunks = list(iter_chunks(path, fmt, grid, policy))
    if not chunks:
        return np.empty(0, dtype=SAMPLE_DTYPE)
    return np.concatenate(chunks)


# -- writing ---------------------------------------------------------------

def _as_sample_array(samples):
    if isinstance(samples, np.ndarray) and samples.dtype.names:
        return samples
    return np.array([tuple(s) for s in samples], dtype=SAMPLE_DTYPE)


def _encode_levels(levels):
    units = np.round(np.asarray(levels, dtype=float) * LEVEL_SCALE)
    if np.any(np.abs(units) > np.iinfo(np.int16).max) or not np.all(np.isfinite(units)):
        raise ValueError("level not representable as int16 tenths of dBuV")
    return units.astype(np.int16)


class TraceWriter:
    """Incremental writer; the packed-binary record count is patched on close."""

    def __init__(self, path, fmt=None):
        self.path = path
        self.fmt = fmt or guess_format(path)
        _check_format(self.fmt)
        self.count = 0
        if self.fmt == "packed":
            self._fh = open(path, "wb")
            self._fh.write(HEADER.pack(MAGIC, VERSION, 0))
        else:
            self._fh = open(path, "w", newline="\n", encoding="utf-8")
            self._fh.write(",".join(CSV_HEADER) + "\n")

    def write(self, samples):
        arr = _as_sample_array(samples)
        if self.fmt == "packed":
            rec = np.empty(len(arr), dtype=RECORD_DTYPE)
            rec["timestamp"] = arr["timestamp"]
            fi = np.asarray(arr["freq_index"])
            if np.any((fi < 0) | (fi > np.iinfo(np.uint16).max)):
                raise ValueError("freq_index not representable as uint16")
            rec["freq_index"] = fi
            rec["level"] = _encode_levels(arr["level"])
            rec.tofile(self._fh)
        else:
            lines = [f"{t!r},{int(f)},{lv!r}\n" for t, f, lv in zip(
                arr["timestamp"].tolist(), arr["freq_index"].tolist(),
                arr["level"].tolist())]
            self._fh.writelines(lines)
        self.count += len(arr)

    def close(self):
        if self._fh.closed:
            return
        if self.fmt == "packed":
            self._fh.seek(0)
            self._fh.write(HEADER.pack(MAGIC, VERSION, self.count))
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_trace(path, samples, fmt=None):
    with TraceWriter(path, fmt) as w:
        w.write(samples)
    return w.count


# -- sampling-gap QA -------------------------------------------------------

@dataclass
class GapReport:
    """Pooled distribution of consecutive-sample gaps.

    ``gap_histogram`` maps gap duration (rounded to ``resolution`` seconds)
    to its count.
    """

    gap_histogram: dict
    mode_gap: float
    q95_abs_error: float
    nominal_period: float
    resolution: float
    n_gaps: int
    frequencies_covered: int
    quantile: float = 0.95

    def abs_error_quantile(self, p):
        return _abs_error_quantile(self.gap_histogram, self.nominal_period, p)

    def to_dict(self):
        return {
            "mode_gap": self.mode_gap,
            "q95_abs_error": self.q95_abs_error,
            "nominal_period": self.nominal_period,
            "resolution": self.resolution,
            "n_gaps": self.n_gaps,
            "frequencies_covered": self.frequencies_covered,
            "gap_histogram": [[k, v] for k, v in sorted(self.gap_histogram.items())],
        }


def _abs_error_quantile(hist, nominal, p):
    """Smallest |gap - nominal| whose cumulative share reaches ``p``."""
    errs = sorted((abs(k - nominal), v) for k, v in hist.items())
    total = sum(v for _, v in errs)
    need = p * total
    acc = 0
    for e, v in errs:
        acc += v
        if acc >= need - 1e-9 * total:
            return e
    return errs[-1][0]


class GapAccumulator:
    """Streaming per-frequency gap collector (chunk at a time)."""

    def __init__(self, resolution=1e-3):
        self.resolution = resolution
        self.last = {}
        self.counts = Counter()

    def update(self, chunk):
        if len(chunk) == 0:
            return
        order = np.argsort(chunk["freq_index"], kind="stable")
        f = chunk["freq_index"][order]
        t = chunk["timestamp"][order]
        starts = np.flatnonzero(np.r_[True, f[1:] != f[:-1]])
        ends = np.r_[starts[1:], len(f)]
        prev = np.empty_like(t)
        prev[1:] = t[:-1]
        for s in starts:
            prev[s] = self.last.get(int(f[s]), np.nan)
        gaps = t - prev
        gaps = gaps[np.isfinite(gaps)]
        if np.any(gaps < 0):
            raise IngestError("timestamps decrease within a frequency stream")
        for s, e in zip(starts, ends):
            self.last[int(f[s])] = float(t[e - 1])
        keys, cnt = np.unique(np.round(gaps / self.resolution).astype(np.int64),
                              return_counts=True)
        for k, c in zip(keys.tolist(), cnt.tolist()):
            self.counts[k] += c

    def report(self, nominal_period=1.0, quantile=0.95) -> GapReport:
        if not self.counts:
            raise EmptyReportError("no frequency has two or more samples")
        digits = max(0, -int(math.floor(math.log10(self.resolution))))
        hist = {round(k * self.resolution, digits): v for k, v in sorted(self.counts.items())}
        mode = max(hist.items(), key=lambda kv: (kv[1], -kv[0]))[0]
        covered = len(self.last)
        return GapReport(
            gap_histogram=hist,
            mode_gap=mode,
            q95_abs_error=_abs_error_quantile(hist, nominal_period, quantile),
            nominal_period=nominal_period,
            resolution=self.resolution,
            n_gaps=int(sum(self.counts.values())),
            frequencies_covered=covered,
            quantile=quantile,
        )


def _iter_as_chunks(stream, chunk_records=DEFAULT_CHUNK):
    if isinstance(stream, np.ndarray):
        yield stream
        return
    buf = []
    for item in stream:
        if isinstance(item, np.ndarray):
            if buf:
                yield np.array(buf, dtype=SAMPLE_DTYPE)
                buf = []
            yield item
            continue
        buf.append(tuple(item))
        if len(buf) >= chunk_records:
            yield np.array(buf, dtype=SAMPLE_DTYPE)
            buf = []
    if buf:
        yield np.array(buf, dtype=SAMPLE_DTYPE)


def sampling_gap_report(stream, nominal_period=1.0, resolution=1e-3,
                        quantile=0.95) -> GapReport:
    """Gap histogram, modal gap and the ``quantile`` of ``|gap - nominal|``.

    ``stream`` may be an iterable of samples, of structured chunks, or a
    single structured array. Percentiles use lower interpolation over the
    histogram (smallest value whose CDF reaches p).
    """
    acc = GapAccumulator(resolution)
    for chunk in _iter_as_chunks(stream):
        acc.update(chunk)
    return acc.report(nominal_period, quantile)


# -- regularization ----------------------------------------------------------

GAP_POLICIES = ("hold-last", "skip", "error-above")


@dataclass
class RegularSeries:
    freq_index: int
    start_time: float
    period: float
    values: np.ndarray
    ticks: np.ndarray = field(repr=False, default=None)


@dataclass
class RegularizationAudit:
    ticks_filled: int = 0
    ticks_dropped: int = 0
    samples_merged: int = 0


def _group_by_frequency(arr):
    order = np.argsort(arr["freq_index"], kind="stable")
    f = arr["freq_index"][order]
    starts = np.flatnonzero(np.r_[True, f[1:] != f[:-1]]) if len(f) else np.array([], int)
    ends = np.r_[starts[1:], len(f)]
    for s, e in zip(starts, ends):
        idx = order[s:e]
        yield int(f[s]), arr["timestamp"][idx], arr["level"][idx]


def regularize(stream, nominal_period=1.0, gap_policy="hold-last", max_gap_factor=3.0):
    """Map each frequency's samples onto a regular tick lattice.

    The tick of a sample is ``round((t - t0) / period)`` with ``t0`` the
    first timestamp of its frequency. Samples landing on an occupied tick
    are discarded (``samples_merged``). Missing ticks are filled with the
    previous value (``hold-last``), omitted (``skip``), or, for
    ``error-above``, raise when a gap exceeds ``max_gap_factor * period``
    and are otherwise filled.

    Returns ``(dict freq_index -> RegularSeries, RegularizationAudit)``.
    """
    if gap_policy not in GAP_POLICIES:
        raise ValueError(f"gap_policy must be one of {GAP_POLICIES}")
    if not nominal_period > 0:
        raise ValueError("nominal_period must be positive")
    arr = np.concatenate(list(_iter_as_chunks(stream)) or [np.empty(0, SAMPLE_DTYPE)])
    audit = RegularizationAudit()
    out = {}
    for f, t, v in _group_by_frequency(arr):
        out[f] = regularize_frequency(f, t, v, nominal_period, gap_policy,
                                      max_gap_factor, audit)
    return out, audit


def regularize_frequency(freq_index, t, v, nominal_period=1.0, gap_policy="hold-last",
                         max_gap_factor=3.0, audit=None) -> RegularSeries:
    """Regularize one frequency's time-ordered samples; see :func:`regularize`."""
    if gap_policy not in GAP_POLICIES:
        raise ValueError(f"gap_policy must be one of {GAP_POLICIES}")
    audit = audit if audit is not None else RegularizationAudit()
    f = int(freq_index)
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    if len(t) == 0:
        raise RegularizationError(f"no samples for frequency {f}")
    if np.any(np.diff(t) < 0):
        raise RegularizationError(f"timestamps decrease for frequency {f}")
    if gap_policy == "error-above" and len(t) > 1:
        big = np.diff(t) > max_gap_factor * nominal_period
        if big.any():
            i = int(np.argmax(big))
            raise RegularizationError(
                f"gap of {t[i + 1] - t[i]:.6g} s exceeds "
                f"{max_gap_factor} x period at frequency {f}, t={t[i]:.6g}")
    ticks = np.round((t - t[0]) / nominal_period).astype(np.int64)
    keep = np.r_[True, ticks[1:] != ticks[:-1]]
    audit.samples_merged += int((~keep).sum())
    ticks, v = ticks[keep], v[keep]
    n_ticks = int(ticks[-1]) + 1
    missing = n_ticks - len(ticks)
    if gap_policy == "skip":
        values, tk = v.copy(), ticks
        audit.ticks_dropped += missing
    elif missing == 0:
        values, tk = v.copy(), ticks
    else:
        pos = np.searchsorted(ticks, np.arange(n_ticks), side="right") - 1
        values, tk = v[pos], np.arange(n_ticks)
        audit.ticks_filled += missing
    return RegularSeries(f, float(t[0]), nominal_period, values, tk)
