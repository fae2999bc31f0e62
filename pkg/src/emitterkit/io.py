"""File formats: time tags, measurement series, emitter models and fit reports.

Every CSV file starts with one comment line ``# {json}`` holding ``kind``,
``schema_version`` and metadata, followed by a unit-bearing column header.
Floats are written with ``repr`` (shortest round-trip form), lines end in
``\\n`` and files are UTF-8, so output does not depend on platform or locale.
Writes go to a temporary file that is renamed into place.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
import os
import tempfile
import warnings
from dataclasses import dataclass, field

import numpy as np

from .correlate import CorrelationHistogram, DecayHistogram
from .errors import DataError, ParseError, SchemaError
from .fitting.engine import FitResult
from .rates import PARAMETER_UNITS, EmitterModel
from .timetags import CHANNEL_LABELS, SYNC, TimeTagStream

SCHEMA_VERSION = 1
TIMETAG_HEADER = ("channel", "timestamp_ps")
SERIES_COLUMNS = {
    "spectrum": ("wavelength_nm", "counts"),
    "g2hist": ("tau_ns", "g2", "sigma", "counts"),
    "saturation": ("power_mW", "rate_Hz"),
    "polarization": ("angle_deg", "rate_Hz"),
    "decay": ("delay_ns", "counts"),
    "curve": None,
}
OPTIONAL_COLUMNS = {"saturation": ("sigma_Hz",), "polarization": ("sigma_Hz",), "spectrum": ("sigma",)}
JSON_KINDS = ("emitter_model", "fit_report", "manifest", "pulsed_g2", "ensemble_summary")
READ_CHUNK_ROWS = 1 << 20


# helpers ---------------------------------------------------------------------


def _umask_mode():
    mask = os.umask(0)
    os.umask(mask)
    return 0o666 & ~mask


def _atomic_write(path, writer):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            writer(f)
        os.chmod(tmp, _umask_mode())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _encode(obj):
    """JSON-safe copy: arrays to lists, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "NaN"
        if math.isinf(v):
            return "Infinity" if v > 0 else "-Infinity"
        return v
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


_SPECIAL = {"NaN": math.nan, "Infinity": math.inf, "-Infinity": -math.inf}


def _decode(obj):
    if isinstance(obj, dict):
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    if isinstance(obj, str) and obj in _SPECIAL:
        return _SPECIAL[obj]
    return obj


def _dumps(obj, indent=None):
    return json.dumps(_encode(obj), indent=indent, sort_keys=True, allow_nan=False)


def _check_version(meta, path):
    version = meta.get("schema_version")
    if version is None:
        raise SchemaError(f"{path}: missing schema_version")
    try:
        major = int(str(version).split(".")[0])
    except ValueError:
        raise SchemaError(f"{path}: bad schema_version {version!r}") from None
    if major != SCHEMA_VERSION:
        raise SchemaError(f"{path}: unsupported schema_version {version!r} (this reader handles {SCHEMA_VERSION})")


def _read_preamble(f, path):
    """Parse the ``# {json}`` line and the column header; returns (meta, columns, header line number)."""
    first = f.readline()
    if not first.startswith("#"):
        raise SchemaError(f"{path}: missing '# {{json}}' metadata line")
    try:
        meta = _decode(json.loads(first[1:]))
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad metadata JSON: {exc.msg}", line=1) from None
    _check_version(meta, path)
    header = f.readline().rstrip("\n").rstrip("\r")
    columns = tuple(c.strip() for c in header.split(","))
    return meta, columns, 2


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# time tags -------------------------------------------------------------------


def _timetag_meta(stream):
    return {
        "kind": "timetags",
        "schema_version": SCHEMA_VERSION,
        "duration_ps": stream.duration_ps,
        "metadata": stream.metadata,
    }


def _format_rows(ts, ch):
    labels = np.array([CHANNEL_LABELS[0], CHANNEL_LABELS[1], CHANNEL_LABELS[SYNC]])
    rows = np.char.add(np.char.add(labels[ch], ","), ts.astype(str))
    return "\n".join(rows.tolist()) + "\n" if len(rows) else ""


def write_timetags(path, stream, chunk_rows=READ_CHUNK_ROWS):
    """Write a :class:`TimeTagStream` as ``channel,timestamp_ps`` CSV."""
    stream.validate()

    def writer(f):
        f.write("# " + _dumps(_timetag_meta(stream)) + "\n")
        f.write(",".join(TIMETAG_HEADER) + "\n")
        for start in range(0, len(stream), chunk_rows):
            sl = slice(start, start + chunk_rows)
            f.write(_format_rows(stream.timestamps[sl], stream.channels[sl]))

    _atomic_write(path, writer)


class TimeTagWriter:
    """Incremental writer for streams too long to hold in memory."""

    def __init__(self, path, duration_ps, metadata=None):
        self.path = os.fspath(path)
        self.meta = {
            "kind": "timetags",
            "schema_version": SCHEMA_VERSION,
            "duration_ps": int(duration_ps),
            "metadata": metadata or {},
        }
        directory = os.path.dirname(os.path.abspath(self.path))
        os.makedirs(directory, exist_ok=True)
        fd, self._tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(self.path))
        self._f = os.fdopen(fd, "w", encoding="utf-8", newline="\n")
        self._f.write("# " + _dumps(self.meta) + "\n")
        self._f.write(",".join(TIMETAG_HEADER) + "\n")
        self._last = None
        self.rows = 0

    def write(self, timestamps, channels):
        ts = np.asarray(timestamps, np.int64)
        ch = np.asarray(channels, np.int8)
        if len(ts) == 0:
            return
        if (self._last is not None and ts[0] < self._last) or np.any(np.diff(ts) < 0):
            raise DataError("time tags must be written in order")
        self._last = int(ts[-1])
        self._f.write(_format_rows(ts, ch))
        self.rows += len(ts)

    def close(self):
        self._f.close()
        os.chmod(self._tmp, _umask_mode())
        os.replace(self._tmp, self.path)

    def abort(self):
        self._f.close()
        if os.path.exists(self._tmp):
            os.unlink(self._tmp)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        else:
            self.abort()


_CHANNEL_CODES = {"0": 0, "1": 1, "sync": SYNC}


def _parse_rows_slow(lines, first_line):
    ts = np.empty(len(lines), np.int64)
    ch = np.empty(len(lines), np.int8)
    for i, raw in enumerate(lines):
        lineno = first_line + i
        parts = raw.rstrip("\n").rstrip("\r").split(",")
        if len(parts) != 2:
            raise ParseError(f"expected 2 fields, got {len(parts)}", line=lineno)
        label, value = parts[0].strip(), parts[1].strip()
        if label not in _CHANNEL_CODES:
            raise ParseError(f"unknown channel {label!r}", line=lineno)
        try:
            t = int(value)
        except ValueError:
            raise ParseError(f"timestamp {value!r} is not an integer", line=lineno) from None
        if not -(2**63) <= t < 2**63:
            raise ParseError("timestamp does not fit in 64 bits", line=lineno)
        ts[i] = t
        ch[i] = _CHANNEL_CODES[label]
    return ts, ch


def _parse_rows_fast(lines):
    text = "".join(lines).rstrip("\n")
    if "\r" in text or ",," in text or "\n\n" in text or text.startswith(","):
        return None
    flat = text.replace("sync,", "2,").replace("\n", ",")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        try:
            values = np.fromstring(flat, dtype=np.int64, sep=",")
        except (DeprecationWarning, ValueError):
            return None
    if values.size != 2 * len(lines):
        return None
    ch = values[0::2]
    if np.any((ch < 0) | (ch > SYNC)):
        return None
    # a lone channel "2" is not a valid label; only "sync" maps to code 2
    if np.any(ch == SYNC) and text.count("sync,") != int(np.count_nonzero(ch == SYNC)):
        return None
    return values[1::2].copy(), ch.astype(np.int8)


def _open_timetags(path):
    f = open(path, encoding="utf-8", newline="")
    meta, columns, header_line = _read_preamble(f, path)
    if meta.get("kind") != "timetags":
        f.close()
        raise SchemaError(f"{path}: kind is {meta.get('kind')!r}, expected 'timetags'")
    if columns != TIMETAG_HEADER:
        f.close()
        raise SchemaError(f"{path}: header must be {','.join(TIMETAG_HEADER)}, got {','.join(columns)}")
    return f, meta, header_line


def iter_timetags(path, chunk_rows=READ_CHUNK_ROWS):
    """Yield (timestamps, channels) blocks of at most ``chunk_rows`` rows.

    Memory use is bounded by the block size.  Ordering, channel labels and
    integer format are checked; errors name the offending line.
    """
    f, meta, header_line = _open_timetags(path)
    duration = meta.get("duration_ps")
    with f:
        line_no = header_line + 1
        last = None
        while True:
            lines = list(itertools.islice(f, chunk_rows))
            if not lines:
                break
            parsed = _parse_rows_fast(lines)
            if parsed is None:
                parsed = _parse_rows_slow(lines, line_no)
            ts, ch = parsed
            if last is not None and ts[0] < last:
                raise ParseError("timestamp out of order", line=line_no)
            bad = np.flatnonzero(np.diff(ts) < 0)
            if len(bad):
                raise ParseError("timestamp out of order", line=line_no + int(bad[0]) + 1)
            if ts[0] < 0:
                raise ParseError("negative timestamp", line=line_no)
            if duration is not None and ts[-1] > duration:
                idx = int(np.argmax(ts > duration))
                raise ParseError("timestamp beyond the recorded duration", line=line_no + idx)
            last = int(ts[-1])
            line_no += len(lines)
            yield ts, ch


def timetags_metadata(path):
    f, meta, _ = _open_timetags(path)
    f.close()
    return meta


def read_timetags(path):
    meta = timetags_metadata(path)
    chunks = list(iter_timetags(path))
    duration = meta.get("duration_ps")
    if duration is None:
        duration = int(chunks[-1][0][-1]) if chunks else 0
    return TimeTagStream.concatenate(chunks, duration, meta.get("metadata", {}))


# series ----------------------------------------------------------------------


@dataclass
class Series:
    kind: str
    columns: dict
    metadata: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.columns[name]

    def __eq__(self, other):
        if not isinstance(other, Series):
            return NotImplemented
        if self.kind != other.kind or self.metadata != other.metadata or list(self.columns) != list(other.columns):
            return False
        return all(np.array_equal(self.columns[k], other.columns[k], equal_nan=True) for k in self.columns)


def _format_value(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def _check_columns(kind, names):
    if kind not in SERIES_COLUMNS:
        raise SchemaError(f"unknown series kind {kind!r}")
    expected = SERIES_COLUMNS[kind]
    if expected is None:
        if not names or any("_" not in n and n not in ("counts", "g2", "sigma") for n in names):
            raise SchemaError(f"curve columns need unit suffixes: {names}")
        return
    optional = OPTIONAL_COLUMNS.get(kind, ())
    if tuple(names[: len(expected)]) != expected or any(n not in optional for n in names[len(expected):]):
        raise SchemaError(f"{kind} header must be {','.join(expected)} (optional: {','.join(optional) or 'none'}), "
                          f"got {','.join(names)}")


def write_series(path, kind, columns, metadata=None):
    """Write named columns as CSV; ``columns`` is an ordered mapping name -> array."""
    names = list(columns)
    _check_columns(kind, names)
    arrays = [np.asarray(columns[n]) for n in names]
    n = len(arrays[0])
    if any(len(a) != n for a in arrays):
        raise DataError("all columns must have the same length")
    meta = {"kind": kind, "schema_version": SCHEMA_VERSION, "metadata": metadata or {},
            "dtypes": {k: ("int" if np.issubdtype(a.dtype, np.integer) else "float") for k, a in zip(names, arrays)}}

    def writer(f):
        f.write("# " + _dumps(meta) + "\n")
        f.write(",".join(names) + "\n")
        for row in zip(*arrays):
            f.write(",".join(_format_value(v) for v in row) + "\n")

    _atomic_write(path, writer)


def read_series(path, kind=None):
    with open(path, encoding="utf-8", newline="") as f:
        meta, names, header_line = _read_preamble(f, path)
        file_kind = meta.get("kind")
        if kind is not None and file_kind != kind:
            raise SchemaError(f"{path}: kind is {file_kind!r}, expected {kind!r}")
        _check_columns(file_kind, list(names))
        dtypes = meta.get("dtypes", {})
        rows = []
        for i, raw in enumerate(f, start=header_line + 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line:
                raise ParseError("empty row", line=i)
            parts = line.split(",")
            if len(parts) != len(names):
                raise ParseError(f"expected {len(names)} fields, got {len(parts)}", line=i)
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise ParseError(f"non-numeric field in {line!r}", line=i) from None
    data = np.array(rows, dtype=float).reshape(-1, len(names))
    columns = {}
    for j, name in enumerate(names):
        col = data[:, j]
        if dtypes.get(name) == "int":
            col = col.astype(np.int64)
        columns[name] = col
    return Series(file_kind, columns, meta.get("metadata", {}))


def histogram_to_series(hist):
    g = hist.normalized if hist.normalized is not None else np.full(len(hist.counts), np.nan)
    s = hist.sigma if hist.sigma is not None else np.full(len(hist.counts), np.nan)
    meta = {
        "bin_width_ns": hist.bin_width,
        "normalization_mode": hist.normalization_mode,
        "tail_window_ns": list(hist.tail_window) if hist.tail_window is not None else None,
        "histogram": hist.metadata,
    }
    return Series("g2hist", {"tau_ns": hist.tau, "g2": g, "sigma": s, "counts": np.asarray(hist.counts, np.int64)}, meta)


def series_to_histogram(series):
    m = series.metadata
    g, s = series["g2"], series["sigma"]
    normalized = None if np.all(np.isnan(g)) else g
    sigma = None if np.all(np.isnan(s)) else s
    tw = m.get("tail_window_ns")
    return CorrelationHistogram(
        bin_width=m["bin_width_ns"],
        counts=np.asarray(series["counts"], np.int64),
        normalized=normalized,
        sigma=sigma,
        normalization_mode=m.get("normalization_mode", "raw"),
        tail_window=tuple(tw) if tw is not None else None,
        metadata=m.get("histogram", {}),
    )


def write_histogram(path, hist):
    s = histogram_to_series(hist)
    write_series(path, "g2hist", s.columns, s.metadata)


def read_histogram(path):
    return series_to_histogram(read_series(path, "g2hist"))


def write_decay(path, hist):
    write_series(path, "decay", {"delay_ns": hist.t, "counts": np.asarray(hist.counts, np.int64)},
                 {"bin_width_ns": hist.bin_width, "histogram": hist.metadata})


def read_decay(path):
    s = read_series(path, "decay")
    return DecayHistogram(bin_width=s.metadata["bin_width_ns"], counts=np.asarray(s["counts"], np.int64),
                          metadata=s.metadata.get("histogram", {}))


# JSON documents --------------------------------------------------------------


def write_json(path, kind, payload):
    doc = {"kind": kind, "schema_version": SCHEMA_VERSION}
    doc.update(payload)
    _atomic_write(path, lambda f: f.write(_dumps(doc, indent=2) + "\n"))


def read_json(path, kind=None):
    with open(path, encoding="utf-8") as f:
        try:
            doc = _decode(json.load(f))
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad JSON: {exc.msg}", line=exc.lineno) from None
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: top level must be an object")
    _check_version(doc, path)
    if kind is not None and doc.get("kind") != kind:
        raise SchemaError(f"{path}: kind is {doc.get('kind')!r}, expected {kind!r}")
    return doc


def write_model(path, model, name=None, metadata=None):
    write_json(path, "emitter_model", {
        "name": name,
        "parameters": model.as_dict(),
        "units": PARAMETER_UNITS,
        "metadata": metadata or {},
    })


def read_model(path):
    doc = read_json(path, "emitter_model")
    params = doc.get("parameters")
    if not isinstance(params, dict) or set(params) != set(PARAMETER_UNITS):
        raise SchemaError(f"{path}: parameters must be exactly {sorted(PARAMETER_UNITS)}")
    units = doc.get("units", PARAMETER_UNITS)
    if units != PARAMETER_UNITS:
        raise SchemaError(f"{path}: parameter units must be {PARAMETER_UNITS}")
    return EmitterModel(**{k: float(v) for k, v in params.items()})


def write_fit_report(path, result, inputs=None, extra=None):
    """Fit result plus provenance; ``inputs`` maps file paths to their SHA-256."""
    d = result.to_dict()
    payload = {
        "family": result.family,
        "parameters": d["parameters"],
        "standard_errors": d["standard_errors"],
        "units": d["units"],
        "reduced_chi2": d["reduced_chi2"],
        "flags": d["flags"],
        "result": d,
        "provenance": {"inputs": inputs or {}},
    }
    payload["provenance"].update(extra or {})
    write_json(path, "fit_report", payload)


def read_fit_report(path):
    doc = read_json(path, "fit_report")
    for key in ("family", "parameters", "standard_errors", "reduced_chi2", "provenance", "result"):
        if key not in doc:
            raise SchemaError(f"{path}: fit report lacks {key!r}")
    return FitResult.from_dict(doc["result"]), doc["provenance"]

