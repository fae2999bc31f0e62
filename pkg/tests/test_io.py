import json
import math
import tracemalloc

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from emitterkit import io
from emitterkit.correlate import CorrelationHistogram, correlate, decay_histogram, normalize
from emitterkit.errors import ParseError, SchemaError
from emitterkit.fitting import fit_saturation
from emitterkit.presets import GEV1, GEV2
from emitterkit.rates import EmitterModel
from emitterkit.simulate import Pulsed, SimConfig, simulate
from emitterkit.synthetic import saturation_rates
from emitterkit.timetags import TimeTagStream


def test_simulated_stream_roundtrip(tmp_path):
    s = simulate(SimConfig(GEV1, 1.0, 1e7, detection_efficiency=0.5, background_rate=1e-4,
                           mode=Pulsed(100.0), rng_seed=3))
    p = tmp_path / "tags.csv"
    io.write_timetags(p, s)
    assert io.read_timetags(p) == s
    text = p.read_text()
    assert text.splitlines()[1] == "channel,timestamp_ps"
    assert "\nsync," in text


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(
    ts=st.lists(st.integers(0, 2**62), max_size=60),
    chans=st.lists(st.sampled_from([0, 1, 2]), min_size=60, max_size=60),
    meta=st.dictionaries(st.text(max_size=5), st.one_of(st.integers(-5, 5), st.text(max_size=5), st.booleans()), max_size=3),
)
def test_random_stream_roundtrip(tmp_path, ts, chans, meta):
    ts = np.sort(np.array(ts, dtype=np.int64))
    s = TimeTagStream(ts, np.array(chans[: len(ts)], np.int8), int(ts[-1]) if len(ts) else 0, meta)
    p = tmp_path / "r.csv"
    io.write_timetags(p, s)
    assert io.read_timetags(p) == s


def _write_raw(path, rows, meta=None):
    meta = meta or {"kind": "timetags", "schema_version": 1}
    path.write_text("# " + json.dumps(meta) + "\nchannel,timestamp_ps\n" + "".join(r + "\n" for r in rows))


@pytest.mark.parametrize("rows,line", [
    (["0,10", "1,20", "0,15"], 5),
    (["0,10", "x,20"], 4),
    (["0,10", "1,2.5"], 4),
    (["0,10", "1"], 4),
    (["0,10", "2,30"], 4),
    (["0,10", "", "1,30"], 4),
])
def test_malformed_rows_name_line(tmp_path, rows, line):
    p = tmp_path / "bad.csv"
    _write_raw(p, rows)
    with pytest.raises(ParseError, match=f"line {line}"):
        io.read_timetags(p)


def test_out_of_order_across_chunks(tmp_path):
    p = tmp_path / "bad.csv"
    _write_raw(p, ["0,10", "1,20", "0,30", "1,25"])
    with pytest.raises(ParseError, match="line 6"):
        list(io.iter_timetags(p, chunk_rows=3))


def test_schema_version_checks(tmp_path):
    p = tmp_path / "v.csv"
    _write_raw(p, ["0,1"], {"kind": "timetags", "schema_version": 2})
    with pytest.raises(SchemaError):
        io.read_timetags(p)
    _write_raw(p, ["0,1"], {"kind": "timetags"})
    with pytest.raises(SchemaError):
        io.read_timetags(p)
    p.write_text("channel,timestamp_ps\n0,1\n")
    with pytest.raises(SchemaError):
        io.read_timetags(p)


@pytest.mark.slow
def test_large_file_streams_with_bounded_memory(tmp_path):
    n = 10**7
    p = tmp_path / "big.csv"
    with io.TimeTagWriter(p, 10**12) as w:
        for start in range(0, n, 10**6):
            ts = np.arange(start, start + 10**6, dtype=np.int64) * 10**4
            w.write(ts, (ts // 10**4) % 2)
    tracemalloc.start()
    count = 0
    for ts, ch in io.iter_timetags(p):
        count += len(ts)
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert count == n
    # loading all rows at once would need well over 1 GB of Python objects
    assert peak < 400 * 2**20


def test_model_roundtrip_exact(tmp_path):
    p = tmp_path / "gev1.json"
    io.write_model(p, GEV1, name="GeV1")
    assert io.read_model(p) == GEV1
    doc = json.loads(p.read_text())
    assert doc["kind"] == "emitter_model" and doc["schema_version"] == 1
    assert doc["parameters"]["A1"] == 0.0051


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.lists(st.floats(1e-12, 1e6), min_size=6, max_size=6))
def test_random_model_roundtrip(tmp_path, vals):
    m = EmitterModel(*vals)
    p = tmp_path / "m.json"
    io.write_model(p, m)
    assert io.read_model(p) == m


def test_model_schema_errors(tmp_path):
    p = tmp_path / "m.json"
    io.write_json(p, "emitter_model", {"parameters": {"K": 1.0}})
    with pytest.raises(SchemaError):
        io.read_model(p)
    io.write_json(p, "fit_report", {})
    with pytest.raises(SchemaError):
        io.read_model(p)


@pytest.mark.parametrize("kind,cols", [
    ("spectrum", {"wavelength_nm": np.linspace(590, 620, 31), "counts": np.arange(31.0)}),
    ("saturation", {"power_mW": np.array([0.1, 0.5, 1.0]), "rate_Hz": np.array([1e5, 3e5, 5.5e5])}),
    ("polarization", {"angle_deg": np.arange(0, 360, 30.0), "rate_Hz": np.ones(12) / 3}),
    ("decay", {"delay_ns": np.arange(5) + 0.25, "counts": np.array([5, 4, 3, 2, 1])}),
])
def test_series_roundtrip(tmp_path, kind, cols):
    p = tmp_path / f"{kind}.csv"
    io.write_series(p, kind, cols, {"note": "x"})
    back = io.read_series(p, kind)
    assert back == io.Series(kind, cols, {"note": "x"})


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.lists(st.floats(allow_nan=True, allow_infinity=True), min_size=1, max_size=30))
def test_series_float_roundtrip_exact(tmp_path, values):
    v = np.array(values, float)
    p = tmp_path / "s.csv"
    io.write_series(p, "saturation", {"power_mW": v, "rate_Hz": v[::-1]})
    back = io.read_series(p)
    assert np.array_equal(back["power_mW"], v, equal_nan=True)
    assert np.array_equal(back["rate_Hz"], v[::-1], equal_nan=True)


def test_missing_unit_suffix_is_schema_error(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text('# {"kind": "g2hist", "schema_version": 1}\ntau,g2,sigma,counts\n0,1,1,1\n')
    with pytest.raises(SchemaError):
        io.read_series(p)
    with pytest.raises(SchemaError):
        io.write_series(p, "saturation", {"power": [1.0], "rate_Hz": [1.0]})


def test_series_parse_error_line(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text('# {"kind": "saturation", "schema_version": 1}\npower_mW,rate_Hz\n1,2\n3,abc\n')
    with pytest.raises(ParseError, match="line 4"):
        io.read_series(p)


def test_histogram_roundtrip(tmp_path):
    s = simulate(SimConfig(GEV2, 4.0, 1e8, detection_efficiency=0.3, rng_seed=1))
    raw = correlate(s, 1.0, 200.0)
    for h in (raw, normalize(raw, "tail"), normalize(raw, "rate")):
        p = tmp_path / "h.csv"
        io.write_histogram(p, h)
        assert io.read_histogram(p) == h
    assert p.read_text().splitlines()[1] == "tau_ns,g2,sigma,counts"


def test_decay_roundtrip(tmp_path):
    s = simulate(SimConfig(GEV1, 1.0, 1e7, detection_efficiency=0.5, mode=Pulsed(100.0)))
    d = decay_histogram(s, 100.0, 0.5)
    p = tmp_path / "d.csv"
    io.write_decay(p, d)
    assert io.read_decay(p) == d


def test_fit_report_schema(tmp_path):
    res = fit_saturation(*saturation_rates(1.5e6, 0.56))
    src = tmp_path / "sat.csv"
    io.write_series(src, "saturation", {"power_mW": [1.0], "rate_Hz": [2.0]})
    p = tmp_path / "report.json"
    io.write_fit_report(p, res, inputs={str(src): io.sha256_file(src)})
    doc = json.loads(p.read_text())
    for key in ("family", "parameters", "standard_errors", "reduced_chi2", "provenance", "schema_version"):
        assert key in doc
    assert doc["family"] == "Saturation"
    back, prov = io.read_fit_report(p)
    assert back.parameters == res.parameters
    assert prov["inputs"][str(src)] == io.sha256_file(src)


def test_non_finite_values_survive_json(tmp_path):
    p = tmp_path / "x.json"
    io.write_json(p, "manifest", {"values": [math.inf, -math.inf, 1.5]})
    text = p.read_text()
    assert "Infinity" in text
    json.loads(text)  # strict JSON
    assert io.read_json(p)["values"][:2] == [math.inf, -math.inf]


def test_output_is_byte_stable(tmp_path):
    h = CorrelationHistogram(0.5, np.arange(21), normalized=np.linspace(0, 2, 21), sigma=np.full(21, 0.1),
                             normalization_mode="tail", tail_window=(3.75, 5.0))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    io.write_histogram(a, h)
    io.write_histogram(b, h)
    assert a.read_bytes() == b.read_bytes()
    assert b"\r" not in a.read_bytes()
