"""Command-line pipelines: simulate, correlate, fit, report and synth.

Every subcommand writes into one output directory (``--out`` or the
``EMITTERKIT_OUT`` environment variable) and finishes by writing
``manifest.json``, which records the flags, input and output hashes, the
seed and the tool version.  Apart from the manifest's timestamp all outputs
are deterministic.

Exit codes: 0 success, 1 usage or configuration error, 2 data or parse
error, 3 a fit did not converge (its report is still written).
"""
from __future__ import annotations

import argparse
import csv
import datetime
import io as _stdio
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import io
from .correlate import (
    Correlator,
    DecayAccumulator,
    background_correct,
    normalize,
    pulsed_correlator,
    pulsed_g2_from_counts,
)
from .errors import ConfigError, DataError, ModelDomainError
from .fitting import (
    PowerSeries,
    fit_g2_global,
    fit_g2_single,
    fit_lifetime,
    fit_polarization,
    fit_saturation,
    fit_spectrum,
)
from .fitting.curves import curve_table, data_table
from .presets import (
    DEFAULT_DETECTION_EFFICIENCY,
    EMITTERS,
    ENSEMBLE_MEANS,
    POLARIZATION_VISIBILITY,
    SATURATION,
    SPECTRUM,
)
from .rates import g2_parameters_at_power
from .simulate import CW, SAMPLERS, Pulsed, SimConfig, background_for_purity, iter_chunks, run_metadata
from .synthetic import decay_counts, draw_ensemble, polarization_rates, saturation_rates, spectrum_counts

OUT_ENV = "EMITTERKIT_OUT"
MANIFEST = "manifest.json"
CURVE_POINTS = 500
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NOT_CONVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _warn(msg):
    print(f"warning: {msg}", file=sys.stderr)


# run bookkeeping -------------------------------------------------------------


class Run:
    """Output directory plus the record that becomes its manifest."""

    def __init__(self, args, argv):
        out = args.out or os.environ.get(OUT_ENV)
        if not out:
            raise UsageError(f"no output directory: pass --out or set {OUT_ENV}")
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.args = args
        self.argv = list(argv)
        self.inputs = {}
        self.outputs = []

    def add_input(self, path):
        path = str(path)
        if not os.path.isfile(path):
            raise FileNotFoundError(f"input file not found: {path}")
        self.inputs[path] = io.sha256_file(path)
        return path

    def path(self, name):
        self.outputs.append(name)
        return self.out / name

    def provenance(self):
        """Deterministic part of the manifest; also embedded in fit reports."""
        flags = {k: v for k, v in sorted(vars(self.args).items()) if k != "func"}
        return {
            "subcommand": self.args.command,
            "flags": flags,
            "argv": self.argv,
            "inputs": dict(self.inputs),
            "seed": getattr(self.args, "seed", None),
            "tool": "emitterkit",
            "tool_version": __version__,
        }

    def write_manifest(self, status, extra=None):
        payload = self.provenance()
        payload["outputs"] = {n: io.sha256_file(self.out / n) for n in sorted(set(self.outputs))}
        payload["status"] = status
        payload["timestamp"] = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
        payload.update(extra or {})
        io.write_json(self.out / MANIFEST, "manifest", payload)


# simulate --------------------------------------------------------------------


def _load_model(source):
    if source in EMITTERS:
        return EMITTERS[source], source
    if not os.path.isfile(source):
        raise FileNotFoundError(f"model file not found: {source} (presets: {', '.join(EMITTERS)})")
    return io.read_model(source), None


def cmd_simulate(args, run):
    model, preset = _load_model(args.model)
    if preset is None:
        run.add_input(args.model)
    if args.mode == "pulsed":
        if args.rep_rate_MHz is not None and args.period_ns is not None:
            raise UsageError("give either --rep-rate-MHz or --period-ns")
        period = args.period_ns if args.period_ns is not None else 1e3 / (args.rep_rate_MHz or 10.0)
        mode = Pulsed(period, args.excitation_probability)
    else:
        mode = CW()
    config = SimConfig(
        model=model,
        power=args.power_mW,
        duration=args.duration_s * 1e9,
        detection_efficiency=args.efficiency,
        background_rate=args.background_Hz * 1e-9,
        splitter_ratio=args.splitter_ratio,
        rng_seed=args.seed,
        mode=mode,
        sampler=args.sampler,
    )
    if args.purity is not None:
        if args.background_Hz:
            raise UsageError("give either --background-Hz or --purity")
        bg = background_for_purity(config, args.purity)
        config = SimConfig(**{**config.__dict__, "background_rate": bg})
    if config.detection_efficiency == 0.0:
        _warn("detection efficiency is 0; the tag file holds no detections")
    meta = run_metadata(config)
    if preset is not None:
        meta["preset"] = preset
    counts = np.zeros(3, np.int64)
    with io.TimeTagWriter(run.path("timetags.csv"), config.duration_ps, meta) as w:
        for ts, ch in iter_chunks(config):
            w.write(ts, ch)
            counts += np.bincount(ch, minlength=3)[:3]
    status = "ok" if config.detection_efficiency > 0 else "ok-empty"
    run.write_manifest(status, {"events": {"ch0": int(counts[0]), "ch1": int(counts[1]), "sync": int(counts[2])}})
    return EXIT_OK


# correlate -------------------------------------------------------------------


def _stream_config(meta):
    cfg = meta.get("metadata", {}).get("config")
    if cfg is None:
        return None
    try:
        return SimConfig.from_dict(cfg)
    except (TypeError, KeyError, ConfigError):
        return None


def cmd_correlate(args, run):
    path = run.add_input(args.inp)
    meta = io.timetags_metadata(path)
    source = meta.get("metadata", {})
    config = _stream_config(meta)
    duration_ps = meta.get("duration_ps")
    if duration_ps is None:
        raise DataError(f"{path}: no duration_ps in the header")

    period = args.period_ns
    if args.what in ("pulsed", "decay") and period is None:
        if config is None or not isinstance(config.mode, Pulsed):
            raise UsageError("--period-ns is required for streams without a pulsed simulation config")
        period = config.mode.period

    if args.what == "g2":
        max_delay = args.max_delay_ns
        if max_delay is None:
            if config is None:
                raise UsageError("--max-delay-ns is required for streams without a simulation config")
            tau2 = g2_parameters_at_power(config.model, config.power).tau2
            if not math.isfinite(tau2):
                raise UsageError("expected tau2 is unbounded; pass --max-delay-ns")
            max_delay = 20.0 * tau2
        # whole number of bins
        max_delay = max(10, math.ceil(max_delay / args.bin_ns - 1e-9)) * args.bin_ns
        acc = Correlator(args.bin_ns, max_delay)
    elif args.what == "pulsed":
        acc = pulsed_correlator(period, args.side_peaks)
        if 2 * args.side_peaks * period > duration_ps / 1e3:
            raise DataError("stream too short for the requested side peaks")
    else:
        acc = DecayAccumulator(period, args.decay_bin_ns)

    for ts, ch in io.iter_timetags(path):
        acc.add(ts, ch)

    extra = {}
    if args.what == "g2":
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            hist = acc.histogram(duration_ps, {"source": source})
        for w in caught:
            _warn(str(w.message))
        if args.normalize != "none":
            tw = tuple(args.tail_window_ns) if args.tail_window_ns else None
            hist = normalize(hist, args.normalize, tw)
        if args.purity is not None:
            hist = background_correct(hist, args.purity)
        io.write_histogram(run.path("g2hist.csv"), hist)
        extra = {"max_delay_ns": max_delay, "n_start": acc.n_start, "n_stop": acc.n_stop}
    elif args.what == "pulsed":
        res = pulsed_g2_from_counts(acc.counts)
        io.write_json(run.path("pulsed_g2.json"), "pulsed_g2", {
            "g2_zero": res.value,
            "g2_zero_err": res.sigma,
            "central_counts": res.central_counts,
            "side_mean": res.side_mean,
            "side_peaks": res.side_peaks,
            "side_counts": res.side_counts,
            "period_ns": period,
            "source": source,
        })
        extra = {"g2_zero": res.value}
    else:
        io.write_decay(run.path("decay.csv"), acc.histogram({"source": source}))
    run.write_manifest("ok", extra)
    return EXIT_OK


# fit -------------------------------------------------------------------------


def _series_sigma(series, name):
    return series.columns.get(name)


def _fit_one(family, path, args):
    if family == "g2":
        return fit_g2_single(io.read_histogram(path))
    if family == "spectrum":
        s = io.read_series(path, "spectrum")
        return fit_spectrum(s["wavelength_nm"], s["counts"], n_psb_peaks=args.psb_peaks,
                            sigma=_series_sigma(s, "sigma"))
    if family == "lifetime":
        return fit_lifetime(io.read_decay(path))
    if family == "saturation":
        s = io.read_series(path, "saturation")
        return fit_saturation(s["power_mW"], s["rate_Hz"], sigma=_series_sigma(s, "sigma_Hz"),
                              background=args.background)
    if family == "polarization":
        s = io.read_series(path, "polarization")
        return fit_polarization(s["angle_deg"], s["rate_Hz"], sigma=_series_sigma(s, "sigma_Hz"))
    raise UsageError(f"unknown family {family}")


def _histogram_power(hist, path):
    cfg = hist.metadata.get("source", {}).get("config")
    if cfg is None or "power" not in cfg:
        raise UsageError(f"{path}: no excitation power recorded; pass --powers-mW")
    return float(cfg["power"])


def _fit_global(paths, args, run):
    hists = [io.read_histogram(p) for p in paths]
    if args.powers_mW is not None:
        if len(args.powers_mW) != len(paths):
            raise UsageError("--powers-mW needs one value per input file")
        powers = args.powers_mW
    else:
        powers = [_histogram_power(h, p) for h, p in zip(hists, paths)]
    initial = None
    if args.init is not None:
        initial = io.read_model(run.add_input(args.init))
    return fit_g2_global(PowerSeries(list(zip(powers, hists))), initial=initial)


def _write_fit(run, name, result):
    io.write_fit_report(run.path(f"{name}.json"), result, inputs=dict(run.inputs), extra=_report_provenance(run))
    io.write_series(run.path(f"{name}_curve.csv"), "curve", curve_table(result, CURVE_POINTS),
                    {"family": result.family})


def _report_provenance(run):
    # the output location is not part of a fit's identity
    p = run.provenance()
    for key in ("inputs", "argv"):
        p.pop(key)
    p["flags"].pop("out")
    return p


def cmd_fit(args, run):
    paths = [run.add_input(p) for p in args.inp]
    results = []
    if args.family == "g2-global":
        results.append(("fit_report", _fit_global(paths, args, run)))
    else:
        if args.init is not None:
            raise UsageError("--init applies to g2-global only")
        for p in paths:
            name = "fit_report" if len(paths) == 1 else f"fit_report_{Path(p).stem}"
            results.append((name, _fit_one(args.family, p, args)))
    names = [n for n, _ in results]
    if len(set(names)) != len(names):
        raise UsageError("input files must have distinct names")
    for name, res in results:
        _write_fit(run, name, res)
        for flag in res.flags:
            _warn(f"{name}: {flag}")
    converged = all(r.converged for _, r in results)
    run.write_manifest("ok" if converged else "not-converged",
                       {"fits": {n: {"family": r.family, "converged": r.converged, "flags": r.flags} for n, r in results}})
    return EXIT_OK if converged else EXIT_NOT_CONVERGED


# report ----------------------------------------------------------------------

ENSEMBLE_KEYS = (("zpl_center_nm", "nm"), ("zpl_fwhm_nm", "nm"), ("huang_rhys", "1"))


def _summary_rows(reports):
    params = []
    for _, res in reports:
        for k in res.parameters:
            if (k, res.units.get(k, "")) not in params:
                params.append((k, res.units.get(k, "")))
    derived = []
    for _, res in reports:
        for k, v in res.derived.items():
            if isinstance(v, (int, float)) and not isinstance(v, bool) and k not in derived:
                derived.append(k)
    header = ["report", "family", "converged", "reduced_chi2", "flags"]
    for k, u in params:
        header += [f"{k} [{u}]", f"{k}_err [{u}]"] if u else [k, f"{k}_err"]
    header += derived
    rows = []
    for name, res in reports:
        row = [name, res.family, str(res.converged), repr(float(res.reduced_chi2)), ";".join(res.flags)]
        for k, _ in params:
            if k in res.parameters:
                row += [repr(float(res.parameters[k])), repr(float(res.standard_errors[k]))]
            else:
                row += ["", ""]
        row += [repr(float(res.derived[k])) if k in res.derived else "" for k in derived]
        rows.append(row)
    return header, rows


def _write_csv(path, header, rows):
    buf = _stdio.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    io._atomic_write(path, lambda f: f.write(buf.getvalue()))


def ensemble_summary(results):
    """Mean, spread and standard error of ZPL centre, width and S across spectrum fits."""
    out = {"n": len(results)}
    for key, unit in ENSEMBLE_KEYS:
        v = np.array([r.derived[key] for r in results], float)
        std = float(v.std(ddof=1)) if len(v) > 1 else math.nan
        out[key] = {"mean": float(v.mean()), "std": std, "sem": std / math.sqrt(len(v)), "unit": unit,
                    "values": v.tolist()}
    return out


def _histogram_columns(values, unit):
    n_bins = max(3, int(math.ceil(math.sqrt(len(values)))))
    counts, edges = np.histogram(values, bins=n_bins)
    suffix = "" if unit == "1" else f"_{unit}"
    return {f"bin_lo{suffix}": edges[:-1], f"bin_hi{suffix}": edges[1:], "counts": counts.astype(np.int64)}


def _unique_names(paths):
    """File stems, qualified by parent directory and then by position where they clash."""
    names = [Path(p).stem for p in paths]
    if len(set(names)) < len(names):
        names = [f"{Path(p).parent.name}_{Path(p).stem}" for p in paths]
    if len(set(names)) < len(names):
        names = [f"{i:03d}_{n}" for i, n in enumerate(names)]
    return names


def cmd_report(args, run):
    paths = [run.add_input(p) for p in args.inp]
    reports = [(name, io.read_fit_report(p)[0]) for name, p in zip(_unique_names(paths), paths)]
    for name, res in reports:
        curve = curve_table(res, CURVE_POINTS)
        data = data_table(res)
        io.write_series(run.path(f"{name}_curve.csv"), "curve", curve, {"family": res.family, "role": "model"})
        io.write_series(run.path(f"{name}_data.csv"), "curve", data, {"family": res.family, "role": "data"})
        if args.svg:
            svg = render_svg(curve, data, f"{res.family}: {name}")
            io._atomic_write(run.path(f"{name}.svg"), lambda f, s=svg: f.write(s))
    header, rows = _summary_rows(reports)
    _write_csv(run.path("summary.csv"), header, rows)
    extra = {"reports": len(reports)}
    spectra = [r for _, r in reports if r.family == "Spectrum"]
    if len(spectra) >= 2:
        summary = ensemble_summary(spectra)
        io.write_json(run.path("ensemble.json"), "ensemble_summary", summary)
        for key, unit in ENSEMBLE_KEYS:
            io.write_series(run.path(f"ensemble_hist_{key}.csv"), "curve",
                            _histogram_columns(summary[key]["values"], unit), {"quantity": key})
        extra["ensemble"] = {k: summary[k]["mean"] for k, _ in ENSEMBLE_KEYS}
    run.write_manifest("ok", extra)
    return EXIT_OK


# minimal SVG line plot -------------------------------------------------------

_SVG_W, _SVG_H, _PAD = 640, 420, 60
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _scale(lo, hi, a, b):
    span = hi - lo if hi > lo else 1.0
    return lambda v: a + (np.asarray(v, float) - lo) / span * (b - a)


def render_svg(curve, data, title):
    """Data points and model curves on linear axes as an SVG string."""
    xname = next(iter(curve))
    ycols = [k for k in curve if k != xname]
    dx = np.asarray(data[xname], float)
    dy_name = next(k for k in data if k not in (xname, "power_mW") and not k.startswith(("model_", "residual_", "sigma")))
    dy = np.asarray(data[dy_name], float)
    ys = np.concatenate([dy] + [np.asarray(curve[k], float) for k in ycols])
    ys = ys[np.isfinite(ys)]
    x0, x1 = float(np.min(curve[xname])), float(np.max(curve[xname]))
    y0, y1 = float(ys.min()), float(ys.max())
    y0, y1 = y0 - 0.05 * (y1 - y0), y1 + 0.05 * (y1 - y0)
    sx = _scale(x0, x1, _PAD, _SVG_W - 20)
    sy = _scale(y0, y1, _SVG_H - _PAD, 30)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{_SVG_W}" height="{_SVG_H}" fill="white"/>',
        f'<text x="{_SVG_W / 2}" y="18" text-anchor="middle">{title}</text>',
        f'<line x1="{_PAD}" y1="{_SVG_H - _PAD}" x2="{_SVG_W - 20}" y2="{_SVG_H - _PAD}" stroke="black"/>',
        f'<line x1="{_PAD}" y1="{_SVG_H - _PAD}" x2="{_PAD}" y2="30" stroke="black"/>',
        f'<text x="{_SVG_W / 2}" y="{_SVG_H - 15}" text-anchor="middle">{xname}</text>',
        f'<text x="15" y="{_SVG_H / 2}" text-anchor="middle" transform="rotate(-90 15 {_SVG_H / 2})">{dy_name}</text>',
    ]
    for v in np.linspace(x0, x1, 5):
        parts.append(f'<text x="{float(sx(v)):.1f}" y="{_SVG_H - _PAD + 16}" text-anchor="middle">{v:.4g}</text>')
    for v in np.linspace(y0, y1, 5):
        parts.append(f'<text x="{_PAD - 4}" y="{float(sy(v)) + 4:.1f}" text-anchor="end">{v:.4g}</text>')
    keep = np.isfinite(dx) & np.isfinite(dy)
    step = max(1, int(keep.sum()) // 2000)
    for xv, yv in zip(sx(dx[keep])[::step], sy(dy[keep])[::step]):
        parts.append(f'<circle cx="{xv:.1f}" cy="{yv:.1f}" r="1.5" fill="#555"/>')
    for i, k in enumerate(ycols):
        y = np.asarray(curve[k], float)
        ok = np.isfinite(y)
        pts = " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(sx(np.asarray(curve[xname])[ok]), sy(y[ok])))
        color = _COLORS[i % len(_COLORS)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{_SVG_W - 25}" y="{40 + 14 * i}" text-anchor="end" fill="{color}">{k}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# synth -----------------------------------------------------------------------


def cmd_synth(args, run):
    rng = np.random.default_rng(args.seed)
    preset = args.preset
    if args.kind == "spectrum":
        c, w, s = SPECTRUM[preset]
        c = args.center_nm if args.center_nm is not None else c
        w = args.fwhm_nm if args.fwhm_nm is not None else w
        s = args.huang_rhys if args.huang_rhys is not None else s
        wl, counts = spectrum_counts(c, w, s, rng=rng)
        io.write_series(run.path("spectrum.csv"), "spectrum", {"wavelength_nm": wl, "counts": counts},
                        {"center_nm": c, "fwhm_nm": w, "huang_rhys": s})
    elif args.kind == "ensemble":
        for i, (c, w, s) in enumerate(draw_ensemble(args.n_emitters, rng)):
            wl, counts = spectrum_counts(c, w, s, rng=rng)
            io.write_series(run.path(f"spectrum_{i:03d}.csv"), "spectrum", {"wavelength_nm": wl, "counts": counts},
                            {"center_nm": c, "fwhm_nm": w, "huang_rhys": s, "ensemble_means": list(ENSEMBLE_MEANS)})
    elif args.kind == "saturation":
        I_inf, P_sat = SATURATION[preset]
        I_inf = args.I_inf_Hz if args.I_inf_Hz is not None else I_inf
        P_sat = args.P_sat_mW if args.P_sat_mW is not None else P_sat
        P, rate = saturation_rates(I_inf, P_sat, rel_noise=args.rel_noise, rng=rng)
        cols = {"power_mW": P, "rate_Hz": rate}
        if args.rel_noise > 0:
            cols["sigma_Hz"] = args.rel_noise * saturation_rates(I_inf, P_sat)[1]
        io.write_series(run.path("saturation.csv"), "saturation", cols, {"I_inf_Hz": I_inf, "P_sat_mW": P_sat})
    elif args.kind == "polarization":
        V = args.visibility if args.visibility is not None else POLARIZATION_VISIBILITY
        ang, rate = polarization_rates(V, args.phi_deg, args.I_max_Hz, dwell=args.dwell_s, rng=rng)
        sigma = np.sqrt(np.maximum(rate * args.dwell_s, 1.0)) / args.dwell_s
        io.write_series(run.path("polarization.csv"), "polarization",
                        {"angle_deg": ang, "rate_Hz": rate, "sigma_Hz": sigma}, {"visibility": V, "phi_deg": args.phi_deg})
    else:
        if args.tau_ns is None:
            raise UsageError("--tau-ns is required for --kind decay")
        t, counts = decay_counts(args.tau_ns, rng=rng)
        width = float(t[1] - t[0])
        io.write_series(run.path("decay.csv"), "decay", {"delay_ns": t + width / 2, "counts": counts.astype(np.int64)},
                        {"bin_width_ns": width, "histogram": {"tau_ns": args.tau_ns}})
    run.write_manifest("ok")
    return EXIT_OK


# parser ----------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="emitterkit", description="Three-level emitter simulation, correlation and fitting.")
    p.add_argument("--version", action="version", version=f"emitterkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def out_arg(sp):
        sp.add_argument("--out", help=f"output directory (default: ${OUT_ENV})")

    s = sub.add_parser("simulate", help="simulate a time-tag stream")
    s.add_argument("--model", required=True, help=f"model JSON file or preset ({', '.join(EMITTERS)})")
    s.add_argument("--power-mW", "--power", dest="power_mW", type=float, required=True)
    s.add_argument("--duration-s", "--duration", dest="duration_s", type=float, required=True)
    s.add_argument("--mode", choices=("cw", "pulsed"), default="cw")
    s.add_argument("--rep-rate-MHz", dest="rep_rate_MHz", type=float, help="pulsed repetition rate (default 10)")
    s.add_argument("--period-ns", dest="period_ns", type=float)
    s.add_argument("--excitation-probability", type=float, default=1.0)
    s.add_argument("--efficiency", type=float, default=DEFAULT_DETECTION_EFFICIENCY, help="detection efficiency")
    s.add_argument("--background-Hz", dest="background_Hz", type=float, default=0.0, help="background per channel")
    s.add_argument("--purity", type=float, help="set background so the signal fraction is this value")
    s.add_argument("--splitter-ratio", type=float, default=0.5)
    s.add_argument("--sampler", choices=SAMPLERS, default="renewal")
    s.add_argument("--seed", type=int, default=0)
    out_arg(s)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("correlate", help="histogram a time-tag file")
    c.add_argument("--in", dest="inp", required=True, help="time-tag CSV")
    c.add_argument("--what", choices=("g2", "pulsed", "decay"), default="g2")
    c.add_argument("--bin-ns", "--bin", dest="bin_ns", type=float, default=1.0)
    c.add_argument("--max-delay-ns", "--max-delay", dest="max_delay_ns", type=float,
                   help="default: 20 x expected tau2 from the stream's simulation config")
    c.add_argument("--normalize", choices=("tail", "rate", "none"), default="tail")
    c.add_argument("--tail-window-ns", nargs=2, type=float, metavar=("LO", "HI"))
    c.add_argument("--purity", type=float, help="apply background correction with this signal fraction")
    c.add_argument("--period-ns", dest="period_ns", type=float, help="pulse period for --what pulsed|decay")
    c.add_argument("--side-peaks", type=int, default=10)
    c.add_argument("--decay-bin-ns", type=float, default=0.1)
    out_arg(c)
    c.set_defaults(func=cmd_correlate)

    f = sub.add_parser("fit", help="fit a model family")
    f.add_argument("--family", required=True,
                   choices=("g2", "g2-global", "spectrum", "lifetime", "saturation", "polarization"))
    f.add_argument("--in", dest="inp", nargs="+", required=True)
    f.add_argument("--init", help="emitter model JSON used as the g2-global starting point")
    f.add_argument("--psb-peaks", type=int, default=1)
    f.add_argument("--background", action="store_true", help="add a linear background to saturation fits")
    f.add_argument("--powers-mW", dest="powers_mW", nargs="+", type=float,
                   help="excitation powers for g2-global when the histograms do not record them")
    out_arg(f)
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("report", help="curve CSVs, summary tables and SVG plots from fit reports")
    r.add_argument("--in", dest="inp", nargs="+", required=True)
    r.add_argument("--svg", action="store_true")
    out_arg(r)
    r.set_defaults(func=cmd_report)

    y = sub.add_parser("synth", help="write synthetic spectra, saturation, polarization or decay data")
    y.add_argument("--kind", required=True, choices=("spectrum", "ensemble", "saturation", "polarization", "decay"))
    y.add_argument("--preset", choices=tuple(EMITTERS), default="GeV1")
    y.add_argument("--center-nm", type=float)
    y.add_argument("--fwhm-nm", type=float)
    y.add_argument("--huang-rhys", type=float)
    y.add_argument("--n-emitters", type=int, default=20)
    y.add_argument("--I-inf-Hz", dest="I_inf_Hz", type=float)
    y.add_argument("--P-sat-mW", dest="P_sat_mW", type=float)
    y.add_argument("--rel-noise", type=float, default=0.01)
    y.add_argument("--visibility", type=float)
    y.add_argument("--phi-deg", type=float, default=30.0)
    y.add_argument("--I-max-Hz", dest="I_max_Hz", type=float, default=1e5)
    y.add_argument("--dwell-s", type=float, default=1.0)
    y.add_argument("--tau-ns", type=float)
    y.add_argument("--seed", type=int, default=0)
    out_arg(y)
    y.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    try:
        run = Run(args, argv)
        return args.func(args, run)
    except (UsageError, ConfigError) as exc:
        print(f"emitterkit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ModelDomainError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"emitterkit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
