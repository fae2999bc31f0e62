"""Fits of normalized g2 histograms: one power at a time or all powers at once."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DataError, ModelDomainError
from ..rates import (
    PARAMETER_UNITS,
    EmitterModel,
    g2_curve_binned,
    raw_g2_parameters,
    rates_at_power,
    zero_power_lifetime,
)
from .engine import propagate, reweighted_least_squares, scaled_variance

G2_NAMES = ("a", "tau1", "tau2")
MODEL_NAMES = ("K", "k21", "k23", "A1", "B1", "C1")


def _histogram_data(hist):
    if hist.normalized is None or hist.sigma is None:
        raise DataError("g2 fits need a normalized histogram")
    return hist.bin_edges, np.asarray(hist.normalized, float), np.asarray(hist.sigma, float)


def _initial_g2(tau, g):
    """Rough (a, tau1, tau2) read off a normalized curve."""
    pos = tau >= 0
    t, y = tau[pos], g[pos]
    if len(t) > 20:
        k = max(len(t) // 100, 1)
        y = np.convolve(y, np.ones(2 * k + 1) / (2 * k + 1), mode="same")
    peak = int(np.argmax(y[: max(len(y) * 3 // 4, 1)]))
    a = max(y[peak] - 1.0, 0.05)
    rise = np.flatnonzero(y >= (1 - math.exp(-1)) * (1 + a))
    tau1 = t[rise[0]] if len(rise) and t[rise[0]] > 0 else max(t[1] if len(t) > 1 else 1.0, 1e-3)
    tail = np.flatnonzero((t > t[peak]) & (y - 1 <= a / math.e))
    tau2 = t[tail[0]] - t[peak] if len(tail) else 10 * tau1
    tau2 = max(tau2, 3 * tau1)
    return a, tau1, tau2


def _g2_fn(x, theta):
    return g2_curve_binned(theta[0], theta[1], theta[2], x)


def fit_g2_single(hist, initial=None):
    """Fit the three-level g2 form with a unit plateau to a normalized histogram.

    The model is averaged over each histogram bin.  Weights are 1/sigma**2.
    An amplitude pinned at zero is reported as ``bunching-absent`` and then
    tau2 carries no information.
    """
    edges, g, sigma = _histogram_data(hist)
    tau = 0.5 * (edges[:-1] + edges[1:])
    w = 1.0 / sigma**2
    if initial is not None:
        starts = [tuple(initial)]
    else:
        a0, t10, t20 = _initial_g2(tau, g)
        starts = [(a0, t10, t20 * f) for f in (0.3, 1.0, 3.0)]
    best = None
    for start in starts:
        res = reweighted_least_squares(
            _g2_fn,
            start,
            edges,
            g,
            scaled_variance(g, sigma),
            weights=w,
            bounds=[(0.0, np.inf), (0.0, np.inf), (0.0, np.inf)],
            names=G2_NAMES,
            units=("", "ns", "ns"),
            log=(False, True, True),
            family="G2Single",
        )
        if best is None or res.chi2 < best.chi2:
            best = res
    res = best
    p = res.parameters
    if p["tau1"] > p["tau2"] and p["a"] > 0:
        res.flags.append("tau-order")
    if "at-bound:a" in res.flags:
        res.flags.append("bunching-absent")
        res.derived["bunching_absent"] = True
        if "unidentifiable:tau2" not in res.flags:
            res.flags.append("unidentifiable:tau2")
        res.standard_errors["tau2"] = math.inf
    else:
        res.derived["bunching_absent"] = False
    res.derived["g2_zero"] = 0.0
    res.derived["plateau"] = 1.0
    res.data = {"tau_ns": tau.tolist(), "g2": g.tolist(), "sigma": sigma.tolist(), "bin_width_ns": hist.bin_width}
    res.settings = {"normalization_mode": hist.normalization_mode, "bin_width_ns": hist.bin_width}
    return res


@dataclass
class PowerSeries:
    """Normalized histograms taken at several excitation powers (mW)."""

    entries: list

    def __post_init__(self):
        self.entries = sorted(((float(p), h) for p, h in self.entries), key=lambda e: e[0])
        powers = [p for p, _ in self.entries]
        if any(p <= 0 for p in powers):
            raise DataError("powers must be > 0")
        if len(set(powers)) != len(powers):
            raise DataError("powers must be distinct")
        modes = {h.normalization_mode for _, h in self.entries}
        if any(h.normalized is None for _, h in self.entries):
            raise DataError("every histogram in a power series must be normalized")
        if len(modes) > 1:
            raise DataError(f"inconsistent normalization across powers: {sorted(modes)}")

    @property
    def powers(self):
        return np.array([p for p, _ in self.entries])

    def __len__(self):
        return len(self.entries)


def model_curves(model, powers, edges_list):
    """Bin-averaged model g2 for each power, concatenated."""
    out = []
    for p, edges in zip(powers, edges_list):
        a, t1, t2 = raw_g2_parameters(rates_at_power(model, p))
        out.append(g2_curve_binned(a, t1, t2, edges))
    return np.concatenate(out)


def invert_amplitude(a, tau1, tau2, k12):
    """Rates (k21 + k23, k23, k31) consistent with (a, tau1, tau2) at pump k12."""
    lam1, lam2 = 1.0 / tau1, 1.0 / tau2
    k31 = lam1 * lam2 / (a * (lam1 - lam2) + lam1)
    s = lam1 + lam2 - k31
    k23 = (lam1 * lam2 - k31 * s) / k12 if k12 > 0 else 0.0
    return s - k12, k23, k31


def initial_model(series, singles=None):
    """Data-driven starting point for the global fit.

    C1 and A1 come from the slow time constant at the lowest and highest
    power, B1 is the median power, k21 and K come from a straight line
    through 1/tau1 against power, and k23 from the bunching amplitude at
    the middle power.
    """
    if singles is None:
        singles = [fit_g2_single(h) for _, h in series.entries]
    P = series.powers
    tau1 = np.array([r.parameters["tau1"] for r in singles])
    tau2 = np.array([r.parameters["tau2"] for r in singles])
    avals = np.array([r.parameters["a"] for r in singles])
    slope, intercept = np.polyfit(P, 1.0 / tau1, 1)
    K = slope if slope > 0 else 1.0 / (tau1.min() * P.max())
    k21 = intercept if intercept > 0 else 1.0 / tau1.max()
    C1 = 1.0 / tau2[0]
    A1 = 1.0 / tau2[-1] - C1
    if not A1 > 0:
        A1 = C1
    B1 = float(np.median(P))
    mid = len(P) // 2
    _, k23, _ = invert_amplitude(max(avals[mid], 1e-3), tau1[mid], tau2[mid], K * P[mid])
    if not k23 > 0:
        k23 = 0.05 * k21
    return EmitterModel(K=float(K), k21=float(k21), k23=float(k23), A1=float(A1), B1=B1, C1=float(C1))


def fit_g2_global(series, initial=None):
    """One emitter model fitted to the g2 histograms at all powers.

    Each power contributes its bin-averaged three-level curve with
    k12 = K P and the de-shelving law for k31; residuals from all powers are
    pooled.  All six parameters are fitted in log space.
    """
    if len(series) < 3:
        raise DataError("a global fit needs at least 3 powers")
    data = [_histogram_data(h) for _, h in series.entries]
    edges_list = [d[0] for d in data]
    y = np.concatenate([d[1] for d in data])
    sigma = np.concatenate([d[2] for d in data])
    P = series.powers
    singles = None
    if initial is None:
        singles = [fit_g2_single(h) for _, h in series.entries]
        initial = initial_model(series, singles)
    theta0 = np.array([getattr(initial, k) for k in MODEL_NAMES])

    def fn(_, theta):
        try:
            model = EmitterModel(*theta)
            return model_curves(model, P, edges_list)
        except ModelDomainError:
            return np.full(len(y), np.inf)

    res = reweighted_least_squares(
        fn,
        theta0,
        None,
        y,
        scaled_variance(y, sigma),
        weights=1.0 / sigma**2,
        bounds=[(0.0, np.inf)] * 6,
        names=MODEL_NAMES,
        units=[PARAMETER_UNITS[k] for k in MODEL_NAMES],
        log=[True] * 6,
        family="G2Global",
    )
    theta = np.array([res.parameters[k] for k in MODEL_NAMES])
    cov = res.covariance
    per_power = []
    for i, p in enumerate(P):
        row = {"power_mW": float(p)}
        for j, name in enumerate(G2_NAMES):
            def fn_j(t, p=p, j=j):
                return raw_g2_parameters(rates_at_power(EmitterModel(*t), p))[j]

            try:
                val, err = propagate(fn_j, theta, cov)
            except ModelDomainError:
                val, err = math.nan, math.inf
            row[name] = val
            row[f"{name}_err"] = err
        if singles is not None:
            row["single"] = {k: singles[i].parameters[k] for k in G2_NAMES}
            row["single_err"] = {k: singles[i].standard_errors[k] for k in G2_NAMES}
        per_power.append(row)
    res.derived["per_power"] = per_power
    try:
        tau0, tau0_err = propagate(lambda t: zero_power_lifetime(EmitterModel(*t)), theta, cov)
    except ModelDomainError:
        tau0, tau0_err = math.nan, math.inf
    res.derived["zero_power_lifetime_ns"] = tau0
    res.derived["zero_power_lifetime_err_ns"] = tau0_err
    res.settings = {"initial": dict(zip(MODEL_NAMES, theta0.tolist())), "powers_mW": P.tolist()}
    res.data = {
        "powers_mW": P.tolist(),
        "curves": [
            {"tau_ns": (0.5 * (e[:-1] + e[1:])).tolist(), "g2": g.tolist(), "sigma": s.tolist()}
            for e, g, s in data
        ],
    }
    return res


def fitted_model(result):
    """EmitterModel from a G2Global result."""
    return EmitterModel(**{k: result.parameters[k] for k in MODEL_NAMES})
