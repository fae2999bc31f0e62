"""Spectrum, lifetime, saturation and polarization fits."""
from __future__ import annotations

import math

import numpy as np

from ..errors import DataError
from .engine import counts_variance, least_squares, propagate, reweighted_least_squares


def _count_fit(model_fn, theta0, x, y, sigma, **kwargs):
    """Weighted fit of count data.

    With explicit ``sigma`` the weights are 1/sigma**2.  Otherwise the data
    are Poisson counts: a first pass uses 1/max(counts, 1) and later passes
    the variance predicted by the model.
    """
    if sigma is not None:
        sigma = np.asarray(sigma, float)
        if not np.all(sigma > 0):
            raise DataError("sigma must be > 0")
        return least_squares(model_fn, theta0, x, y, weights=1.0 / sigma**2, absolute_sigma=True, **kwargs)
    w = 1.0 / np.maximum(np.asarray(y, float), 1.0)
    return reweighted_least_squares(model_fn, theta0, x, y, counts_variance(), weights=w, absolute_sigma=True, **kwargs)


# spectrum --------------------------------------------------------------------


def lorentzian(x, center, fwhm, area):
    """Lorentzian line with unit-area normalization scaled by ``area``."""
    half = 0.5 * fwhm
    return area * (half / math.pi) / ((x - center) ** 2 + half * half)


def spectrum_model(x, theta):
    """Constant baseline plus Lorentzians; theta = (baseline, c1, w1, A1, c2, ...)."""
    y = np.full(np.shape(x), theta[0], dtype=float)
    for i in range(1, len(theta), 3):
        y = y + lorentzian(x, theta[i], theta[i + 1], theta[i + 2])
    return y


def _spectrum_jac(x, theta):
    cols = [np.ones_like(x, dtype=float)]
    for i in range(1, len(theta), 3):
        c, w, A = theta[i : i + 3]
        h = 0.5 * w
        d = x - c
        den = d * d + h * h
        cols.append(A * h / math.pi * 2 * d / den**2)
        cols.append(A / (2 * math.pi) * (d * d - h * h) / den**2)
        cols.append(h / math.pi / den)
    return np.column_stack(cols)


def _half_width(x, y, i):
    half = y[i] / 2
    lo = i
    while lo > 0 and y[lo] > half:
        lo -= 1
    hi = i
    while hi < len(y) - 1 and y[hi] > half:
        hi += 1
    return max(x[hi] - x[lo], 2 * (x[1] - x[0]))


def _initial_peaks(x, y, n_peaks):
    base = float(np.percentile(y, 5))
    rest = y - base
    peaks = []
    for _ in range(n_peaks):
        i = int(np.argmax(rest))
        w = _half_width(x, rest, i)
        height = max(rest[i], 1e-12)
        area = height * math.pi * w / 2
        peaks.append((float(x[i]), float(w), float(area)))
        rest = rest - lorentzian(x, x[i], w, area)
    return max(base, 0.0), peaks


def fit_spectrum(wavelength, counts, n_psb_peaks=1, sigma=None, initial=None, zpl="height"):
    """Multi-Lorentzian fit of an emission spectrum.

    Peaks are parameterized by centre (nm), FWHM (nm) and area, on a
    non-negative constant baseline.  The zero-phonon line is the peak with
    the largest height (``zpl="height"``) or the largest area
    (``zpl="area"``).  The Huang-Rhys factor is S = -ln(area_ZPL / sum of
    areas).

    Parameters
    ----------
    initial : sequence of (center, fwhm, area), optional
        One triple per peak; found by greedy peak picking when omitted.
    """
    x = np.asarray(wavelength, float)
    y = np.asarray(counts, float)
    if x.ndim != 1 or x.shape != y.shape or len(x) < 5:
        raise DataError("spectrum needs matching 1-d wavelength and count arrays")
    if np.any(np.diff(x) <= 0):
        raise DataError("wavelengths must be strictly increasing")
    n_peaks = 1 + int(n_psb_peaks)
    if initial is None:
        base, peaks = _initial_peaks(x, y, n_peaks)
    else:
        peaks = [tuple(p) for p in initial]
        if len(peaks) != n_peaks:
            raise DataError(f"expected {n_peaks} initial peaks")
        base = max(float(np.percentile(y, 5)), 0.0)
    theta0 = [base] + [v for p in peaks for v in p]
    names, units, bounds, log = ["baseline"], ["counts"], [(0.0, np.inf)], [False]
    for k in range(n_peaks):
        names += [f"center{k}", f"fwhm{k}", f"area{k}"]
        units += ["nm", "nm", "counts*nm"]
        bounds += [(x[0], x[-1]), (0.0, np.inf), (0.0, np.inf)]
        log += [False, True, True]
    res = _count_fit(
        spectrum_model,
        theta0,
        x,
        y,
        sigma,
        bounds=bounds,
        names=names,
        units=units,
        log=log,
        jac=_spectrum_jac,
        family="Spectrum",
    )
    theta = np.array([res.parameters[k] for k in names])
    centers = theta[1::3]
    widths = theta[2::3]
    areas = theta[3::3]
    heights = 2 * areas / (math.pi * widths)
    z = int(np.argmax(heights if zpl == "height" else areas))

    def s_factor(t):
        a = np.asarray(t[3::3])
        return -math.log(a[z] / a.sum())

    S, S_err = propagate(s_factor, theta, res.covariance)
    for i in range(n_peaks):
        for j in range(i + 1, n_peaks):
            if abs(centers[i] - centers[j]) < 0.5 * min(widths[i], widths[j]):
                res.flags.append(f"degenerate-peaks:{i},{j}")
    res.derived.update(
        zpl_index=z,
        zpl_center_nm=float(centers[z]),
        zpl_center_err_nm=res.standard_errors[f"center{z}"],
        zpl_fwhm_nm=float(widths[z]),
        zpl_fwhm_err_nm=res.standard_errors[f"fwhm{z}"],
        zpl_area=float(areas[z]),
        total_area=float(areas.sum()),
        huang_rhys=S,
        huang_rhys_err=S_err,
        debye_waller=float(areas[z] / areas.sum()),
    )
    res.data = {"wavelength_nm": x.tolist(), "counts": y.tolist()}
    res.settings = {"n_psb_peaks": int(n_psb_peaks), "zpl_rule": zpl}
    return res


# lifetime --------------------------------------------------------------------


def decay_model(t, theta):
    I0, A, tau = theta
    return I0 + A * np.exp(-t / tau)


def _decay_jac(t, theta):
    I0, A, tau = theta
    e = np.exp(-t / tau)
    return np.column_stack([np.ones_like(t), e, A * t / tau**2 * e])


def fit_lifetime(t, counts=None, sigma=None, start=None):
    """Single-exponential fit I = I0 + A exp(-t/tau) to a decay histogram.

    ``t`` is either an array of bin centres (ns) with ``counts``, or a
    :class:`~emitterkit.correlate.DecayHistogram`.  Bins before the maximum
    (or before ``start``) are excluded.  Evaluating at bin centres does not
    bias tau: averaging an exponential over a bin only rescales A.
    """
    if counts is None:
        hist = t
        t, counts = hist.t, hist.counts
    t = np.asarray(t, float)
    y = np.asarray(counts, float)
    if t.shape != y.shape:
        raise DataError("times and counts must match")
    first = int(np.argmax(y)) if start is None else int(np.searchsorted(t, start))
    t_fit, y_fit = t[first:], y[first:]
    s_fit = None if sigma is None else np.asarray(sigma, float)[first:]
    if len(t_fit) < 20:
        raise DataError("lifetime fit needs at least 20 bins")
    tail = y_fit[-max(len(y_fit) // 10, 1) :]
    I0 = max(float(np.median(tail)), 0.0)
    A = max(float(y_fit[0] - I0), 1e-12)
    above = y_fit - I0
    cross = np.flatnonzero(above <= A / math.e)
    tau = float(t_fit[cross[0]] - t_fit[0]) if len(cross) and cross[0] > 0 else float(t_fit[-1] - t_fit[0]) / 3
    tau = max(tau, float(t_fit[1] - t_fit[0]))
    t_rel = t_fit - t_fit[0]
    res = _count_fit(
        decay_model,
        (I0, A, tau),
        t_rel,
        y_fit,
        s_fit,
        bounds=[(0.0, np.inf), (0.0, np.inf), (0.0, 1e3 * max(t_rel[-1], tau))],
        names=("I0", "A", "tau"),
        units=("counts", "counts", "ns"),
        log=(False, False, True),
        jac=_decay_jac,
        family="Lifetime",
    )
    # amplitude referred back to t = 0 of the original axis
    res.derived["lifetime_ns"] = res.parameters["tau"]
    res.derived["lifetime_err_ns"] = res.standard_errors["tau"]
    res.derived["t_offset_ns"] = float(t_fit[0])
    if "at-bound:A" in res.flags and "unidentifiable:tau" not in res.flags:
        res.flags.append("unidentifiable:tau")
        res.standard_errors["tau"] = math.inf
    if t_rel[-1] < 3 * res.parameters["tau"]:
        res.flags.append("short-window")
    res.data = {"t_ns": t_fit.tolist(), "counts": y_fit.tolist()}
    return res


# saturation ------------------------------------------------------------------


def saturation_model(P, theta):
    out = theta[0] * P / (theta[1] + P)
    if len(theta) > 2:
        out = out + theta[2] * P
    return out


def _saturation_jac(P, theta):
    I, Ps = theta[0], theta[1]
    cols = [P / (Ps + P), -I * P / (Ps + P) ** 2]
    if len(theta) > 2:
        cols.append(P)
    return np.column_stack(cols)


def fit_saturation(power, rate, sigma=None, background=False):
    """Fit I = I_inf P / (P_sat + P), optionally plus a linear term b P.

    Rates in Hz, powers in mW.  Without ``sigma`` the points are equally
    weighted and errors scale with the reduced chi2.  When every point lies
    well below the fitted saturation power, I_inf is flagged and the
    initial slope I_inf / P_sat is the meaningful output.
    """
    P = np.asarray(power, float)
    y = np.asarray(rate, float)
    if P.shape != y.shape or len(P) < 4:
        raise DataError("saturation fit needs at least 4 points")
    if np.any(P < 0):
        raise DataError("powers must be >= 0")
    order = np.argsort(P)
    P, y = P[order], y[order]
    sig = None if sigma is None else np.asarray(sigma, float)[order]
    I0 = 1.2 * max(float(y.max()), 1e-12)
    half = np.flatnonzero(y >= 0.5 * y.max())
    Ps0 = float(P[half[0]]) if len(half) and P[half[0]] > 0 else float(np.median(P[P > 0]))
    theta0 = [I0, Ps0]
    names, units, bounds, log = ["I_inf", "P_sat"], ["Hz", "mW"], [(0.0, np.inf), (0.0, np.inf)], [True, True]
    if background:
        theta0.append(0.0)
        names.append("b")
        units.append("Hz/mW")
        bounds.append((0.0, np.inf))
        log.append(False)
    w = None if sig is None else 1.0 / sig**2
    res = least_squares(
        saturation_model,
        theta0,
        P,
        y,
        weights=w,
        bounds=bounds,
        names=names,
        units=units,
        log=log,
        jac=_saturation_jac,
        family="Saturation",
    )
    theta = np.array([res.parameters[k] for k in names])
    slope, slope_err = propagate(lambda t: t[0] / t[1], theta, res.covariance)
    res.derived["initial_slope_Hz_per_mW"] = slope
    res.derived["initial_slope_err"] = slope_err
    if P.max() < 0.5 * res.parameters["P_sat"] or res.standard_errors["I_inf"] > res.parameters["I_inf"]:
        res.flags.append("linear-regime")
        if "unidentifiable:I_inf" not in res.flags:
            res.flags.append("unidentifiable:I_inf")
    res.data = {"power_mW": P.tolist(), "rate_Hz": y.tolist()}
    res.settings = {"background": bool(background)}
    return res


# polarization ----------------------------------------------------------------


def polarization_model(theta_deg, p):
    alpha, beta, phi = p
    return alpha + beta * np.sin(np.radians(theta_deg + phi)) ** 2


def _polarization_jac(theta_deg, p):
    alpha, beta, phi = p
    arg = np.radians(theta_deg + phi)
    s = np.sin(arg)
    return np.column_stack([np.ones_like(arg), s * s, beta * np.sin(2 * arg) * math.pi / 180])


def fit_polarization(angle_deg, rate, sigma=None):
    """Fit I = alpha + beta sin^2(theta + phi); visibility V = beta / (2 alpha + beta).

    phi is reported in [0, 180) degrees.  A linear fit in cos 2theta and
    sin 2theta provides the starting point.
    """
    th = np.asarray(angle_deg, float)
    y = np.asarray(rate, float)
    if th.shape != y.shape or len(th) < 8:
        raise DataError("polarization fit needs at least 8 points")
    steps = np.diff(np.unique(th))
    if np.ptp(th) + (np.median(steps) if len(steps) else 0.0) < 180.0 - 1e-9:
        raise DataError("angles must cover at least 180 degrees")
    rad = np.radians(2 * th)
    X = np.column_stack([np.ones_like(rad), np.cos(rad), np.sin(rad)])
    c0, c1, c2 = np.linalg.lstsq(X, y, rcond=None)[0]
    beta = 2 * math.hypot(c1, c2)
    alpha = max(c0 - beta / 2, 0.0)
    phi = math.degrees(0.5 * math.atan2(c2, -c1)) if beta > 0 else 0.0
    beta = max(beta, 1e-9 * max(abs(c0), 1.0))
    w = None if sigma is None else 1.0 / np.asarray(sigma, float) ** 2
    res = least_squares(
        polarization_model,
        (alpha, beta, phi),
        th,
        y,
        weights=w,
        bounds=[(0.0, np.inf), (0.0, np.inf), (-np.inf, np.inf)],
        names=("alpha", "beta", "phi"),
        units=("Hz", "Hz", "deg"),
        jac=_polarization_jac,
        family="Polarization",
    )
    res.parameters["phi"] = float(np.mod(res.parameters["phi"], 180.0))
    theta = np.array([res.parameters[k] for k in ("alpha", "beta", "phi")])
    V, V_err = propagate(lambda t: t[1] / (2 * t[0] + t[1]), theta, res.covariance)
    res.derived["visibility"] = V
    res.derived["visibility_err"] = V_err
    if res.parameters["beta"] < 2 * res.standard_errors["beta"] or not math.isfinite(res.standard_errors["phi"]):
        if "unidentifiable:phi" not in res.flags:
            res.flags.append("unidentifiable:phi")
        res.standard_errors["phi"] = math.inf
    res.data = {"angle_deg": th.tolist(), "rate_Hz": y.tolist()}
    return res
