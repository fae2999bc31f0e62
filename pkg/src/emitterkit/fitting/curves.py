"""Evaluate fitted model curves from a FitResult alone (used for plot output)."""
from __future__ import annotations

import numpy as np

from ..rates import EmitterModel, g2_curve, raw_g2_parameters, rates_at_power
from .families import decay_model, polarization_model, saturation_model, spectrum_model
from .g2 import MODEL_NAMES


def _theta(result, names):
    return np.array([result.parameters[k] for k in names])


def data_axis(result):
    """(column name, x values, y values) of the fitted data, if recorded."""
    d = result.data
    fam = result.family
    if fam == "G2Single":
        return "tau_ns", np.array(d["tau_ns"]), np.array(d["g2"])
    if fam == "Spectrum":
        return "wavelength_nm", np.array(d["wavelength_nm"]), np.array(d["counts"])
    if fam == "Lifetime":
        return "t_ns", np.array(d["t_ns"]), np.array(d["counts"])
    if fam == "Saturation":
        return "power_mW", np.array(d["power_mW"]), np.array(d["rate_Hz"])
    if fam == "Polarization":
        return "angle_deg", np.array(d["angle_deg"]), np.array(d["rate_Hz"])
    raise ValueError(f"no single data axis for family {fam}")


def evaluate(result, x, power=None):
    """Model value of a fitted family at ``x``.

    For a global g2 fit ``power`` (mW) selects the curve.  Single g2 curves
    are evaluated pointwise, not bin-averaged.
    """
    x = np.asarray(x, float)
    p = result.parameters
    fam = result.family
    if fam == "G2Single":
        return g2_curve(p["a"], p["tau1"], p["tau2"], x)
    if fam == "G2Global":
        model = EmitterModel(**{k: p[k] for k in MODEL_NAMES})
        return g2_curve(*raw_g2_parameters(rates_at_power(model, power)), x)
    if fam == "Spectrum":
        n_peaks = 1 + result.settings.get("n_psb_peaks", 1)
        names = ["baseline"] + [f"{q}{k}" for k in range(n_peaks) for q in ("center", "fwhm", "area")]
        return spectrum_model(x, _theta(result, names))
    if fam == "Lifetime":
        t0 = result.derived.get("t_offset_ns", 0.0)
        return decay_model(x - t0, _theta(result, ("I0", "A", "tau")))
    if fam == "Saturation":
        names = ("I_inf", "P_sat", "b") if "b" in p else ("I_inf", "P_sat")
        return saturation_model(x, _theta(result, names))
    if fam == "Polarization":
        return polarization_model(x, _theta(result, ("alpha", "beta", "phi")))
    raise ValueError(f"unknown family {fam}")


def curve_table(result, n_points=500):
    """Ordered columns of the fitted curve on ``n_points`` samples over the data range."""
    if result.family == "G2Global":
        curves = result.data["curves"]
        tau = np.array(curves[0]["tau_ns"])
        x = np.linspace(tau.min(), tau.max(), n_points)
        cols = {"tau_ns": x}
        for power in result.data["powers_mW"]:
            cols[f"g2_P{power:g}mW"] = evaluate(result, x, power)
        return cols
    name, xd, _ = data_axis(result)
    x = np.linspace(xd.min(), xd.max(), n_points)
    label = {"Spectrum": "counts", "Lifetime": "counts", "G2Single": "g2"}.get(result.family, "rate_Hz")
    return {name: x, f"model_{label}": evaluate(result, x)}


def data_table(result):
    """Fitted data points with the model value and residual at each point."""
    if result.family == "G2Global":
        cols = {"power_mW": [], "tau_ns": [], "g2": [], "sigma": [], "model_g2": []}
        for power, c in zip(result.data["powers_mW"], result.data["curves"]):
            tau = np.array(c["tau_ns"])
            cols["power_mW"].append(np.full(len(tau), power))
            cols["tau_ns"].append(tau)
            cols["g2"].append(np.array(c["g2"]))
            cols["sigma"].append(np.array(c["sigma"]))
            cols["model_g2"].append(evaluate(result, tau, power))
        return {k: np.concatenate(v) for k, v in cols.items()}
    name, x, y = data_axis(result)
    label = {"Spectrum": "counts", "Lifetime": "counts", "G2Single": "g2"}.get(result.family, "rate_Hz")
    model = evaluate(result, x)
    return {name: x, label: y, f"model_{label}": model, f"residual_{label}": y - model}
