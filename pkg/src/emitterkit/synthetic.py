"""Synthetic measurement series for fit checks and demonstrations.

Noise is Poisson on integrated counts when an ``rng`` is passed and the
data are returned noise-free otherwise.
"""
from __future__ import annotations

import math

import numpy as np

from .fitting.families import decay_model, lorentzian, polarization_model, saturation_model
from .presets import ENSEMBLE_MEANS

# phonon sideband placement relative to the zero-phonon line (nm)
PSB_SHIFT_NM = 20.0
PSB_FWHM_NM = 25.0
# emitter-to-emitter spread used for ensemble draws (centre nm, fwhm nm, S)
ENSEMBLE_SPREAD = (2.0, 0.6, 0.12)


def spectrum_counts(center, fwhm, S, total_area=2e5, baseline=20.0, wavelength=None, psb_shift=PSB_SHIFT_NM,
                    psb_fwhm=PSB_FWHM_NM, rng=None):
    """Zero-phonon line plus one sideband with area split by exp(-S)."""
    if wavelength is None:
        wavelength = np.arange(570.0, 680.0, 0.1)
    wavelength = np.asarray(wavelength, float)
    zpl_area = total_area * math.exp(-S)
    mean = (
        baseline
        + lorentzian(wavelength, center, fwhm, zpl_area)
        + lorentzian(wavelength, center + psb_shift, psb_fwhm, total_area - zpl_area)
    )
    counts = mean if rng is None else rng.poisson(mean).astype(float)
    return wavelength, counts


def saturation_rates(I_inf, P_sat, powers=None, rel_noise=0.0, background=0.0, rng=None):
    if powers is None:
        powers = np.array([0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0])
    powers = np.asarray(powers, float)
    theta = (I_inf, P_sat, background) if background else (I_inf, P_sat)
    rate = saturation_model(powers, theta)
    if rng is not None and rel_noise > 0:
        rate = rate * (1 + rel_noise * rng.standard_normal(len(rate)))
    return powers, rate


def polarization_rates(visibility, phi_deg=30.0, I_max=1e5, angles=None, dwell=1.0, rng=None):
    """Rates (Hz) for given visibility; Poisson noise on counts over ``dwell`` s."""
    if angles is None:
        angles = np.arange(0.0, 360.0, 10.0)
    angles = np.asarray(angles, float)
    # I_max = alpha + beta and V = beta / (2 alpha + beta)
    alpha = I_max * (1 - visibility) / (1 + visibility)
    beta = I_max - alpha
    rate = polarization_model(angles, (alpha, beta, phi_deg))
    if rng is not None:
        rate = rng.poisson(rate * dwell) / dwell
    return angles, rate


def decay_counts(tau, amplitude=1e4, offset=5.0, t=None, rng=None):
    if t is None:
        t = np.arange(0.0, 10 * tau, tau / 20)
    t = np.asarray(t, float)
    mean = decay_model(t, (offset, amplitude, tau))
    return t, (mean if rng is None else rng.poisson(mean).astype(float))


def draw_ensemble(n, rng, means=ENSEMBLE_MEANS, spread=ENSEMBLE_SPREAD):
    """Draw (centre nm, fwhm nm, S) for ``n`` emitters around the ensemble means."""
    c = rng.normal(means[0], spread[0], n)
    w = np.abs(rng.normal(means[1], spread[1], n))
    s = np.abs(rng.normal(means[2], spread[2], n))
    return np.column_stack([c, w, s])
