"""Least-squares fitting of the model families."""
from .engine import Convergence, FitResult, least_squares, objective, objective_gradient
from .families import fit_lifetime, fit_polarization, fit_saturation, fit_spectrum
from .g2 import PowerSeries, fit_g2_global, fit_g2_single, fitted_model

FAMILIES = ("G2Single", "G2Global", "Spectrum", "Lifetime", "Saturation", "Polarization")
