"""Reference emitters and measured values for the two GeV centres.

The de-shelving and decay parameters are reference fit values.  The pump
efficiency K is not among them; the values below are chosen so that GeV2
reaches a bunching amplitude of about 2 at 4 mW and GeV1 keeps a < 1 with
tau1 still resolvable at 1 ns binning.
"""
from types import MappingProxyType

from .rates import EmitterModel

GEV1 = EmitterModel(K=0.1, k21=0.1014, k23=0.0065, A1=0.0051, B1=0.45, C1=0.0022)
GEV2 = EmitterModel(K=0.05, k21=0.0458, k23=0.0052, A1=0.002, B1=1.42, C1=0.0007)

EMITTERS = MappingProxyType({"GeV1": GEV1, "GeV2": GEV2})

# excitation powers of the representative g2 curves (mW)
SERIES_POWERS = (0.1, 1.0, 4.0)

# lifetimes (ns): rate-model value and direct pulsed measurement
MODEL_LIFETIME_NS = MappingProxyType({"GeV1": 9.25, "GeV2": 19.58})
MEASURED_LIFETIME_NS = MappingProxyType({"GeV1": 10.11, "GeV2": 20.5})

# saturation fits: (I_inf in Hz, P_sat in mW)
SATURATION = MappingProxyType({"GeV1": (1.5e6, 0.56), "GeV2": (0.2e6, 1.5)})

# photoluminescence: (ZPL centre nm, ZPL FWHM nm, Huang-Rhys S)
SPECTRUM = MappingProxyType({"GeV1": (605.5, 4.5, 0.5), "GeV2": (601.5, 5.5, 0.79)})

# 20-emitter ensemble means: ZPL centre (nm), FWHM (nm), S
ENSEMBLE_MEANS = (603.5, 5.2, 0.65)

POLARIZATION_VISIBILITY = 0.92

# detection efficiency giving ~1.4 MHz detected from GeV1 at 4 mW
DEFAULT_DETECTION_EFFICIENCY = 0.03
