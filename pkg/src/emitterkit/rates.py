"""Closed-form physics of the three-level emitter with power-dependent de-shelving.

States are 1 (ground), 2 (excited) and 3 (metastable shelving state).  Units
are fixed throughout the package: rates in GHz, times in ns, powers in mW.

The second-order correlation of the emitted light is

    g2(tau) = 1 - (1 + a) exp(-|tau|/tau1) + a exp(-|tau|/tau2)

with tau1, tau2 the inverse roots of  lambda**2 - A lambda + B = 0  and the
bunching amplitude a fixed by g2(0) = 0 and the initial slope of the excited
state population after a photon emission.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import DegenerateRootsError, ModelDomainError, OscillatoryRegimeError

# relative tolerance on the discriminant before declaring the regime oscillatory
DISCRIMINANT_RTOL = 1e-12


class _PermanentShelving:
    """Sentinel for k31 = 0: the emitter ends up trapped in the metastable state."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "PERMANENT_SHELVING"

    def __reduce__(self):
        return (_PermanentShelving, ())


PERMANENT_SHELVING = _PermanentShelving()


def _check_finite_nonneg(name, value):
    if not math.isfinite(value) or value < 0:
        raise ModelDomainError(f"{name} must be finite and >= 0, got {value!r}")


@dataclass(frozen=True)
class RateCoefficients:
    """Transition rates k_ij from state i to state j, in GHz."""

    k12: float
    k21: float
    k23: float
    k31: float

    def __post_init__(self):
        for f in fields(self):
            _check_finite_nonneg(f.name, getattr(self, f.name))
        if self.k21 <= 0:
            raise ModelDomainError("k21 must be > 0: an emitter without radiative decay is rejected")

    def rate_matrix(self):
        """Generator M of dn/dt = M n for populations n = (n1, n2, n3)."""
        k12, k21, k23, k31 = self.k12, self.k21, self.k23, self.k31
        return np.array(
            [
                [-k12, k21, k31],
                [k12, -(k21 + k23), 0.0],
                [0.0, k23, -k31],
            ]
        )


@dataclass(frozen=True)
class EmitterModel:
    """Power-independent description of one emitter.

    Attributes
    ----------
    K : float
        Pump efficiency in GHz/mW, so that k12 = K * P.
    k21, k23 : float
        Radiative decay and shelving rates (GHz).
    A1, B1, C1 : float
        De-shelving law k31(P) = A1 P / (P + B1) + C1; A1 and C1 in GHz,
        B1 (the de-shelving saturation power) in mW.
    """

    K: float
    k21: float
    k23: float
    A1: float
    B1: float
    C1: float

    def __post_init__(self):
        for f in fields(self):
            _check_finite_nonneg(f.name, getattr(self, f.name))
        if self.B1 <= 0:
            raise ModelDomainError("B1 must be > 0")
        if self.k21 <= 0:
            raise ModelDomainError("k21 must be > 0")

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def replace(self, **changes):
        values = self.as_dict()
        values.update(changes)
        return EmitterModel(**values)


PARAMETER_UNITS = {"K": "GHz/mW", "k21": "GHz", "k23": "GHz", "A1": "GHz", "B1": "mW", "C1": "GHz"}


@dataclass(frozen=True)
class G2Parameters:
    """Parameters of the three-level g2 curve.

    ``a`` is clamped to be non-negative here; use :func:`bunching_amplitude`
    for the raw value.
    """

    a: float
    tau1: float
    tau2: float

    def __post_init__(self):
        if not (self.tau1 > 0 and self.tau2 > 0):
            raise ModelDomainError(f"time constants must be positive, got {self.tau1}, {self.tau2}")
        if self.tau1 > self.tau2:
            raise ModelDomainError("tau1 must not exceed tau2")
        if not math.isfinite(self.a):
            raise ModelDomainError("bunching amplitude must be finite")
        if self.a < 0:
            object.__setattr__(self, "a", 0.0)


@dataclass(frozen=True)
class SteadyState:
    n1: float
    n2: float
    n3: float
    emission_rate: float
    permanently_shelved: bool = False


def _check_power(power):
    if not math.isfinite(power) or power < 0:
        raise ModelDomainError(f"excitation power must be finite and >= 0, got {power!r}")


def pump_rate(model, power):
    """Excitation rate k12 = K P (GHz)."""
    _check_power(power)
    return model.K * power


def deshelving_rate(model, power):
    """De-shelving rate k31(P) = A1 P / (P + B1) + C1 (GHz)."""
    _check_power(power)
    return model.A1 * power / (power + model.B1) + model.C1


def rates_at_power(model, power):
    return RateCoefficients(
        k12=pump_rate(model, power),
        k21=model.k21,
        k23=model.k23,
        k31=deshelving_rate(model, power),
    )


def ratio_k23_k31(model, power):
    """Branching ratio k23 / k31(P) at a caller-chosen power."""
    return model.k23 / deshelving_rate(model, power)


def decay_constants(rates):
    """Return (A, B, lambda_fast, lambda_slow) of the characteristic quadratic.

    The slow root is computed as B / lambda_fast to avoid cancellation when
    4B << A**2.
    """
    k12, k21, k23, k31 = rates.k12, rates.k21, rates.k23, rates.k31
    A = k12 + k21 + k23 + k31
    B = k12 * k23 + k12 * k31 + k21 * k31 + k23 * k31
    disc = A * A - 4.0 * B
    if disc < -DISCRIMINANT_RTOL * A * A:
        raise OscillatoryRegimeError(
            f"A**2 - 4B = {disc:.3e} < 0: complex decay rates, not a valid rate set for this model"
        )
    if disc <= DISCRIMINANT_RTOL * A * A:
        raise DegenerateRootsError("the two decay constants coincide")
    lam_fast = 0.5 * (A + math.sqrt(disc))
    lam_slow = B / lam_fast
    return A, B, lam_fast, lam_slow


def time_constants(rates):
    """Antibunching and bunching time constants (tau1, tau2) in ns.

    tau1 is always the fast root.  When B = 0 (k31 = 0 and no path out of the
    shelving state) tau2 is :data:`PERMANENT_SHELVING`.
    """
    _, B, lam_fast, lam_slow = decay_constants(rates)
    if B == 0.0:
        return 1.0 / lam_fast, PERMANENT_SHELVING
    return 1.0 / lam_fast, 1.0 / lam_slow


def bunching_amplitude(rates, tau1, tau2):
    """Raw bunching amplitude a = (1 - tau2 k31) / (k31 (tau2 - tau1)).

    No clamping is applied; negative values signal a regime where de-shelving
    outpaces the slow decay constant.
    """
    if tau2 is PERMANENT_SHELVING or rates.k31 == 0.0:
        return PERMANENT_SHELVING
    if not (tau1 > 0 and tau2 > 0):
        raise ModelDomainError("time constants must be positive")
    if tau2 == tau1:
        raise DegenerateRootsError("tau1 == tau2: bunching amplitude undefined")
    if tau2 < tau1:
        raise ModelDomainError("tau2 must be the slow root")
    k31 = rates.k31
    return (1.0 - tau2 * k31) / (k31 * (tau2 - tau1))


def raw_g2_parameters(rates):
    """(a, tau1, tau2) with the unclamped amplitude."""
    tau1, tau2 = time_constants(rates)
    a = bunching_amplitude(rates, tau1, tau2)
    if a is PERMANENT_SHELVING:
        raise ModelDomainError("permanent shelving: g2 is undefined for k31 = 0")
    return a, tau1, tau2


def g2_parameters(rates):
    a, tau1, tau2 = raw_g2_parameters(rates)
    return G2Parameters(a=a, tau1=tau1, tau2=tau2)


def g2_parameters_at_power(model, power):
    return g2_parameters(rates_at_power(model, power))


def g2_curve(a, tau1, tau2, tau):
    """Evaluate the g2 expression for explicit (possibly negative) a."""
    t = np.abs(np.asarray(tau, dtype=float))
    e1 = np.exp(-t / tau1)
    # grouped so that g2(0) is exactly zero
    return (1.0 - e1) + a * (np.exp(-t / tau2) - e1)


def g2_model(params, tau):
    return g2_curve(params.a, params.tau1, params.tau2, tau)


def g2_from_rates(rates, tau):
    """Analytic g2 of the rate model itself, using the raw amplitude."""
    a, tau1, tau2 = raw_g2_parameters(rates)
    return g2_curve(a, tau1, tau2, tau)


def _mean_exp_abs(t, lo, hi):
    """Mean of exp(-|x|/t) over each interval [lo, hi]."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    pos = t * (np.exp(-np.clip(lo, 0, None) / t) - np.exp(-np.clip(hi, 0, None) / t))
    neg = t * (np.exp(-np.clip(-hi, 0, None) / t) - np.exp(-np.clip(-lo, 0, None) / t))
    return (pos + neg) / (hi - lo)


def g2_curve_binned(a, tau1, tau2, edges):
    """Bin-averaged g2 for histogram bins defined by ``edges`` (ns)."""
    edges = np.asarray(edges, dtype=float)
    lo, hi = edges[:-1], edges[1:]
    e1 = _mean_exp_abs(tau1, lo, hi)
    return (1.0 - e1) + a * (_mean_exp_abs(tau2, lo, hi) - e1)


def steady_state(rates):
    k12, k21, k23, k31 = rates.k12, rates.k21, rates.k23, rates.k31
    if k12 == 0.0:
        return SteadyState(n1=1.0, n2=0.0, n3=0.0, emission_rate=0.0)
    if k31 == 0.0:
        if k23 > 0.0:
            return SteadyState(n1=0.0, n2=0.0, n3=1.0, emission_rate=0.0, permanently_shelved=True)
        shelf_ratio = 0.0
    else:
        shelf_ratio = k23 / k31
    n2 = 1.0 / ((k21 + k23) / k12 + 1.0 + shelf_ratio)
    n3 = shelf_ratio * n2
    n1 = 1.0 - n2 - n3
    return SteadyState(n1=n1, n2=n2, n3=n3, emission_rate=k21 * n2)


def predicted_saturation_curve(model, powers):
    """Photon emission rate (GHz) at each excitation power."""
    return np.array([steady_state(rates_at_power(model, p)).emission_rate for p in powers])


def emission_rate_limit(model):
    """Emission rate for P -> infinity: k21 / (1 + k23 / (A1 + C1))."""
    k31_inf = model.A1 + model.C1
    if k31_inf == 0.0:
        return 0.0
    return model.k21 / (1.0 + model.k23 / k31_inf)


def zero_power_lifetime(model):
    """Fast time constant at vanishing pump (k12 = 0, k31 = C1), in ns.

    At k12 = 0 the quadratic factorises into (lambda - k21 - k23)(lambda - C1),
    so this is 1/(k21 + k23) whenever C1 < k21 + k23.
    """
    rates = rates_at_power(model, 0.0)
    A = rates.k21 + rates.k23 + rates.k31
    B = rates.k31 * (rates.k21 + rates.k23)
    disc = max(A * A - 4.0 * B, 0.0)
    return 2.0 / (A + math.sqrt(disc))
