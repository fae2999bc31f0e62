import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.optimize import curve_fit

from emitterkit import rates as rm
from emitterkit.errors import DegenerateRootsError, ModelDomainError, OscillatoryRegimeError
from emitterkit.presets import GEV1, GEV2
from emitterkit.rates import (
    PERMANENT_SHELVING,
    EmitterModel,
    G2Parameters,
    RateCoefficients,
)

from oracles import conditional_g2, eigen_decay_times, long_time_populations

rate = st.floats(min_value=1e-4, max_value=1.0)


def random_valid_rates(rng, n):
    out = []
    while len(out) < n:
        k = 10 ** rng.uniform(-4, 0, size=4)
        try:
            r = RateCoefficients(*k)
            rm.time_constants(r)
        except ModelDomainError:
            continue
        out.append(r)
    return out


class TestTypes:
    def test_rate_coefficients_reject_negative(self):
        with pytest.raises(ModelDomainError):
            RateCoefficients(k12=-1.0, k21=0.1, k23=0.0, k31=0.0)

    def test_rate_coefficients_reject_zero_k21(self):
        with pytest.raises(ModelDomainError):
            RateCoefficients(k12=0.1, k21=0.0, k23=0.0, k31=0.0)

    def test_rate_coefficients_reject_nan(self):
        with pytest.raises(ModelDomainError):
            RateCoefficients(k12=math.nan, k21=0.1, k23=0.0, k31=0.0)

    def test_emitter_model_requires_positive_b1(self):
        with pytest.raises(ModelDomainError):
            GEV1.replace(B1=0.0)

    def test_g2_parameters_clamp_amplitude(self):
        p = G2Parameters(a=-0.3, tau1=1.0, tau2=2.0)
        assert p.a == 0.0

    def test_g2_parameters_order(self):
        with pytest.raises(ModelDomainError):
            G2Parameters(a=1.0, tau1=3.0, tau2=2.0)


class TestPumpAndDeshelving:
    def test_zero_pump(self):
        assert rm.pump_rate(GEV1.replace(K=0.1), 0.0) == 0.0

    def test_pump_linear(self):
        assert rm.pump_rate(GEV1, 2.0) == pytest.approx(2 * rm.pump_rate(GEV1, 1.0), rel=1e-15)
        assert rm.pump_rate(GEV1, 1.0) == GEV1.K

    def test_pump_value(self):
        assert rm.pump_rate(GEV1.replace(K=0.05), 4.0) == pytest.approx(0.2, rel=1e-15)

    def test_negative_power(self):
        with pytest.raises(ModelDomainError):
            rm.pump_rate(GEV1, -1.0)
        with pytest.raises(ModelDomainError):
            rm.deshelving_rate(GEV1, -0.1)

    def test_deshelving_low_power_limit(self):
        assert rm.deshelving_rate(GEV1, 0.0) == pytest.approx(0.0022, rel=1e-15)

    def test_deshelving_half_saturation(self):
        assert rm.deshelving_rate(GEV1, 0.45) == pytest.approx(0.00475, rel=1e-12)

    def test_deshelving_gev2(self):
        assert rm.deshelving_rate(GEV2, 1.42) == pytest.approx(0.0017, rel=1e-12)

    def test_deshelving_high_power_limit(self):
        assert rm.deshelving_rate(GEV1, 1e12) == pytest.approx(GEV1.A1 + GEV1.C1, rel=1e-10)

    @given(p=st.floats(0, 1e4), dp=st.floats(0, 1e4))
    def test_deshelving_monotone_bounded(self, p, dp):
        k = rm.deshelving_rate(GEV2, p)
        assert rm.deshelving_rate(GEV2, p + dp) >= k
        assert GEV2.C1 <= k <= GEV2.A1 + GEV2.C1


class TestRatesAtPower:
    def test_gev1_zero_power(self):
        r = rm.rates_at_power(GEV1, 0.0)
        assert (r.k12, r.k21, r.k23, r.k31) == (0.0, 0.1014, 0.0065, 0.0022)

    def test_gev2_half_saturation(self):
        r = rm.rates_at_power(GEV2, 1.42)
        assert r.k12 == pytest.approx(1.42 * GEV2.K)
        assert (r.k21, r.k23) == (0.0458, 0.0052)
        assert r.k31 == pytest.approx(0.0017, rel=1e-12)

    def test_ratio_k23_k31(self):
        assert rm.ratio_k23_k31(GEV1, 0.0) == pytest.approx(0.0065 / 0.0022)


class TestTimeConstants:
    def test_gev1_zero_power(self):
        tau1, tau2 = rm.time_constants(rm.rates_at_power(GEV1, 0.0))
        assert tau1 == pytest.approx(9.27, abs=0.01)
        assert tau2 == pytest.approx(1 / 0.0022, rel=1e-12)

    def test_gev2_zero_power(self):
        tau1, _ = rm.time_constants(rm.rates_at_power(GEV2, 0.0))
        assert tau1 == pytest.approx(19.6, abs=0.02)

    def test_two_level_limit_matches_eigensolver(self):
        r = RateCoefficients(k12=0.3, k21=0.1, k23=0.0, k31=0.01)
        tau1, tau2 = rm.time_constants(r)
        assert tau1 == pytest.approx(1 / 0.4, rel=1e-12)
        ref = eigen_decay_times(0.3, 0.1, 0.0, 0.01)
        assert (tau1, tau2) == pytest.approx(ref, rel=1e-10)

    def test_eigen_oracle_random(self):
        rng = np.random.default_rng(7)
        for r in random_valid_rates(rng, 1000):
            tau1, tau2 = rm.time_constants(r)
            e1, e2 = eigen_decay_times(r.k12, r.k21, r.k23, r.k31)
            assert tau1 == pytest.approx(e1, rel=1e-8)
            assert tau2 == pytest.approx(e2, rel=1e-8)

    def test_oscillatory_regime(self):
        with pytest.raises(OscillatoryRegimeError):
            rm.time_constants(RateCoefficients(k12=1.0, k21=0.001, k23=1.0, k31=1.0))

    def test_degenerate_roots(self):
        # k12 = 0 factorises into (k21 + k23) and k31
        with pytest.raises(DegenerateRootsError):
            rm.time_constants(RateCoefficients(k12=0.0, k21=0.1, k23=0.0, k31=0.1))

    def test_permanent_shelving_sentinel(self):
        tau1, tau2 = rm.time_constants(RateCoefficients(k12=0.2, k21=0.1, k23=0.0, k31=0.0))
        assert tau2 is PERMANENT_SHELVING
        assert tau1 == pytest.approx(1 / 0.3)

    @settings(max_examples=300)
    @given(rate, rate, rate, rate)
    def test_vieta(self, k12, k21, k23, k31):
        r = RateCoefficients(k12, k21, k23, k31)
        try:
            tau1, tau2 = rm.time_constants(r)
        except ModelDomainError:
            return
        A = k12 + k21 + k23 + k31
        B = k12 * k23 + k12 * k31 + k21 * k31 + k23 * k31
        assert 1 / tau1 + 1 / tau2 == pytest.approx(A, rel=1e-10)
        assert 1 / (tau1 * tau2) == pytest.approx(B, rel=1e-10)
        assert tau1 <= tau2

    def test_tau2_tends_to_inverse_k31(self):
        k31 = 0.004
        pumps = (1e-3, 1e-5, 1e-7)
        dev = [abs(rm.time_constants(RateCoefficients(k12, 0.1, 0.006, k31))[1] * k31 - 1) for k12 in pumps]
        assert dev[0] > dev[1] > dev[2]
        # first order in k12: tau2 * k31 - 1 ~ -k12 k23 / (k31 (k21 + k23 - k31))
        assert dev[2] == pytest.approx(pumps[2] * 0.006 / (k31 * (0.106 - k31)), rel=1e-4)


class TestBunchingAmplitude:
    def test_no_shelving_no_bunching(self):
        r = RateCoefficients(k12=0.2, k21=0.1, k23=0.0, k31=0.01)
        tau1, tau2 = rm.time_constants(r)
        assert tau2 == pytest.approx(1 / 0.01, rel=1e-12)
        assert rm.bunching_amplitude(r, tau1, tau2) == pytest.approx(0.0, abs=1e-12)

    def test_gev2_bunches_more_than_gev1(self):
        a1 = rm.g2_parameters_at_power(GEV1, 4.0).a
        a2 = rm.g2_parameters_at_power(GEV2, 4.0).a
        assert a1 < 1.0 < a2
        assert a2 == pytest.approx(2.0, abs=0.05)

    def test_degenerate(self):
        r = RateCoefficients(0.1, 0.1, 0.01, 0.01)
        with pytest.raises(DegenerateRootsError):
            rm.bunching_amplitude(r, 5.0, 5.0)

    def test_zero_k31_sentinel(self):
        r = RateCoefficients(0.1, 0.1, 0.01, 0.0)
        assert rm.bunching_amplitude(r, 5.0, 50.0) is PERMANENT_SHELVING

    def test_matches_fit_to_ode(self):
        rng = np.random.default_rng(3)
        r = random_valid_rates(rng, 1)[0]
        while rm.bunching_amplitude(r, *rm.time_constants(r)) < 0.05:
            r = random_valid_rates(rng, 1)[0]
        tau1, tau2 = rm.time_constants(r)
        a = rm.bunching_amplitude(r, tau1, tau2)
        taus = np.linspace(0, 10 * tau2, 400)
        y = conditional_g2(r.k12, r.k21, r.k23, r.k31, taus)
        popt, _ = curve_fit(
            lambda t, a_, l1, l2: rm.g2_curve(a_, np.exp(l1), np.exp(l2), t),
            taus,
            y,
            p0=[a * 1.2, np.log(tau1 * 0.9), np.log(tau2 * 1.1)],
        )
        assert popt[0] == pytest.approx(a, rel=1e-4)
        assert np.exp(popt[1:]) == pytest.approx([tau1, tau2], rel=1e-4)


class TestG2Model:
    def test_zero_delay(self):
        assert rm.g2_model(G2Parameters(1.7, 3.0, 80.0), 0.0) == 0.0

    def test_pure_antibunching(self):
        v = rm.g2_model(G2Parameters(0.0, 10.0, 20.0), 10.0)
        assert v == pytest.approx(1 - math.exp(-1), abs=1e-12)
        assert v == pytest.approx(0.6321, abs=1e-4)

    def test_bunching_shoulder(self):
        p = G2Parameters(a=2.0, tau1=10.0, tau2=200.0)
        # 1 - 3 e^-5 + 2 e^-0.25
        assert rm.g2_model(p, 50.0) == pytest.approx(1 - 3 * math.exp(-5) + 2 * math.exp(-0.25), rel=1e-12)
        assert rm.g2_model(p, 50.0) > 1.0

    @given(st.floats(0, 10), st.floats(0.1, 50), st.floats(1.0, 20.0), st.floats(0, 1e4))
    def test_even_zero_and_plateau(self, a, tau1, ratio, tau):
        p = G2Parameters(a, tau1, tau1 * ratio)
        assert rm.g2_model(p, 0.0) == pytest.approx(0.0, abs=1e-12)
        assert rm.g2_model(p, tau) == rm.g2_model(p, -tau)
        far = 50 * p.tau2 + tau
        assert abs(rm.g2_model(p, far) - 1.0) < 1e-6

    def test_binned_matches_quadrature(self):
        a, t1, t2 = 1.3, 2.0, 90.0
        edges = np.array([-7.5, -2.5, -0.5, 0.5, 1.0, 3.5, 40.0])
        got = rm.g2_curve_binned(a, t1, t2, edges)
        for i in range(len(edges) - 1):
            val, _ = quad(lambda x: float(rm.g2_curve(a, t1, t2, x)), edges[i], edges[i + 1], points=[0.0], limit=200)
            assert got[i] == pytest.approx(val / (edges[i + 1] - edges[i]), rel=1e-10, abs=1e-12)

    def test_matches_ode_conditional_population(self):
        rng = np.random.default_rng(11)
        for r in random_valid_rates(rng, 20):
            a, tau1, tau2 = rm.raw_g2_parameters(r)
            taus = np.linspace(0, 20 * tau2, 300)
            ref = conditional_g2(r.k12, r.k21, r.k23, r.k31, taus)
            assert np.max(np.abs(rm.g2_curve(a, tau1, tau2, taus) - ref)) < 1e-4


class TestSteadyState:
    def test_no_pump(self):
        s = rm.steady_state(RateCoefficients(0.0, 0.1, 0.01, 0.01))
        assert (s.n1, s.emission_rate) == (1.0, 0.0)

    def test_balanced_two_level(self):
        s = rm.steady_state(RateCoefficients(0.1, 0.1, 0.0, 0.01))
        assert s.n2 == pytest.approx(0.5, rel=1e-14)

    def test_total_shelving(self):
        s = rm.steady_state(RateCoefficients(0.1, 0.1, 0.01, 0.0))
        assert s.permanently_shelved and s.n3 == 1.0

    def test_gev1_matches_ode(self):
        r = rm.rates_at_power(GEV1, 10 * GEV1.B1)
        s = rm.steady_state(r)
        n = long_time_populations(r.k12, r.k21, r.k23, r.k31, t_end=1e5)
        assert np.allclose([s.n1, s.n2, s.n3], n, atol=1e-6, rtol=0)
        assert s.n1 + s.n2 + s.n3 == pytest.approx(1.0, abs=1e-12)

    @given(st.floats(1e-4, 10), rate, st.floats(0, 1), st.floats(1e-5, 1))
    def test_normalised(self, k12, k21, k23, k31):
        s = rm.steady_state(RateCoefficients(k12, k21, k23, k31))
        assert abs(s.n1 + s.n2 + s.n3 - 1.0) < 1e-12
        assert all(0.0 <= n <= 1.0 for n in (s.n1, s.n2, s.n3))


class TestSaturationAndLifetime:
    def test_zero_power_emission(self):
        assert rm.predicted_saturation_curve(GEV1, [0.0])[0] == 0.0

    def test_monotone_concave(self):
        p = np.linspace(0.0, 20.0, 2001)
        e = rm.predicted_saturation_curve(GEV1, p)
        d1 = np.diff(e)
        assert np.all(d1 > 0)
        knee = p[1:-1] > 2 * GEV1.B1
        assert np.all(np.diff(d1)[knee] < 0)
        assert e[-1] < rm.emission_rate_limit(GEV1)

    def test_gev1_brighter(self):
        p = [0.1, 0.5, 1.0, 4.0]
        assert np.all(rm.predicted_saturation_curve(GEV1, p) > rm.predicted_saturation_curve(GEV2, p))

    def test_lifetimes(self):
        assert rm.zero_power_lifetime(GEV1) == pytest.approx(9.25, abs=0.1)
        assert rm.zero_power_lifetime(GEV2) == pytest.approx(19.58, abs=0.1)

    def test_isolated_two_level(self):
        m = EmitterModel(K=0.1, k21=0.08, k23=0.0, A1=0.0, B1=1.0, C1=0.0)
        assert rm.zero_power_lifetime(m) == pytest.approx(1 / 0.08, rel=1e-14)
