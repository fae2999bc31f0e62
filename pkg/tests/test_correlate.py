import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emitterkit.correlate import (
    Correlator,
    CorrelationHistogram,
    background_correct,
    correlate,
    decay_histogram,
    normalize,
    pulsed_g2_analysis,
    pulsed_g2_zero,
)
from emitterkit.errors import DataError, NormalizationError, StatisticsError
from emitterkit.presets import GEV1
from emitterkit.rates import g2_curve_binned, g2_parameters_at_power
from emitterkit.simulate import Pulsed, SimConfig, background_for_purity, simulate
from emitterkit.timetags import SYNC, TimeTagStream

from oracles import all_pairs_histogram


def random_stream(rng, n, duration_ps):
    ts = np.sort(rng.integers(0, duration_ps + 1, n))
    ch = rng.integers(0, 2, n)
    return TimeTagStream(ts, ch, duration_ps)


def poisson_stream(rng, rate_ghz, duration_ns):
    parts = []
    for ch in (0, 1):
        n = rng.poisson(rate_ghz * duration_ns)
        parts.append((np.sort(rng.integers(0, int(duration_ns * 1000), n)), np.full(n, ch)))
    ts = np.concatenate([p[0] for p in parts])
    ch = np.concatenate([p[1] for p in parts])
    order = np.argsort(ts, kind="stable")
    return TimeTagStream(ts[order], ch[order], int(duration_ns * 1000))


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    n=st.integers(0, 120),
    width_ps=st.integers(1, 50),
    n_side=st.integers(10, 40),
)
def test_matches_all_pairs_oracle(seed, n, width_ps, n_side):
    rng = np.random.default_rng(seed)
    s = random_stream(rng, n, 20 * width_ps * n_side)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        h = correlate(s, width_ps / 1000, n_side * width_ps / 1000)
    ref = all_pairs_histogram(s.channel(0), s.channel(1), width_ps, n_side)
    assert np.array_equal(h.counts, ref)


def test_integer_delays_on_bin_edges():
    # delays of exactly half a bin are ties; they go outward on both sides
    s = TimeTagStream([1000, 1005, 2000, 2010], [0, 1, 1, 0], 5000)
    h = correlate(s, 0.01, 0.1)
    ref = all_pairs_histogram(s.channel(0), s.channel(1), 10, 10)
    assert np.array_equal(h.counts, ref)
    assert h.counts[h.n_side + 1] == 1 and h.counts[h.n_side - 1] == 1


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 400))
def test_time_reversal_mirrors(seed, n):
    rng = np.random.default_rng(seed)
    s = random_stream(rng, n, 10**6)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        h = correlate(s, 1.0, 40.0)
        r = correlate(s.reversed(), 1.0, 40.0)
    assert np.array_equal(r.counts, h.counts[::-1])


def test_channel_swap_mirrors():
    rng = np.random.default_rng(0)
    s = random_stream(rng, 3000, 10**7)
    h = correlate(s, 0.5, 20.0)
    swapped = correlate(s, 0.5, 20.0, start_channel=1, stop_channel=0)
    assert np.array_equal(swapped.counts, h.counts[::-1])


@pytest.mark.parametrize("factor", [3, 5])
def test_bin_nesting(factor):
    # odd refinement: every coarse centred bin is the union of `factor` fine bins
    rng = np.random.default_rng(1)
    s = random_stream(rng, 5000, 10**7)
    coarse = correlate(s, 0.03 * factor, 0.03 * factor * 20)
    fine_side = factor * 20 + factor // 2
    fine = correlate(s, 0.03, 0.03 * fine_side)
    summed = fine.counts.reshape(-1, factor).sum(axis=1)
    assert np.array_equal(summed, coarse.counts)


def test_streaming_equals_batch():
    rng = np.random.default_rng(2)
    s = random_stream(rng, 20000, 10**8)
    h = correlate(s, 2.0, 100.0)
    corr = Correlator(2.0, 100.0)
    cuts = np.sort(rng.choice(len(s), 30, replace=False))
    for part_t, part_c in zip(np.split(s.timestamps, cuts), np.split(s.channels, cuts)):
        corr.add(part_t, part_c)
    assert np.array_equal(corr.histogram(s.duration_ps).counts, h.counts)


def test_pair_blocking(monkeypatch):
    import emitterkit.correlate as mod

    rng = np.random.default_rng(3)
    s = random_stream(rng, 4000, 10**6)
    ref = correlate(s, 1.0, 50.0)
    monkeypatch.setattr(mod, "PAIR_BLOCK", 97)
    assert np.array_equal(correlate(s, 1.0, 50.0).counts, ref.counts)


def test_unsorted_and_out_of_order_chunks_rejected():
    s = TimeTagStream([5, 3], [0, 1], 10)
    with pytest.raises(DataError):
        correlate(s, 0.001, 0.01)
    corr = Correlator(0.001, 0.01)
    corr.add([10, 20], [0, 1])
    with pytest.raises(DataError):
        corr.add([15], [0])


def test_geometry_errors():
    s = TimeTagStream([1], [0], 10)
    with pytest.raises(DataError):
        correlate(s, 1.0, 5.0)
    with pytest.raises(DataError):
        correlate(s, 0.0001, 0.01)


def test_empty_channel_warns():
    s = TimeTagStream([1, 2, 3], [0, 0, 0], 10**6)
    with pytest.warns(RuntimeWarning):
        h = correlate(s, 1.0, 20.0)
    assert h.metadata["status"] == "empty-channel"
    assert h.counts.sum() == 0
    with pytest.raises(NormalizationError):
        normalize(h, "tail")
    with pytest.raises(NormalizationError):
        normalize(h, "rate")


def test_poisson_is_flat_and_modes_agree():
    rng = np.random.default_rng(4)
    s = poisson_stream(rng, 0.002, 2e8)
    h = correlate(s, 1.0, 200.0)
    tail = normalize(h, "tail")
    rate = normalize(h, "rate")
    assert abs(tail.normalized.mean() - 1) < 0.01
    assert abs(rate.normalized.mean() - 1) < 0.01
    assert np.median(np.abs(tail.normalized - rate.normalized)) < 0.02
    chi2 = np.sum(((rate.normalized - 1) / rate.sigma) ** 2)
    assert chi2 / len(h.counts) < 1.3


def test_sigma_matches_seed_spread():
    values, sigmas = [], []
    for seed in range(100):
        s = poisson_stream(np.random.default_rng(seed), 0.01, 1e6)
        h = normalize(correlate(s, 2.0, 60.0), "rate")
        values.append(h.normalized)
        sigmas.append(h.sigma)
    spread = np.std(values, axis=0, ddof=1)
    reported = np.mean(sigmas, axis=0)
    ratio = spread / reported
    assert abs(np.mean(ratio) - 1) < 0.2


def test_tail_window_validation():
    rng = np.random.default_rng(5)
    h = correlate(poisson_stream(rng, 0.01, 1e6), 1.0, 100.0)
    with pytest.raises(NormalizationError):
        normalize(h, "tail", tail_window=(10.0, 100.0))
    with pytest.raises(NormalizationError):
        normalize(h, "tail", tail_window=(95.0, 100.0))
    with pytest.raises(NormalizationError):
        normalize(h, "bogus")
    n = normalize(h, "tail", tail_window=(60.0, 100.0))
    assert n.tail_window == (60.0, 100.0)


def test_background_correction_inverts_mixing():
    g = np.linspace(0, 2, 21)
    rho = 0.8
    mixed = rho**2 * g + 1 - rho**2
    h = CorrelationHistogram(1.0, np.zeros(21, np.int64), normalized=mixed, sigma=np.ones(21), normalization_mode="tail")
    out = background_correct(h, rho)
    assert np.allclose(out.normalized, g)
    assert np.allclose(out.sigma, 1 / rho**2)
    with pytest.raises(NormalizationError):
        background_correct(CorrelationHistogram(1.0, np.zeros(21)), 0.9)


def test_simulated_cw_g2_matches_model():
    cfg = SimConfig(GEV1, 1.0, 2e9, detection_efficiency=0.2, rng_seed=6)
    h = normalize(correlate(simulate(cfg), 1.0, 2000.0), "rate")
    p = g2_parameters_at_power(GEV1, 1.0)
    model = g2_curve_binned(p.a, p.tau1, p.tau2, h.bin_edges)
    pull = (h.normalized - model) / h.sigma
    assert abs(pull.mean()) < 0.1
    assert pull.std() < 1.2
    assert h.normalized[h.n_side] < 0.1


def test_pulsed_g2_zero_single_emitter():
    cfg = SimConfig(GEV1, 1.0, 1e9, detection_efficiency=0.3, mode=Pulsed(100.0), rng_seed=7)
    r = pulsed_g2_analysis(simulate(cfg), 100.0)
    assert r.value < 0.05
    assert len(r.side_peaks) == 20


def test_pulsed_g2_zero_with_background():
    base = SimConfig(GEV1, 4.0, 1e9, mode=Pulsed(100.0), rng_seed=8)
    cfg = SimConfig(**{**base.__dict__, "background_rate": background_for_purity(base, 0.9)})
    r = pulsed_g2_analysis(simulate(cfg), 100.0)
    # gate-defined purity: g2(0) = 1 - rho^2 plus the background-background term
    assert 0.15 < r.value < 0.27
    assert r.sigma > 0


def test_pulsed_g2_statistics_errors():
    cfg = SimConfig(GEV1, 1.0, 1e3, mode=Pulsed(100.0))
    with pytest.raises(StatisticsError):
        pulsed_g2_zero(simulate(cfg), 100.0)
    with pytest.raises(StatisticsError):
        pulsed_g2_zero(simulate(SimConfig(GEV1, 1.0, 1e6, mode=Pulsed(100.0))), 100.0, n_side_peaks=2)
    empty = SimConfig(GEV1, 1.0, 1e6, detection_efficiency=0.0, mode=Pulsed(100.0))
    with pytest.raises(StatisticsError), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        pulsed_g2_zero(simulate(empty), 100.0)


def test_decay_histogram():
    cfg = SimConfig(GEV1, 1.0, 1e8, detection_efficiency=0.5, mode=Pulsed(200.0), rng_seed=9)
    s = simulate(cfg)
    d = decay_histogram(s, 200.0, 0.5)
    assert d.counts.sum() + d.metadata["dropped"] == np.count_nonzero(s.channels != SYNC)
    assert d.metadata["dropped"] == 0
    # log-linear slope over the first decade gives the decay time
    t, c = d.t[:80], d.counts[:80]
    slope = np.polyfit(t, np.log(c), 1, w=np.sqrt(c))[0]
    assert abs(-1 / slope - 1 / (GEV1.k21 + GEV1.k23)) < 0.4
    with pytest.raises(DataError):
        decay_histogram(s, 200.0, 5.0)
    cw = simulate(SimConfig(GEV1, 1.0, 1e6, detection_efficiency=0.3))
    with pytest.raises(DataError):
        decay_histogram(cw, 200.0, 0.5)
