"""Kinetic Monte Carlo simulation of the three-level emitter and its HBT detection chain.

Two samplers are provided for continuous-wave excitation:

``"trajectory"``
    Steps through every excitation attempt: wait Exp(k12) in the ground
    state, Exp(k21 + k23) in the excited state, branch to a photon with
    probability k21 / (k21 + k23) or into the metastable state, where the
    emitter waits Exp(k31) before returning to the ground state.  Tracks state
    occupations.

``"renewal"``
    Every photon emission leaves the emitter in the ground state, so the
    emitted stream is a renewal process and so is its thinned (detected)
    version.  The time between two detections is a sum of J excitation
    attempts and S shelving periods, with N ~ Geometric(eta) emissions,
    S ~ NegBinomial(N, k21/(k21+k23)) and J = N + S.  This samples the same
    process as ``"trajectory"`` at a cost proportional to the number of
    detections instead of emissions.

Randomness comes from ``numpy.random.PCG64`` seeded by
``SeedSequence(rng_seed).spawn(3)``: child 0 drives the emitter, children 1
and 2 the background on detector channels 0 and 1.  Draws are made in blocks
of :data:`CHUNK_EVENTS`; that block size is part of the reproducibility
contract and is recorded in the stream metadata.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .presets import DEFAULT_DETECTION_EFFICIENCY
from .rates import EmitterModel, deshelving_rate, rates_at_power, steady_state
from .timetags import SYNC, TimeTagStream, ns_to_ps

CHUNK_EVENTS = 1 << 18
RNG_NAME = "numpy.random.PCG64"
SAMPLERS = ("renewal", "trajectory")


@dataclass(frozen=True)
class CW:
    kind: str = field(default="cw", init=False)


@dataclass(frozen=True)
class Pulsed:
    """Delta-pulse excitation every ``period`` ns."""

    period: float
    excitation_probability: float = 1.0
    kind: str = field(default="pulsed", init=False)


@dataclass(frozen=True)
class SimConfig:
    model: EmitterModel
    power: float
    duration: float
    detection_efficiency: float = DEFAULT_DETECTION_EFFICIENCY
    background_rate: float = 0.0
    splitter_ratio: float = 0.5
    rng_seed: int = 0
    mode: CW | Pulsed = field(default_factory=CW)
    sampler: str = "renewal"

    def __post_init__(self):
        def bad(msg):
            raise ConfigError(msg)

        if not isinstance(self.model, EmitterModel):
            bad("model must be an EmitterModel")
        if not (math.isfinite(self.power) and self.power >= 0):
            bad("power must be >= 0")
        if not (math.isfinite(self.duration) and self.duration > 0):
            bad("duration must be > 0")
        if not 0.0 <= self.detection_efficiency <= 1.0:
            bad("detection_efficiency must lie in [0, 1]")
        if not 0.0 <= self.splitter_ratio <= 1.0:
            bad("splitter_ratio must lie in [0, 1]")
        if not (math.isfinite(self.background_rate) and self.background_rate >= 0):
            bad("background_rate must be >= 0")
        if not (isinstance(self.rng_seed, (int, np.integer)) and 0 <= self.rng_seed < 2**64):
            bad("rng_seed must be a 64-bit unsigned integer")
        if self.sampler not in SAMPLERS:
            bad(f"sampler must be one of {SAMPLERS}")
        if isinstance(self.mode, Pulsed):
            if not self.mode.period > 0:
                bad("pulse period must be > 0")
            if not 0.0 <= self.mode.excitation_probability <= 1.0:
                bad("excitation_probability must lie in [0, 1]")
            try:
                ns_to_ps(self.mode.period / 2, "half pulse period")
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        elif not isinstance(self.mode, CW):
            bad("mode must be CW() or Pulsed(...)")

    @property
    def duration_ps(self):
        return int(round(self.duration * 1000))

    def to_dict(self):
        d = asdict(self)
        d["model"] = self.model.as_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["model"] = EmitterModel(**d["model"])
        mode = dict(d.get("mode", {"kind": "cw"}))
        kind = mode.pop("kind")
        d["mode"] = CW() if kind == "cw" else Pulsed(**mode)
        return cls(**d)


def _streams(seed):
    children = np.random.SeedSequence(seed).spawn(3)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


class _Clock:
    """Turns float intervals (ns) into integer ps timestamps without drift.

    Absolute time is ``base_ps + frac_ps`` with ``0 <= frac_ps < 1``, so the
    float part never grows beyond one chunk.
    """

    def __init__(self):
        self.base_ps = 0
        self.frac_ps = 0.0

    def advance(self, intervals_ns):
        """Return (base_ps, ends) with interval ends in ps relative to base_ps."""
        base = self.base_ps
        rel = self.frac_ps + np.cumsum(intervals_ns * 1000.0)
        if len(rel):
            whole = math.floor(rel[-1])
            self.base_ps += whole
            self.frac_ps = rel[-1] - whole
        return base, rel


class _PoissonSource:
    def __init__(self, rng, rate_ghz):
        self.rng = rng
        self.rate = rate_ghz
        self.clock = _Clock()
        self.buffer = np.empty(0, np.int64)

    def until(self, horizon_ps):
        """Events with timestamp <= horizon_ps not yet handed out."""
        if self.rate == 0.0:
            return np.empty(0, np.int64)
        while not len(self.buffer) or self.buffer[-1] <= horizon_ps:
            base, rel = self.clock.advance(self.rng.exponential(1.0 / self.rate, CHUNK_EVENTS))
            self.buffer = np.concatenate([self.buffer, base + np.floor(rel).astype(np.int64)])
        n = int(np.searchsorted(self.buffer, horizon_ps, side="right"))
        out, self.buffer = self.buffer[:n], self.buffer[n:]
        return out


class _SyncSource:
    def __init__(self, period_ps):
        self.period_ps = period_ps
        self.next_index = 0

    def until(self, horizon_ps):
        last = horizon_ps // self.period_ps
        out = np.arange(self.next_index, last + 1, dtype=np.int64) * self.period_ps
        self.next_index = max(self.next_index, last + 1)
        return out


def _route(rng, n, splitter_ratio):
    return np.where(rng.random(n) < splitter_ratio, 0, 1).astype(np.int8)


def _first_true(mask):
    return int(np.argmax(mask)) if mask.any() else len(mask)


# Emitter samplers yield (timestamps, channels, horizon): every detection at or
# before `horizon` has been produced.  horizon None means the emitter is
# permanently shelved and no further photons follow.


def _cw_renewal_chunks(cfg, rng):
    rates = rates_at_power(cfg.model, cfg.power)
    eta = cfg.detection_efficiency
    if rates.k12 == 0.0 or eta == 0.0:
        return
    gamma = rates.k21 + rates.k23
    p_emit = rates.k21 / gamma
    clock = _Clock()
    while True:
        n_emit = rng.geometric(eta, CHUNK_EVENTS)
        if p_emit < 1.0:
            n_shelf = rng.negative_binomial(n_emit, p_emit)
        else:
            n_shelf = np.zeros(CHUNK_EVENTS, np.int64)
        attempts = n_emit + n_shelf
        gaps = rng.gamma(attempts, 1.0 / rates.k12) + rng.gamma(attempts, 1.0 / gamma)
        if rates.k31 > 0.0:
            gaps += rng.gamma(n_shelf, 1.0 / rates.k31)
        channels = _route(rng, CHUNK_EVENTS, cfg.splitter_ratio)
        n = CHUNK_EVENTS if rates.k31 > 0.0 else _first_true(n_shelf > 0)
        base, rel = clock.advance(gaps[:n])
        ts = base + np.floor(rel).astype(np.int64)
        if n < CHUNK_EVENTS:
            yield ts, channels[:n], None
            return
        yield ts, channels, int(ts[-1])


class _Occupation:
    def __init__(self, duration_ns):
        self.duration = duration_ns
        self.time = np.zeros(3)

    def add(self, state, starts, lengths):
        ends = np.minimum(starts + lengths, self.duration)
        self.time[state] += np.sum(np.clip(ends - np.minimum(starts, self.duration), 0.0, None))

    @property
    def fractions(self):
        return self.time / self.duration


def _cw_trajectory_chunks(cfg, rng, occupation):
    rates = rates_at_power(cfg.model, cfg.power)
    if rates.k12 == 0.0:
        occupation.time[0] = occupation.duration
        return
    gamma = rates.k21 + rates.k23
    p_emit = rates.k21 / gamma
    t0_ns = 0.0
    clock = _Clock()
    while True:
        t_up = rng.exponential(1.0 / rates.k12, CHUNK_EVENTS)
        t_dec = rng.exponential(1.0 / gamma, CHUNK_EVENTS)
        photon = rng.random(CHUNK_EVENTS) < p_emit
        if rates.k31 > 0.0:
            t_shelf = np.where(photon, 0.0, rng.exponential(1.0 / rates.k31, CHUNK_EVENTS))
        else:
            t_shelf = np.where(photon, 0.0, np.inf)
        detected = rng.random(CHUNK_EVENTS) < cfg.detection_efficiency
        channels = _route(rng, CHUNK_EVENTS, cfg.splitter_ratio)

        length = t_up + t_dec + t_shelf
        n_finite = _first_true(~np.isfinite(length))
        n = min(n_finite + 1, CHUNK_EVENTS)
        starts = t0_ns + np.concatenate([[0.0], np.cumsum(length[: n - 1])])
        occupation.add(0, starts, t_up[:n])
        occupation.add(1, starts + t_up[:n], t_dec[:n])
        occupation.add(2, starts + t_up[:n] + t_dec[:n], t_shelf[:n])

        base, frac0 = clock.base_ps, clock.frac_ps
        _, rel_end = clock.advance(length[:n_finite])
        rel_start = np.concatenate([[frac0], rel_end])[:n]
        keep = photon[:n] & detected[:n]
        emit = rel_start[keep] + (t_up[:n][keep] + t_dec[:n][keep]) * 1000.0
        ts = base + np.floor(emit).astype(np.int64)
        if n_finite < CHUNK_EVENTS:
            occupation.time[2] += max(0.0, occupation.duration - occupation.time.sum())
            yield ts, channels[:n][keep], None
            return
        t0_ns = starts[-1] + length[n - 1]
        yield ts, channels[keep], base + math.floor(rel_end[-1])


def _pulsed_chunks(cfg, rng):
    rates = rates_at_power(cfg.model, cfg.power)
    period = cfg.mode.period
    period_ps = ns_to_ps(period, "pulse period")
    p_exc = cfg.mode.excitation_probability
    if p_exc == 0.0 or cfg.detection_efficiency == 0.0:
        return
    gamma = rates.k21 + rates.k23
    p_emit = rates.k21 / gamma
    next_free = 0  # first pulse index at which the emitter is back in the ground state
    pending_ts = np.empty(0, np.int64)
    pending_ch = np.empty(0, np.int8)
    while True:
        missed = rng.geometric(p_exc, CHUNK_EVENTS) - 1
        decay = rng.exponential(1.0 / gamma, CHUNK_EVENTS)
        photon = rng.random(CHUNK_EVENTS) < p_emit
        if rates.k31 > 0.0:
            shelf = rng.exponential(1.0 / rates.k31, CHUNK_EVENTS)
        else:
            shelf = np.full(CHUNK_EVENTS, np.inf)
        detected = rng.random(CHUNK_EVENTS) < cfg.detection_efficiency
        channels = _route(rng, CHUNK_EVENTS, cfg.splitter_ratio)

        back = decay + np.where(photon, 0.0, shelf)
        n = min(_first_true(~np.isfinite(back)) + 1, CHUNK_EVENTS)
        busy = np.ceil(np.where(np.isfinite(back[:n]), back[:n], 0.0) / period).astype(np.int64)
        pulse = next_free + np.cumsum(missed[:n]) + np.concatenate([[0], np.cumsum(busy[:-1])])
        keep = photon[:n] & detected[:n]
        ts = pulse[keep] * period_ps + np.floor(decay[:n][keep] * 1000.0).astype(np.int64)
        ts = np.concatenate([pending_ts, ts])
        ch = np.concatenate([pending_ch, channels[:n][keep]])
        if np.isinf(back[n - 1]):
            yield ts, ch, None
            return
        horizon = int(pulse[-1]) * period_ps
        split = int(np.searchsorted(ts, horizon, side="right"))
        pending_ts, pending_ch = ts[split:], ch[split:]
        next_free = int(pulse[-1] + busy[-1])
        yield ts[:split], ch[:split], horizon


def _assemble(cfg, emitter_chunks, rngs):
    """Merge emitter detections with background and sync markers, chunk by chunk."""
    duration_ps = cfg.duration_ps
    sources = [(0, _PoissonSource(rngs[1], cfg.background_rate)), (1, _PoissonSource(rngs[2], cfg.background_rate))]
    total_rate = 2 * cfg.background_rate
    if isinstance(cfg.mode, Pulsed):
        sources.append((SYNC, _SyncSource(ns_to_ps(cfg.mode.period, "pulse period"))))
        total_rate += 1.0 / cfg.mode.period

    def collect(horizon, ts, ch):
        parts_ts, parts_ch = [ts], [ch]
        for code, src in sources:
            t = src.until(horizon)
            parts_ts.append(t)
            parts_ch.append(np.full(len(t), code, np.int8))
        ts = np.concatenate(parts_ts)
        ch = np.concatenate(parts_ch)
        order = np.argsort(ts, kind="stable")
        return ts[order], ch[order]

    for ts, ch, horizon in emitter_chunks:
        if horizon is not None and horizon < duration_ps:
            yield collect(horizon, ts, ch)
            continue
        inside = ts <= duration_ps
        if horizon is not None:
            yield collect(duration_ps, ts[inside], ch[inside])
            return
        # permanently shelved: flush the remaining photons, then background only
        yield collect(min(duration_ps, int(ts[inside][-1]) if inside.any() else 0), ts[inside], ch[inside])
        break
    step_ps = duration_ps if total_rate == 0 else max(1, int(CHUNK_EVENTS / total_rate * 1000))
    empty_ts, empty_ch = np.empty(0, np.int64), np.empty(0, np.int8)
    horizon = -1
    while horizon < duration_ps:
        horizon = min(duration_ps, horizon + step_ps)
        yield collect(horizon, empty_ts, empty_ch)


def run_metadata(cfg):
    return {
        "source": "simulation",
        "config": cfg.to_dict(),
        "rng": RNG_NAME,
        "numpy_version": np.__version__,
        "seed_streams": "SeedSequence(rng_seed).spawn(3): emitter, background ch0, background ch1",
        "chunk_events": CHUNK_EVENTS,
        "initial_state": 1,
    }


def iter_chunks(config, occupation=None):
    """Yield (timestamps, channels) blocks of the simulated stream in time order.

    Concatenating the blocks gives exactly the stream returned by
    :func:`simulate`; this is the bounded-memory route for long runs.
    """
    rngs = _streams(config.rng_seed)
    if isinstance(config.mode, Pulsed):
        emitter = _pulsed_chunks(config, rngs[0])
    elif config.sampler == "trajectory" or occupation is not None:
        occupation = occupation if occupation is not None else _Occupation(config.duration)
        emitter = _cw_trajectory_chunks(config, rngs[0], occupation)
    else:
        emitter = _cw_renewal_chunks(config, rngs[0])
    yield from _assemble(config, emitter, rngs)


def simulate(config):
    return TimeTagStream.concatenate(iter_chunks(config), config.duration_ps, run_metadata(config))


def simulate_cw(config):
    if not isinstance(config.mode, CW):
        raise ConfigError("simulate_cw needs mode=CW()")
    return simulate(config)


def simulate_pulsed(config):
    if not isinstance(config.mode, Pulsed):
        raise ConfigError("simulate_pulsed needs mode=Pulsed(...)")
    return simulate(config)


def simulate_trajectory(config):
    """CW simulation with the explicit state machine.

    Returns
    -------
    stream : TimeTagStream
    occupation : ndarray, shape (3,)
        Fraction of the run spent in states 1, 2 and 3.
    """
    if not isinstance(config.mode, CW):
        raise ConfigError("trajectory sampling is CW only")
    occ = _Occupation(config.duration)
    cfg = config if config.sampler == "trajectory" else SimConfig(**{**config.__dict__, "sampler": "trajectory"})
    stream = TimeTagStream.concatenate(iter_chunks(cfg, occ), cfg.duration_ps, run_metadata(cfg))
    return stream, occ.fractions


def cw_emission_rate(model, power):
    """Steady-state photon emission rate (GHz)."""
    return steady_state(rates_at_power(model, power)).emission_rate


def pulsed_emission_rate(model, power, period, excitation_probability=1.0):
    """Mean photon emission rate (GHz) under delta-pulse excitation.

    Renewal argument over excitation cycles: a cycle lasts ceil(R/T) - 1 pulses
    of recovery plus a geometric number of pulses until the next successful
    excitation, where R is the time back to the ground state.
    """
    if excitation_probability == 0.0:
        return 0.0
    gamma = model.k21 + model.k23
    p_emit = model.k21 / gamma
    k31 = deshelving_rate(model, power)
    if k31 == 0.0 and model.k23 > 0.0:
        return 0.0

    def geometric_sum(rate):
        # sum_{n>=0} exp(-rate n T)
        return 1.0 / -math.expm1(-rate * period)

    recover_photon = geometric_sum(gamma)
    if model.k23 == 0.0:
        recover_shelf = 0.0
    elif abs(gamma - k31) < 1e-12 * gamma:
        # Erlang(2, gamma) survival summed over the pulse grid
        q = math.exp(-gamma * period)
        recover_shelf = 1 / (1 - q) + gamma * period * q / (1 - q) ** 2
    else:
        recover_shelf = (gamma * geometric_sum(k31) - k31 * geometric_sum(gamma)) / (gamma - k31)
    mean_busy = p_emit * recover_photon + (1 - p_emit) * recover_shelf
    pulses_per_cycle = mean_busy - 1.0 + 1.0 / excitation_probability
    return p_emit / (pulses_per_cycle * period)


def background_for_purity(config, purity):
    """Per-channel background rate (GHz) giving signal fraction ``purity``.

    For CW the fraction refers to the total count rate.  For pulsed excitation
    it refers to counts inside the half-period coincidence gate around each
    pulse, the window used by :func:`emitterkit.correlate.pulsed_g2_zero`;
    the gate holds essentially all signal but only half of the background.
    """
    if not 0.0 < purity <= 1.0:
        raise ConfigError("purity must lie in (0, 1]")
    eta = config.detection_efficiency
    if isinstance(config.mode, Pulsed):
        emitted = pulsed_emission_rate(config.model, config.power, config.mode.period, config.mode.excitation_probability)
        gate = 0.5
    else:
        emitted = cw_emission_rate(config.model, config.power)
        gate = 1.0
    signal_per_channel = 0.5 * eta * emitted
    return signal_per_channel * (1.0 - purity) / (purity * gate)
