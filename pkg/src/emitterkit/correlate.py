"""Photon correlation histograms from time-tag streams.

Bins are centred on multiples of the bin width, k * width for |k| <= n_side,
so the zero-delay bin is a bin of its own.  A delay d (integer ps) goes to
bin sign(d) * floor((2|d| + width) / (2 width)); the rule depends only on |d|
and its sign, which makes the histogram of a time-reversed stream the exact
mirror image of the original.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError, NormalizationError, StatisticsError
from .timetags import PS_PER_NS, SYNC, ns_to_ps

TAIL_PLATEAU = "tail"
RATE_PRODUCT = "rate"
RAW = "raw"

# upper bound on delay pairs materialised at once
PAIR_BLOCK = 1 << 22


@dataclass(frozen=True, eq=False)
class CorrelationHistogram:
    bin_width: float
    counts: np.ndarray
    normalized: np.ndarray | None = None
    sigma: np.ndarray | None = None
    normalization_mode: str = RAW
    tail_window: tuple | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or len(counts) % 2 != 1:
            raise DataError("a correlation histogram has an odd number of centred bins")
        object.__setattr__(self, "counts", counts)

    @property
    def n_side(self):
        return len(self.counts) // 2

    @property
    def tau(self):
        """Bin centres (ns)."""
        return np.arange(-self.n_side, self.n_side + 1) * self.bin_width

    @property
    def bin_edges(self):
        return (np.arange(-self.n_side, self.n_side + 2) - 0.5) * self.bin_width

    @property
    def max_delay(self):
        return self.n_side * self.bin_width

    def __eq__(self, other):
        if not isinstance(other, CorrelationHistogram):
            return NotImplemented

        def same(x, y):
            if x is None or y is None:
                return x is None and y is None
            return np.array_equal(x, y)

        return (
            self.bin_width == other.bin_width
            and np.array_equal(self.counts, other.counts)
            and same(self.normalized, other.normalized)
            and same(self.sigma, other.sigma)
            and self.normalization_mode == other.normalization_mode
            and self.tail_window == other.tail_window
            and self.metadata == other.metadata
        )

    def mirrored(self):
        def flip(x):
            return None if x is None else x[::-1].copy()

        return replace(self, counts=flip(self.counts), normalized=flip(self.normalized), sigma=flip(self.sigma))


def _bin_geometry(bin_width, max_delay):
    width_ps = ns_to_ps(bin_width, "bin width")
    if width_ps <= 0:
        raise DataError("bin width must be positive")
    n_side = int(round(max_delay / bin_width))
    if n_side < 10:
        raise DataError("max_delay must be at least 10 bin widths")
    # largest |d| that still falls into bin n_side
    reach_ps = (2 * width_ps * n_side + width_ps - 1) // 2
    return width_ps, n_side, reach_ps


def _check_sorted(ts, after=None):
    if len(ts) == 0:
        return
    if after is not None and ts[0] < after:
        raise DataError("time tags out of order across chunks")
    if np.any(ts[1:] < ts[:-1]):
        bad = int(np.argmax(ts[1:] < ts[:-1])) + 1
        raise DataError(f"time tags are not sorted (event {bad})")


def _pair_bins(counts, starts, stops, width_ps, n_side, reach_ps):
    """Add every (start, stop) pair with |stop - start| <= reach to ``counts``."""
    if len(starts) == 0 or len(stops) == 0:
        return
    lo = np.searchsorted(stops, starts - reach_ps, side="left")
    hi = np.searchsorted(stops, starts + reach_ps, side="right")
    n_pairs = hi - lo
    cum = np.cumsum(n_pairs)
    block_ends = np.searchsorted(cum, np.arange(PAIR_BLOCK, cum[-1] + PAIR_BLOCK, PAIR_BLOCK), side="right")
    first = 0
    for last in np.unique(np.append(block_ends, len(starts))):
        last = max(int(last), first + 1)
        sl = slice(first, last)
        n = n_pairs[sl]
        total = int(n.sum())
        first = last
        if total == 0:
            continue
        offset = np.repeat(lo[sl] - (np.cumsum(n) - n), n) + np.arange(total)
        d = stops[offset] - np.repeat(starts[sl], n)
        k = (2 * np.abs(d) + width_ps) // (2 * width_ps)
        counts += np.bincount(n_side + np.where(d >= 0, k, -k), minlength=2 * n_side + 1)
        if first >= len(starts):
            break


class Correlator:
    """Streaming cross-correlator between a start and a stop channel.

    Feed time-ordered chunks with :meth:`add`; only events within the
    correlation window of the latest timestamp are retained between chunks,
    and the result is identical to correlating the concatenated stream.
    """

    def __init__(self, bin_width, max_delay, start_channel=0, stop_channel=1):
        if start_channel == stop_channel:
            raise DataError("start and stop channels must differ")
        self.bin_width = bin_width
        self.width_ps, self.n_side, self.reach_ps = _bin_geometry(bin_width, max_delay)
        self.start_channel = start_channel
        self.stop_channel = stop_channel
        self.counts = np.zeros(2 * self.n_side + 1, np.int64)
        self.n_start = 0
        self.n_stop = 0
        self._old_start = np.empty(0, np.int64)
        self._old_stop = np.empty(0, np.int64)
        self._last = None

    def add(self, timestamps, channels):
        ts = np.asarray(timestamps, np.int64)
        ch = np.asarray(channels)
        _check_sorted(ts, self._last)
        if len(ts) == 0:
            return self
        new_start = ts[ch == self.start_channel]
        new_stop = ts[ch == self.stop_channel]
        self.n_start += len(new_start)
        self.n_stop += len(new_stop)
        geom = (self.width_ps, self.n_side, self.reach_ps)
        _pair_bins(self.counts, new_start, np.concatenate([self._old_stop, new_stop]), *geom)
        _pair_bins(self.counts, self._old_start, new_stop, *geom)
        self._last = int(ts[-1])
        cutoff = self._last - self.reach_ps
        starts = np.concatenate([self._old_start, new_start])
        stops = np.concatenate([self._old_stop, new_stop])
        self._old_start = starts[np.searchsorted(starts, cutoff):]
        self._old_stop = stops[np.searchsorted(stops, cutoff):]
        return self

    def add_stream(self, stream):
        return self.add(stream.timestamps, stream.channels)

    def histogram(self, duration_ps, metadata=None):
        meta = {
            "start_channel": self.start_channel,
            "stop_channel": self.stop_channel,
            "n_start": self.n_start,
            "n_stop": self.n_stop,
            "duration_ps": int(duration_ps),
            "bin_width_ps": self.width_ps,
        }
        if self.n_start == 0 or self.n_stop == 0:
            meta["status"] = "empty-channel"
            warnings.warn("a correlation channel is empty; histogram is all zeros", RuntimeWarning, stacklevel=2)
        meta.update(metadata or {})
        return CorrelationHistogram(bin_width=self.bin_width, counts=self.counts.copy(), metadata=meta)


def correlate(stream, bin_width=1.0, max_delay=None, start_channel=0, stop_channel=1):
    """Raw cross-correlation histogram of two detector channels.

    Every start event is paired with every stop event whose delay falls in
    the centred bins up to ``max_delay`` (ns); no start-stop truncation.
    """
    if max_delay is None:
        raise DataError("max_delay is required")
    corr = Correlator(bin_width, max_delay, start_channel, stop_channel)
    corr.add(stream.timestamps, stream.channels)
    return corr.histogram(stream.duration_ps)


def default_tail_window(hist):
    return (0.75 * hist.max_delay, hist.max_delay)


def normalize(hist, mode=TAIL_PLATEAU, tail_window=None):
    """Normalize raw coincidence counts to a g2 estimate.

    ``"tail"`` divides by the mean count in the tail window (both signs of
    delay), setting the long-delay level to 1.  ``"rate"`` divides by the
    uncorrelated expectation r_start * r_stop * width * (T - |tau|).
    Zero-count bins get the uncertainty of a single count.
    """
    counts = hist.counts.astype(float)
    unit_sigma = np.sqrt(counts + (counts == 0))
    tau = hist.tau
    if mode == TAIL_PLATEAU:
        lo, hi = default_tail_window(hist) if tail_window is None else tail_window
        eps = 1e-9 * hist.max_delay
        if lo < hist.max_delay / 2 - eps or hi > hist.max_delay + eps or lo >= hi:
            raise NormalizationError("tail window must lie inside [max_delay/2, max_delay]")
        in_tail = (np.abs(tau) >= lo - eps) & (np.abs(tau) <= hi + eps)
        if np.count_nonzero(in_tail) < 20:
            raise NormalizationError("tail window holds fewer than 20 bins")
        scale = counts[in_tail].mean()
        if scale <= 0:
            raise NormalizationError("tail window is empty")
        return replace(
            hist,
            normalized=counts / scale,
            sigma=unit_sigma / scale,
            normalization_mode=TAIL_PLATEAU,
            tail_window=(float(lo), float(hi)),
        )
    if mode == RATE_PRODUCT:
        meta = hist.metadata
        try:
            n0, n1, duration_ps = meta["n_start"], meta["n_stop"], meta["duration_ps"]
        except KeyError as exc:
            raise NormalizationError(f"rate normalization needs {exc.args[0]} in the histogram metadata") from None
        duration = duration_ps / PS_PER_NS
        if n0 == 0 or n1 == 0 or duration <= hist.max_delay:
            raise NormalizationError("rate normalization needs non-empty channels and duration > max_delay")
        expected = (n0 / duration) * (n1 / duration) * hist.bin_width * (duration - np.abs(tau))
        return replace(
            hist,
            normalized=counts / expected,
            sigma=unit_sigma / expected,
            normalization_mode=RATE_PRODUCT,
            tail_window=None,
        )
    raise NormalizationError(f"unknown normalization mode {mode!r}")


def background_correct(hist, purity):
    """Remove uncorrelated background: g2c = (g2 - (1 - rho**2)) / rho**2.

    ``purity`` is rho = S / (S + B).  Not applied anywhere by default.
    """
    if hist.normalized is None:
        raise NormalizationError("normalize the histogram before background correction")
    if not 0.0 < purity <= 1.0:
        raise ValueError("purity must lie in (0, 1]")
    r2 = purity * purity
    return replace(
        hist,
        normalized=(hist.normalized - (1.0 - r2)) / r2,
        sigma=hist.sigma / r2,
        metadata=dict(hist.metadata, background_purity=purity),
    )


@dataclass(frozen=True)
class PulsedG2:
    value: float
    sigma: float
    central_counts: int
    side_mean: float
    side_peaks: np.ndarray
    side_counts: np.ndarray


def pulsed_correlator(period, n_side_peaks=10):
    """Correlator set up for peak integration: bins of half a period."""
    if 2 * n_side_peaks < 5:
        raise StatisticsError("need at least 5 side peaks")
    return Correlator(period / 2, n_side_peaks * period)


def pulsed_g2_from_counts(counts):
    """Peak ratio from the counts of a :func:`pulsed_correlator`."""
    counts = np.asarray(counts)
    n_side = len(counts) // 2
    index = np.arange(-n_side, n_side + 1)
    side = (index % 2 == 0) & (index != 0)
    side_counts = counts[side]
    side_mean = side_counts.mean()
    if side_mean == 0:
        raise StatisticsError("no coincidences in the side peaks")
    c0 = int(counts[n_side])
    value = c0 / side_mean
    rel = np.sqrt((1.0 / c0 if c0 else 0.0) + 1.0 / side_counts.sum())
    return PulsedG2(
        value=float(value),
        sigma=float(value * rel) if c0 else float(1.0 / side_mean),
        central_counts=c0,
        side_mean=float(side_mean),
        side_peaks=index[side] // 2,
        side_counts=side_counts,
    )


def pulsed_g2_analysis(stream, period, n_side_peaks=10):
    """Central-to-side peak ratio of the pulsed cross-correlation.

    Each peak is integrated over a window of half a period centred on it;
    sync markers are ignored.
    """
    corr = pulsed_correlator(period, n_side_peaks)
    if 2 * n_side_peaks * period > stream.duration_ns:
        raise StatisticsError("stream too short for the requested side peaks")
    corr.add(stream.timestamps, stream.channels)
    return pulsed_g2_from_counts(corr.counts)


def pulsed_g2_zero(stream, period, n_side_peaks=10):
    return pulsed_g2_analysis(stream, period, n_side_peaks).value


@dataclass(frozen=True, eq=False)
class DecayHistogram:
    """Counts of detection delay after the preceding laser sync marker."""

    bin_width: float
    counts: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def bin_edges(self):
        return np.arange(len(self.counts) + 1) * self.bin_width

    @property
    def t(self):
        return (np.arange(len(self.counts)) + 0.5) * self.bin_width

    def __eq__(self, other):
        if not isinstance(other, DecayHistogram):
            return NotImplemented
        return (
            self.bin_width == other.bin_width
            and np.array_equal(self.counts, other.counts)
            and self.metadata == other.metadata
        )


class DecayAccumulator:
    """Streaming version of :func:`decay_histogram`."""

    def __init__(self, period, bin_width):
        if not bin_width < period / 50:
            raise DataError("decay bin width must be below period / 50")
        self.period = period
        self.bin_width = bin_width
        self.width_ps = ns_to_ps(bin_width, "bin width")
        self.n_bins = int(round(period / bin_width))
        self.counts = np.zeros(self.n_bins, np.int64)
        self.n_sync = 0
        self.dropped = 0
        self._last_sync = None

    def add(self, timestamps, channels):
        ts = np.asarray(timestamps, np.int64)
        ch = np.asarray(channels)
        sync = ts[ch == SYNC]
        det = ts[(ch == 0) | (ch == 1)]
        if self._last_sync is not None:
            sync_all = np.concatenate([[self._last_sync], sync])
        else:
            sync_all = sync
        self.n_sync += len(sync)
        if len(sync_all):
            idx = np.searchsorted(sync_all, det, side="right") - 1
            valid = idx >= 0
            delay = det[valid] - sync_all[idx[valid]]
            b = delay // self.width_ps
            inside = b < self.n_bins
            self.dropped += int(np.count_nonzero(~inside)) + int(np.count_nonzero(~valid))
            self.counts += np.bincount(b[inside], minlength=self.n_bins)
            self._last_sync = int(sync_all[-1])
        else:
            self.dropped += len(det)
        return self

    def histogram(self, metadata=None):
        if self.n_sync == 0:
            raise DataError("stream has no sync channel")
        meta = {"period_ns": self.period, "n_sync": self.n_sync, "dropped": self.dropped}
        meta.update(metadata or {})
        return DecayHistogram(bin_width=self.bin_width, counts=self.counts.copy(), metadata=meta)


def decay_histogram(stream, period, bin_width):
    """Histogram of detection delay since the previous sync marker."""
    acc = DecayAccumulator(period, bin_width)
    acc.add(stream.timestamps, stream.channels)
    return acc.histogram()
