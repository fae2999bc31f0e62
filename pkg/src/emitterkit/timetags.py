"""In-memory representation of detector time tags."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

# channel code for laser sync markers; detector channels are 0 and 1
SYNC = 2
CHANNEL_LABELS = {0: "0", 1: "1", SYNC: "sync"}

PS_PER_NS = 1000


def ns_to_ps(value, what="time"):
    """Convert a duration in ns to an integer number of picoseconds."""
    ps = round(value * PS_PER_NS)
    if abs(ps - value * PS_PER_NS) > 1e-6 * max(1.0, abs(ps)):
        raise DataError(f"{what} = {value} ns is not a whole number of picoseconds")
    return int(ps)


@dataclass(frozen=True, eq=False)
class TimeTagStream:
    """Time-ordered detection events.

    Parameters
    ----------
    timestamps : ndarray of int64
        Event times in ps, nondecreasing, inside ``[0, duration_ps]``.
    channels : ndarray of int8
        0 or 1 for the two detectors, :data:`SYNC` for laser pulse markers.
    duration_ps : int
        Length of the acquisition window.
    metadata : dict
        Provenance (simulation config, RNG description, acquisition notes).
    """

    timestamps: np.ndarray
    channels: np.ndarray
    duration_ps: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        ts = np.ascontiguousarray(self.timestamps, dtype=np.int64)
        ch = np.ascontiguousarray(self.channels, dtype=np.int8)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "duration_ps", int(self.duration_ps))
        if ts.shape != ch.shape or ts.ndim != 1:
            raise DataError("timestamps and channels must be 1-d arrays of equal length")

    def __len__(self):
        return len(self.timestamps)

    def __eq__(self, other):
        if not isinstance(other, TimeTagStream):
            return NotImplemented
        return (
            self.duration_ps == other.duration_ps
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.channels, other.channels)
            and self.metadata == other.metadata
        )

    @property
    def duration_ns(self):
        return self.duration_ps / PS_PER_NS

    def validate(self):
        """Raise :class:`DataError` unless the stream invariants hold."""
        ts = self.timestamps
        if len(ts) and np.any(np.diff(ts) < 0):
            bad = int(np.argmax(np.diff(ts) < 0)) + 1
            raise DataError(f"timestamps are not sorted (event {bad})")
        if len(ts) and (ts[0] < 0 or ts[-1] > self.duration_ps):
            raise DataError("timestamps outside [0, duration]")
        if not np.all(np.isin(self.channels, (0, 1, SYNC))):
            raise DataError("channel codes must be 0, 1 or sync")
        return self

    def channel(self, ch):
        return self.timestamps[self.channels == ch]

    def count(self, ch):
        return int(np.count_nonzero(self.channels == ch))

    def rate(self, ch):
        """Mean event rate of one channel in GHz."""
        return self.count(ch) / (self.duration_ps / PS_PER_NS)

    def reversed(self):
        """Time-reversed copy: t -> duration - t."""
        meta = dict(self.metadata)
        if meta.pop("reversed", False) is False:
            meta["reversed"] = True
        return TimeTagStream(
            timestamps=(self.duration_ps - self.timestamps)[::-1],
            channels=self.channels[::-1],
            duration_ps=self.duration_ps,
            metadata=meta,
        )

    @classmethod
    def concatenate(cls, chunks, duration_ps, metadata=None):
        chunks = list(chunks)
        if not chunks:
            return cls(np.empty(0, np.int64), np.empty(0, np.int8), duration_ps, dict(metadata or {}))
        ts = np.concatenate([c[0] for c in chunks])
        ch = np.concatenate([c[1] for c in chunks])
        return cls(ts, ch, duration_ps, dict(metadata or {}))
