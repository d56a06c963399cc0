"""Arrival-time bookkeeping and baseline-relative detrending.

All timestamps are integer nanoseconds.  A receiver never needs to know the
true time: only differences against its own first sample are used, so any
constant clock offset cancels out.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from .errors import EmptySeries, LengthMismatch, NonPositiveInterval, TooFewSamples

Pair = tuple


@dataclass(frozen=True)
class SenderOffsets:
    """Emission offsets of the sender relative to its first emission."""

    values: tuple

    def __post_init__(self):
        vals = tuple(int(v) for v in self.values)
        if not vals or vals[0] != 0:
            raise ValueError("sender offsets must start at 0")
        if any(b < a for a, b in zip(vals, vals[1:])):
            raise ValueError("sender offsets must be non-decreasing")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_timestamps(cls, sender_ts: Sequence[int]) -> "SenderOffsets":
        return cls(tuple(delta_series(sender_ts)))


@dataclass(frozen=True)
class TimingRecord:
    """Timestamps of one receiver pair over n+1 back-to-back emissions.

    Index 0 is the baseline.  ``arrivals_a``/``arrivals_b`` may hold ``None``
    for packets that never arrived; :func:`drop_missing` removes such indices
    from both receivers.  ``seq`` carries the sender's emission counter, which
    is what the constant-interval detrending multiplies by ``delta_const``.
    """

    pair_id: Pair
    sender_ts: tuple
    arrivals_a: tuple
    arrivals_b: tuple
    delta_const: Optional[int] = None
    seq: Optional[tuple] = None

    def __post_init__(self):
        for name in ("sender_ts", "arrivals_a", "arrivals_b"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        n1 = len(self.sender_ts)
        if len(self.arrivals_a) != n1 or len(self.arrivals_b) != n1:
            raise LengthMismatch(
                f"sender_ts/arrivals_a/arrivals_b lengths differ: "
                f"{n1}/{len(self.arrivals_a)}/{len(self.arrivals_b)}"
            )
        if self.seq is None:
            object.__setattr__(self, "seq", tuple(range(n1)))
        else:
            object.__setattr__(self, "seq", tuple(int(s) for s in self.seq))
            if len(self.seq) != n1:
                raise LengthMismatch("seq length differs from sender_ts")
            if any(b <= a for a, b in zip(self.seq, self.seq[1:])):
                raise ValueError("seq must be strictly increasing")
        if self.delta_const is not None and self.delta_const <= 0:
            raise NonPositiveInterval(f"delta_const must be > 0, got {self.delta_const}")

    @property
    def k_max(self) -> int:
        return len(self.sender_ts) - 1

    @property
    def mode(self) -> str:
        return "constant" if self.delta_const is not None else "schedule"


@dataclass(frozen=True)
class RelativeSeries:
    """Detrended series for both receivers, baseline index dropped."""

    pair_id: Pair
    values_a: tuple
    values_b: tuple
    # sender sequence numbers of the surviving samples (k = 1..n)
    seq: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "values_a", tuple(self.values_a))
        object.__setattr__(self, "values_b", tuple(self.values_b))
        if len(self.values_a) != len(self.values_b):
            raise LengthMismatch(
                f"halves differ in length: {len(self.values_a)} vs {len(self.values_b)}"
            )
        if len(self.values_a) < 2:
            raise TooFewSamples(f"need at least 2 samples, got {len(self.values_a)}")
        if not self.seq:
            object.__setattr__(self, "seq", tuple(range(1, len(self.values_a) + 1)))

    def __len__(self):
        return len(self.values_a)

    def take(self, keep: Sequence[int]) -> "RelativeSeries":
        """Positional subset of both halves."""
        return RelativeSeries(
            self.pair_id,
            [self.values_a[i] for i in keep],
            [self.values_b[i] for i in keep],
            tuple(self.seq[i] for i in keep),
        )


def delta_series(arrivals: Sequence[int]) -> list:
    """Offsets of every arrival from the first one."""
    if len(arrivals) < 2:
        raise EmptySeries(f"need at least 2 timestamps, got {len(arrivals)}")
    base = int(arrivals[0])
    return [int(t) - base for t in arrivals]


def detrend_constant(deltas: Sequence[int], delta: int, index: Optional[Sequence[int]] = None) -> list:
    """Remove the nominal sender progression ``k * delta`` from ``deltas``.

    ``index`` gives the sender counter of each entry when samples are missing;
    it defaults to ``0..n``.  The baseline entry is dropped.
    """
    if delta <= 0:
        raise NonPositiveInterval(f"interval must be > 0, got {delta}")
    if index is None:
        index = range(len(deltas))
    elif len(index) != len(deltas):
        raise LengthMismatch("index and deltas differ in length")
    k0 = index[0]
    return [int(d) - (k - k0) * delta for d, k in zip(deltas[1:], index[1:])]


def detrend_schedule(deltas: Sequence[int], offsets: SenderOffsets) -> list:
    """Remove the sender's actual emission offsets from ``deltas``."""
    if len(deltas) != len(offsets.values):
        raise LengthMismatch(
            f"deltas ({len(deltas)}) and sender offsets ({len(offsets.values)}) differ"
        )
    return [int(d) - f for d, f in zip(deltas[1:], offsets.values[1:])]


def drop_missing(record: TimingRecord) -> TimingRecord:
    """Paired deletion: remove every index lost at either receiver."""
    keep = [
        i
        for i, (ta, tb) in enumerate(zip(record.arrivals_a, record.arrivals_b))
        if ta is not None and tb is not None
    ]
    if len(keep) == len(record.sender_ts):
        return record
    return TimingRecord(
        record.pair_id,
        [record.sender_ts[i] for i in keep],
        [record.arrivals_a[i] for i in keep],
        [record.arrivals_b[i] for i in keep],
        record.delta_const,
        [record.seq[i] for i in keep],
    )


def build_relative_series(record: TimingRecord) -> RelativeSeries:
    rec = drop_missing(record)
    da = delta_series(rec.arrivals_a)
    db = delta_series(rec.arrivals_b)
    if rec.delta_const is not None:
        va = detrend_constant(da, rec.delta_const, rec.seq)
        vb = detrend_constant(db, rec.delta_const, rec.seq)
    else:
        offsets = SenderOffsets.from_timestamps(rec.sender_ts)
        va = detrend_schedule(da, offsets)
        vb = detrend_schedule(db, offsets)
    return RelativeSeries(rec.pair_id, va, vb, rec.seq[1:])
