"""GPS-derived clock model, TDC binning, and inter-node offset recovery.

Detection events are binned at 5 ns resolution relative to a pulse-per-second
(PPS) epoch edge.  Per-epoch clock offsets between nodes are recovered from
the cross-correlation peak of their coincidence histograms; late-armed
captures shifted by whole seconds are repaired by align_epochs.

Offset sign convention: estimate_offset(a, b) is the delay of stream b
relative to stream a in bins, so estimate_offset(a, shift(a, k)) == k, and
the coincidence counters correct stream b by subtracting that offset.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import QlanError, ValidationError

BIN_NS = 5.0
BINS_PER_SECOND = 200_000_000  # 1 s / 5 ns
TIMETAG_MAGIC = b"QTT1"
ROLLOVER = 1 << 32
HALF_ROLLOVER = 1 << 31

BASIS_CODES = {"H": 0, "V": 1, "D": 2, "A": 3, "R": 4, "L": 5, "NONE": 255}
BASIS_NAMES = {v: k for k, v in BASIS_CODES.items()}


class NoPeakError(QlanError):
    """No shift produced any coincidences between the two streams."""


class ClockFaultError(QlanError):
    """Epoch starts differ by a non-integer number of seconds."""


@dataclass(frozen=True)
class ClockModel:
    """Per-node timing offset relative to the shared timebase: a fixed mean,
    a linear drift, and an independent Gaussian draw per PPS epoch."""

    mean_offset_ns: float = 0.0
    jitter_sigma_ns: float = 10.0
    drift_ns_per_s: float = 0.0

    def __post_init__(self) -> None:
        if self.jitter_sigma_ns < 0:
            raise ValidationError("jitter sigma must be non-negative")


def sample_clock(clock: ClockModel, epoch: int, seed: int) -> float:
    """Offset (ns) of this clock for one PPS epoch; deterministic per
    (seed, epoch)."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0x7FFFFFFF, int(epoch)]))
    jitter = rng.normal(0.0, clock.jitter_sigma_ns) if clock.jitter_sigma_ns > 0 else 0.0
    return clock.mean_offset_ns + clock.drift_ns_per_s * epoch + jitter


@dataclass(frozen=True)
class EventStream:
    """One node's time-tagged detection record for a single capture: 5 ns
    bin indices relative to the PPS-aligned epoch start, plus the analyzer
    setting active during the capture."""

    node_id: int
    epoch_start: float
    bins: np.ndarray
    basis: int = BASIS_CODES["NONE"]

    def __post_init__(self) -> None:
        bins = np.asarray(self.bins, dtype=np.int64)
        if bins.ndim != 1:
            raise ValidationError("bins must be a 1-d sequence")
        if bins.size and np.any(np.diff(bins) < 0):
            raise ValidationError("bin indices must be non-decreasing")
        if bins.size and bins[0] < 0:
            raise ValidationError("bin indices must be non-negative")
        if not 0 <= self.node_id < 1 << 16:
            raise ValidationError(f"node id {self.node_id} outside u16 range")
        if self.basis not in BASIS_NAMES:
            raise ValidationError(f"unknown basis code {self.basis}")
        if self.epoch_start < 0:
            raise ValidationError("epoch start must be non-negative")
        bins.flags.writeable = False
        object.__setattr__(self, "bins", bins)

    def __len__(self) -> int:
        return int(self.bins.size)

    @property
    def basis_label(self) -> str:
        return BASIS_NAMES[self.basis]

    def shifted(self, k: int) -> "EventStream":
        """Copy with every bin index shifted by k (for tests and alignment)."""
        return EventStream(self.node_id, self.epoch_start, self.bins + int(k), self.basis)

    def with_epoch(self, epoch_start: float) -> "EventStream":
        return EventStream(self.node_id, epoch_start, self.bins, self.basis)


def tdc_bin(
    events_ns: np.ndarray,
    epoch_start: float,
    node_id: int = 0,
    basis: int = BASIS_CODES["NONE"],
) -> EventStream:
    """Bin absolute detection times (ns) at 5 ns resolution relative to the
    epoch start (s)."""
    t = np.sort(np.asarray(events_ns, dtype=float))
    start_ns = float(epoch_start) * 1e9
    if t.size and t[0] < start_ns:
        raise ValidationError(
            f"event at {t[0]:.3f} ns precedes epoch start {start_ns:.3f} ns"
        )
    bins = np.floor((t - start_ns) / BIN_NS).astype(np.int64)
    return EventStream(node_id, epoch_start, bins, basis)


def align_epochs(a: EventStream, b: EventStream) -> tuple[EventStream, EventStream]:
    """Repair the discrete timestamp shift between records whose captures
    were armed on different PPS seconds.

    The raw records differ by exactly 2e8 bins per second of epoch
    mismatch; the later record is re-labeled onto the earlier epoch with
    its bin values unchanged, which removes that shift.  A non-integer
    epoch difference indicates a clock fault and is rejected.
    """
    diff = b.epoch_start - a.epoch_start
    if abs(diff - round(diff)) > 1e-9:
        raise ClockFaultError(
            f"epoch starts differ by a non-integer {diff} s; clock fault"
        )
    if diff == 0:
        return a, b
    earlier = min(a.epoch_start, b.epoch_start)
    return a.with_epoch(earlier), b.with_epoch(earlier)


def epoch_shift_bins(a: EventStream, b: EventStream) -> int:
    """Discrete timestamp shift (bins) between two raw records, 2e8 per
    second of epoch mismatch."""
    diff = b.epoch_start - a.epoch_start
    if abs(diff - round(diff)) > 1e-9:
        raise ClockFaultError(f"epoch starts differ by a non-integer {diff} s")
    return int(round(diff)) * BINS_PER_SECOND


def lag_histogram(a_bins: np.ndarray, b_bins: np.ndarray, max_lag: int) -> np.ndarray:
    """All-pairs counts of (b - a) lags in [-max_lag, max_lag]; index i holds
    lag i - max_lag."""
    a_bins = np.asarray(a_bins, dtype=np.int64)
    b_bins = np.asarray(b_bins, dtype=np.int64)
    counts = np.zeros(2 * max_lag + 1, dtype=np.int64)
    if not a_bins.size or not b_bins.size:
        return counts
    lo = np.searchsorted(b_bins, a_bins - max_lag, side="left")
    hi = np.searchsorted(b_bins, a_bins + max_lag, side="right")
    lens = hi - lo
    total = int(lens.sum())
    if total == 0:
        return counts
    rep_a = np.repeat(a_bins, lens)
    offsets = np.arange(total) - np.repeat(np.cumsum(lens) - lens, lens)
    partners = b_bins[np.repeat(lo, lens) + offsets]
    return np.bincount(partners - rep_a + max_lag, minlength=counts.size)


@dataclass(frozen=True)
class OffsetEstimate:
    """Cross-correlation peak between two streams: the offset of b relative
    to a in bins, with the 5-sigma significance verdict over the off-peak
    background."""

    offset_bins: int
    peak_count: int
    background_mean: float
    background_std: float
    significant: bool


def estimate_offset_full(
    a: EventStream, b: EventStream, search_range: int
) -> OffsetEstimate:
    if len(a) == 0 or len(b) == 0:
        raise NoPeakError("cannot estimate an offset from an empty stream")
    if a.epoch_start != b.epoch_start:
        raise ValidationError("streams must be epoch-aligned before offset estimation")
    counts = lag_histogram(a.bins, b.bins, search_range)
    lags = np.arange(-search_range, search_range + 1)
    # argmax with ties broken toward the smallest |lag| (negative first)
    order = np.lexsort((lags, np.abs(lags), -counts))
    best = order[0]
    peak = int(counts[best])
    if peak == 0:
        raise NoPeakError("no shift yields any coincidences")
    off_peak = np.delete(counts, best)
    mean = float(off_peak.mean()) if off_peak.size else 0.0
    std = float(off_peak.std()) if off_peak.size else 0.0
    significant = peak > mean + 5.0 * std
    return OffsetEstimate(int(lags[best]), peak, mean, std, significant)


def estimate_offset(a: EventStream, b: EventStream, search_range: int) -> int:
    """Delay of b relative to a, in bins, from the coincidence peak."""
    return estimate_offset_full(a, b, search_range).offset_bins


# ---------------------------------------------------------------------------
# Binary timetag format (bit-exact wire/file format).
#
# Little-endian.  16-byte header: magic "QTT1", node id u16, basis setting
# u8, reserved u8, epoch_start u64 (integer seconds).  Then packed u32 bin
# indices.  Indices wrap at 2**32 (~21.47 s at 5 ns); readers unwrap by
# monotonicity, counting one wrap whenever an index drops by more than
# 2**31.  Streams with an inter-event gap above 2**31 bins (~10.7 s) are
# therefore outside the format's guarantee; this unwrap rule is a format
# decision of this artifact, not an upstream requirement.

_HEADER = struct.Struct("<4sHBBQ")


def write_timetags(stream: EventStream) -> bytes:
    epoch = stream.epoch_start
    if abs(epoch - round(epoch)) > 1e-9:
        raise ValidationError(f"epoch start {epoch} is not an integer second")
    header = _HEADER.pack(
        TIMETAG_MAGIC, stream.node_id, stream.basis, 0, int(round(epoch))
    )
    wrapped = (stream.bins % ROLLOVER).astype("<u4")
    return header + wrapped.tobytes()


def read_timetags(data: bytes) -> EventStream:
    if len(data) < _HEADER.size:
        raise ValidationError("timetag data shorter than the 16-byte header")
    magic, node_id, basis, _reserved, epoch = _HEADER.unpack_from(data)
    if magic != TIMETAG_MAGIC:
        raise ValidationError(f"bad timetag magic {magic!r}")
    body = data[_HEADER.size:]
    if len(body) % 4:
        raise ValidationError("timetag body is not a whole number of u32 records")
    raw = np.frombuffer(body, dtype="<u4").astype(np.int64)
    if raw.size:
        drops = np.diff(raw) < -HALF_ROLLOVER
        wraps = np.concatenate([[0], np.cumsum(drops)])
        raw = raw + wraps * ROLLOVER
    return EventStream(node_id, float(epoch), raw, basis)
