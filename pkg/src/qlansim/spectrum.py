"""ITU channel grid, signal/idler pairing, and WSS routing tables.

The source spectrum is partitioned into frequency-conjugate channel pairs
centered at w0 +/- dw*(n - 1/2): '+' for the signal, '-' for the idler.
Photons in conjugate channels are entangled, so routing the two slices of a
pair to two different users creates a logical link between them even though
the physical fibers form a star around the source.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from string import ascii_uppercase
from typing import Iterable, Mapping

from .errors import ValidationError

SPEED_OF_LIGHT_NM_THZ = 299792.458  # nm * THz

Link = tuple[str, str]


def canonical_link(a: str, b: str) -> Link:
    """Unordered node pair as a sorted tuple."""
    if a == b:
        raise ValidationError(f"link endpoints must differ, got {a!r} twice")
    return (a, b) if a < b else (b, a)


def link_name(link: Link) -> str:
    return f"{link[0]}-{link[1]}"


def parse_link(name: str) -> Link:
    parts = name.split("-")
    if len(parts) != 2 or not all(parts):
        raise ValidationError(f"malformed link name {name!r}")
    return canonical_link(parts[0], parts[1])


@dataclass(frozen=True)
class ChannelPlan:
    """The frequency grid: pair_count conjugate channel pairs of equal width
    symmetric about center_thz."""

    center_thz: float = 192.3125
    width_ghz: float = 25.0
    pair_count: int = 8

    def __post_init__(self) -> None:
        if self.pair_count < 1:
            raise ValidationError("pair_count must be >= 1")
        if self.width_ghz <= 0 or self.center_thz <= 0:
            raise ValidationError("channel width and center frequency must be positive")

    @property
    def width_thz(self) -> float:
        return self.width_ghz / 1000.0

    def channel_frequency(self, n: int, side: str) -> float:
        """Center frequency (THz) of channel n on the given side."""
        if not 1 <= n <= self.pair_count:
            raise ValidationError(f"channel index {n} outside [1, {self.pair_count}]")
        if side == "signal":
            sign = 1.0
        elif side == "idler":
            sign = -1.0
        else:
            raise ValidationError(f"side must be 'signal' or 'idler', got {side!r}")
        return self.center_thz + sign * self.width_thz * (n - 0.5)

    def channel_slice(self, n: int, side: str) -> tuple[float, float]:
        """(low, high) THz range occupied by one channel; edges rounded to
        1 kHz so routing tables serialize exactly."""
        center = self.channel_frequency(n, side)
        half = self.width_thz / 2.0
        return (round(center - half, 9), round(center + half, 9))

    def span_thz(self) -> tuple[float, float]:
        """Total occupied range, idler edge of the last pair to its signal edge."""
        return (
            self.channel_slice(self.pair_count, "idler")[0],
            self.channel_slice(self.pair_count, "signal")[1],
        )

    def span_nm(self) -> tuple[float, float]:
        lo, hi = self.span_thz()
        return (SPEED_OF_LIGHT_NM_THZ / hi, SPEED_OF_LIGHT_NM_THZ / lo)

    def occupied_thz(self) -> float:
        return 2 * self.pair_count * self.width_thz


def channel_frequencies(plan: ChannelPlan, n: int, side: str) -> float:
    return plan.channel_frequency(n, side)


@dataclass(frozen=True)
class Allocation:
    """Assignment of channel-pair indices to logical links; indices must be
    pairwise disjoint across links."""

    channels: Mapping[Link, frozenset[int]]
    pair_count: int = 8

    def __post_init__(self) -> None:
        normalized: dict[Link, frozenset[int]] = {}
        seen: set[int] = set()
        for link, chans in dict(self.channels).items():
            link = canonical_link(*link)
            chans = frozenset(int(c) for c in chans)
            for c in chans:
                if not 1 <= c <= self.pair_count:
                    raise ValidationError(
                        f"channel {c} on {link_name(link)} outside [1, {self.pair_count}]"
                    )
                if c in seen:
                    raise ValidationError(f"channel {c} assigned to more than one link")
                seen.add(c)
            if link in normalized:
                raise ValidationError(f"duplicate link {link_name(link)}")
            normalized[link] = chans
        object.__setattr__(self, "channels", normalized)

    def links(self) -> list[Link]:
        return sorted(self.channels)

    def nodes(self) -> list[str]:
        return sorted({n for link in self.channels for n in link})

    def assigned_channels(self) -> set[int]:
        return {c for chans in self.channels.values() for c in chans}

    def to_dict(self) -> dict[str, list[int]]:
        return {link_name(k): sorted(v) for k, v in sorted(self.channels.items())}

    @classmethod
    def from_dict(cls, d: Mapping[str, Iterable[int]], pair_count: int = 8) -> "Allocation":
        return cls({parse_link(k): frozenset(v) for k, v in d.items()}, pair_count)


@dataclass(frozen=True)
class WssSlice:
    low_thz: float
    high_thz: float
    port: str

    def __post_init__(self) -> None:
        if self.high_thz <= self.low_thz:
            raise ValidationError(f"empty slice [{self.low_thz}, {self.high_thz}]")


@dataclass(frozen=True)
class WssConfig:
    """Ordered list of non-overlapping frequency slices, each routed to one
    output port."""

    slices: tuple[WssSlice, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        ordered = tuple(sorted(self.slices, key=lambda s: (s.low_thz, s.high_thz)))
        for prev, cur in zip(ordered, ordered[1:]):
            if cur.low_thz < prev.high_thz - 1e-12:
                raise ValidationError(
                    f"overlapping slices at {cur.low_thz:.4f} THz "
                    f"({prev.port} vs {cur.port})"
                )
        object.__setattr__(self, "slices", ordered)

    def ports(self) -> set[str]:
        return {s.port for s in self.slices}

    def port_for(self, frequency_thz: float) -> str | None:
        for s in self.slices:
            if s.low_thz <= frequency_thz < s.high_thz:
                return s.port
        return None

    def to_table_text(self) -> str:
        """Plain-text routing table, one 'low_THz high_THz port' per line."""
        lines = [f"{s.low_thz:.9f} {s.high_thz:.9f} {s.port}" for s in self.slices]
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_table_text(cls, text: str) -> "WssConfig":
        slices = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValidationError(f"routing table line {lineno} malformed: {line!r}")
            slices.append(WssSlice(float(parts[0]), float(parts[1]), parts[2]))
        return cls(tuple(slices))


def node_labels(count: int) -> list[str]:
    """A, B, C, ... AA, AB, ... for larger meshes."""
    labels = []
    letters = ascii_uppercase
    for i in range(count):
        name = ""
        k = i
        while True:
            name = letters[k % 26] + name
            k = k // 26 - 1
            if k < 0:
                break
        labels.append(name)
    return labels


def logical_mesh(node_count: int) -> set[Link]:
    """All N(N-1)/2 unordered user pairs reachable from a star around the
    source."""
    if node_count < 2:
        raise ValidationError(f"a mesh needs at least 2 nodes, got {node_count}")
    return {canonical_link(a, b) for a, b in combinations(node_labels(node_count), 2)}


def wss_route(plan: ChannelPlan, alloc: Allocation) -> WssConfig:
    """Routing table realizing an allocation: for each assigned channel pair
    the signal slice goes to the lexicographically smaller endpoint and the
    idler slice to the other."""
    slices = []
    for link in alloc.links():
        signal_port, idler_port = link  # link is sorted
        for n in sorted(alloc.channels[link]):
            lo, hi = plan.channel_slice(n, "signal")
            slices.append(WssSlice(lo, hi, signal_port))
            lo, hi = plan.channel_slice(n, "idler")
            slices.append(WssSlice(lo, hi, idler_port))
    config = WssConfig(tuple(slices))
    span_lo, span_hi = plan.span_thz()
    for s in config.slices:
        if s.low_thz < span_lo - 1e-9 or s.high_thz > span_hi + 1e-9:
            raise ValidationError(
                f"slice [{s.low_thz}, {s.high_thz}] outside source spectrum"
            )
    return config


def nest_wss(
    parent: WssConfig, handoff_slice: tuple[float, float], child: WssConfig
) -> WssConfig:
    """Composite of a parent WSS handing a frequency range to a child WSS.

    The effective port map is the parent's with the handoff range replaced
    by the child's slices; an empty child leaves the range dark.
    """
    lo, hi = handoff_slice
    if hi <= lo:
        raise ValidationError(f"empty handoff range [{lo}, {hi}]")
    kept = []
    for s in parent.slices:
        inside = s.low_thz >= lo - 1e-12 and s.high_thz <= hi + 1e-12
        overlaps = s.low_thz < hi - 1e-12 and s.high_thz > lo + 1e-12
        if inside:
            continue  # the handoff entry itself; replaced by the child map
        if overlaps:
            raise ValidationError(
                f"handoff range [{lo}, {hi}] partially overlaps slice "
                f"[{s.low_thz}, {s.high_thz}] -> {s.port}"
            )
        kept.append(s)
    for s in child.slices:
        if s.low_thz < lo - 1e-12 or s.high_thz > hi + 1e-12:
            raise ValidationError(
                f"child slice [{s.low_thz}, {s.high_thz}] outside handoff "
                f"range [{lo}, {hi}]"
            )
        kept.append(s)
    return WssConfig(tuple(kept))
