"""Stochastic photon-pair generation, loss, and detection.

The source emits time-correlated pairs per frequency channel as independent
Poisson processes.  Each arm of a pair then survives fiber/switch loss and
detector efficiency independently, picks up per-event detector jitter plus
the node's per-epoch clock offset, competes with dark counts, and is
filtered by non-paralyzable detector dead time before TDC binning.

Entangled-state degradation has two sources here: accidental coincidences
(uncorrelated events inside the window admix the maximally mixed state) and
per-channel polarization rotations (mixing differently rotated channels on
one link decoheres it).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .qstate import TwoQubitState, bell_state, joint_probability
from .timing import BASIS_CODES, ClockModel, EventStream, sample_clock, tdc_bin


def _rng(seed: int, *salt: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0x7FFFFFFF, *salt]))


@dataclass(frozen=True)
class FiberLink:
    """Fiber path from the source to one node, plus fixed extra loss from
    connectors and the WSS slice."""

    length_m: float = 0.0
    attenuation_db_per_km: float = 0.2
    extra_db: float = 5.0

    def __post_init__(self) -> None:
        if self.length_m < 0 or self.attenuation_db_per_km < 0 or self.extra_db < 0:
            raise ValidationError("fiber length and losses must be non-negative")

    def total_db(self) -> float:
        return self.length_m / 1000.0 * self.attenuation_db_per_km + self.extra_db

    def transmission(self) -> float:
        return 10.0 ** (-self.total_db() / 10.0)


@dataclass(frozen=True)
class DetectorModel:
    efficiency: float = 0.80
    dark_count_rate: float = 200.0
    jitter_sigma_ns: float = 0.05
    dead_time_ns: float = 50.0
    kind: str = "SNSPD"

    def __post_init__(self) -> None:
        if not 0.0 < self.efficiency <= 1.0:
            raise ValidationError(f"detector efficiency must be in (0, 1], got {self.efficiency}")
        if min(self.dark_count_rate, self.jitter_sigma_ns, self.dead_time_ns) < 0:
            raise ValidationError("detector rates and times must be non-negative")
        if self.kind not in ("SNSPD", "APD"):
            raise ValidationError(f"detector kind must be SNSPD or APD, got {self.kind!r}")

    @classmethod
    def snspd(cls, **overrides) -> "DetectorModel":
        return cls(**overrides)

    @classmethod
    def apd(cls, **overrides) -> "DetectorModel":
        base = dict(
            efficiency=0.20,
            dark_count_rate=3000.0,
            jitter_sigma_ns=0.35,
            dead_time_ns=10_000.0,
            kind="APD",
        )
        base.update(overrides)
        return cls(**base)


def _default_flux(pair_count: int) -> tuple[float, ...]:
    # Monotonically non-increasing with channel index, brightest first.
    return tuple(10_000.0 * (1.0 - 0.06 * n) for n in range(pair_count))


@dataclass(frozen=True)
class SourceModel:
    """Per-channel pair flux, emitted two-qubit state, and signal-arm
    polarization rotation of the downconversion source."""

    flux_per_s: tuple[float, ...] = field(default_factory=lambda: _default_flux(8))
    states: tuple[TwoQubitState, ...] = ()
    rotation_rad: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        flux = tuple(float(f) for f in self.flux_per_s)
        if not flux or any(f <= 0 for f in flux):
            raise ValidationError("per-channel flux must be positive")
        states = tuple(self.states) or tuple(bell_state("psi+") for _ in flux)
        rotations = tuple(float(r) for r in self.rotation_rad) or tuple(
            0.02 * n for n in range(len(flux))
        )
        if len(states) != len(flux) or len(rotations) != len(flux):
            raise ValidationError("per-channel tables must have equal lengths")
        object.__setattr__(self, "flux_per_s", flux)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "rotation_rad", rotations)

    @property
    def pair_count(self) -> int:
        return len(self.flux_per_s)

    def flux(self, n: int) -> float:
        return self.flux_per_s[n - 1]

    def rotation(self, n: int) -> float:
        return self.rotation_rad[n - 1]

    def channel_state(self, n: int) -> TwoQubitState:
        """Emitted state of channel n with its signal-arm rotation applied."""
        return rotate_signal(self.states[n - 1], self.rotation_rad[n - 1])


def rotation_unitary(angle: float) -> np.ndarray:
    return np.array(
        [[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]], dtype=complex
    )


def rotate_signal(state: TwoQubitState, angle: float) -> TwoQubitState:
    if angle == 0.0:
        return state
    u = np.kron(rotation_unitary(angle), np.eye(2, dtype=complex))
    return TwoQubitState(u @ state.matrix @ u.conj().T)


def rotate_idler(state: TwoQubitState, angle: float) -> TwoQubitState:
    if angle == 0.0:
        return state
    u = np.kron(np.eye(2, dtype=complex), rotation_unitary(angle))
    return TwoQubitState(u @ state.matrix @ u.conj().T)


def simulate_pair_stream(
    channel: int, rate_per_s: float, duration_s: float, seed: int
) -> np.ndarray:
    """Emission times (ns, sorted) of one channel's pairs over the capture:
    a homogeneous Poisson process, reproducible for a fixed seed."""
    if rate_per_s <= 0:
        raise ValidationError(f"pair rate must be positive, got {rate_per_s}")
    if duration_s < 0:
        raise ValidationError(f"duration must be non-negative, got {duration_s}")
    if duration_s == 0:
        return np.empty(0)
    rng = _rng(seed, 0x501, int(channel))
    n = rng.poisson(rate_per_s * duration_s)
    return np.sort(rng.uniform(0.0, duration_s * 1e9, n))


def dead_time_filter(times_ns: np.ndarray, dead_time_ns: float) -> np.ndarray:
    """Non-paralyzable dead time: drop events within dead_time of the last
    accepted event."""
    t = np.asarray(times_ns, dtype=float)
    if dead_time_ns <= 0 or t.size <= 1:
        return t
    gaps = np.diff(t)
    linked = gaps < dead_time_ns
    if not linked.any():
        return t
    keep = np.ones(t.size, dtype=bool)
    run_starts = np.flatnonzero(linked & ~np.concatenate([[False], linked[:-1]]))
    run_ends = np.flatnonzero(linked & ~np.concatenate([linked[1:], [False]]))
    for rs, re in zip(run_starts, run_ends):
        last = t[rs]
        for i in range(rs + 1, re + 2):
            if t[i] - last >= dead_time_ns:
                last = t[i]
            else:
                keep[i] = False
    return t[keep]


def detect(
    emissions_ns: np.ndarray,
    link: FiberLink,
    det: DetectorModel,
    clock: ClockModel,
    duration_s: float,
    seed: int,
    *,
    node_id: int = 0,
    basis: int = BASIS_CODES["NONE"],
    epoch_s: float = 0.0,
    record_epoch_s: float | None = None,
) -> EventStream:
    """Detection record for one arm: loss thinning, timing noise, dark
    counts, dead time, then 5 ns TDC binning.

    ``epoch_s`` keys the per-epoch clock draw (and the drift term);
    ``record_epoch_s`` is the PPS second stamped on the record, which the
    orchestrator sets to the actual arming epoch when a capture started
    late.  Emission times are relative to the capture start.
    """
    if duration_s < 0:
        raise ValidationError("duration must be non-negative")
    if record_epoch_s is None:
        record_epoch_s = epoch_s
    t = np.asarray(emissions_ns, dtype=float)
    survival = link.transmission() * det.efficiency
    rng_thin = _rng(seed, 0xD1)
    t = t[rng_thin.random(t.size) < survival]
    offset_ns = sample_clock(
        clock, int(epoch_s), int(_rng(seed, 0xC1).integers(0, 2**31))
    )
    if det.jitter_sigma_ns > 0:
        t = t + _rng(seed, 0xD2).normal(0.0, det.jitter_sigma_ns, t.size)
    t = t + offset_ns
    if det.dark_count_rate > 0 and duration_s > 0:
        rng_dark = _rng(seed, 0xD3)
        n_dark = rng_dark.poisson(det.dark_count_rate * duration_s)
        t = np.concatenate([t, rng_dark.uniform(0.0, duration_s * 1e9, n_dark)])
    t = np.sort(t)
    t = t[(t >= 0.0) & (t < duration_s * 1e9)]
    t = dead_time_filter(t, det.dead_time_ns)
    return tdc_bin(t + float(record_epoch_s) * 1e9, record_epoch_s, node_id, basis)


def project_pairs(
    state: TwoQubitState,
    setting_a: str,
    setting_b: str,
    count: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Joint analyzer outcomes for `count` pairs: boolean pass masks for the
    two arms, correlated per the Born rule."""
    p_ab = joint_probability(state, setting_a, setting_b)
    p_a = joint_probability_marginal(state, setting_a, side=0)
    p_b = joint_probability_marginal(state, setting_b, side=1)
    p_only_a = max(p_a - p_ab, 0.0)
    p_only_b = max(p_b - p_ab, 0.0)
    u = rng.random(count)
    both = u < p_ab
    only_a = (~both) & (u < p_ab + p_only_a)
    only_b = (~both) & (~only_a) & (u < p_ab + p_only_a + p_only_b)
    return both | only_a, both | only_b


def joint_probability_marginal(state: TwoQubitState, setting: str, side: int) -> float:
    """Single-arm analyzer pass probability."""
    from .qstate import KET

    ket = KET[setting]
    proj = np.outer(ket, ket.conj())
    full = np.kron(proj, np.eye(2)) if side == 0 else np.kron(np.eye(2), proj)
    p = float(np.real(np.trace(state.matrix @ full)))
    return min(max(p, 0.0), 1.0)


def accidental_rate(singles_a: float, singles_b: float, window_s: float) -> float:
    """Uncorrelated-coincidence rate S_a * S_b * tau."""
    if min(singles_a, singles_b, window_s) < 0:
        raise ValidationError("accidental-rate inputs must be non-negative")
    return singles_a * singles_b * window_s


def mix_states(states: list[TwoQubitState], weights: list[float]) -> TwoQubitState:
    """Rate-weighted mixture of per-channel states sharing one link."""
    if len(states) != len(weights) or not states:
        raise ValidationError("states and weights must be equal-length and non-empty")
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or w.sum() <= 0:
        raise ValidationError("weights must be non-negative with a positive sum")
    w = w / w.sum()
    m = sum(wi * s.matrix for wi, s in zip(w, states))
    return TwoQubitState(m)


def effective_state(
    pair_state: TwoQubitState, true_rate: float, accidental_rate: float
) -> TwoQubitState:
    """Observed state of a link: the pair state diluted by the maximally
    mixed accidental background in proportion to the two rates."""
    if true_rate < 0 or accidental_rate < 0:
        raise ValidationError("rates must be non-negative")
    total = true_rate + accidental_rate
    if total == 0:
        raise ValidationError("at least one of the rates must be positive")
    if accidental_rate == 0:
        return pair_state
    if true_rate == 0:
        return TwoQubitState(np.eye(4, dtype=complex) / 4.0)
    m = (true_rate * pair_state.matrix + accidental_rate * np.eye(4) / 4.0) / total
    return TwoQubitState(m)
