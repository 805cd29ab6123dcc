"""Coincidence counting, lag histograms, and per-link metric assembly.

A coincidence window of w ns (a positive multiple of the 5 ns bin) accepts
event pairs whose offset-corrected bins differ by at most floor((w/5)/2)
bins, i.e. the acceptance is symmetric and rounds up to an odd number of
bins so that integer-bin clock correction cannot drop true pairs that
straddle a bin edge.  Events pair one-to-one: walking stream A in time
order, each event takes the nearest unused partner in the window, ties
going to the earlier partner.  The accidental estimate uses the actual
acceptance width, (2*floor((w/5)/2) + 1) * 5 ns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .qstate import (
    BASIS_GROUPS,
    SETTING_LABELS,
    LinkMetrics,
    TomographyCounts,
    TwoQubitState,
    bell_state,
    fidelity,
    joint_probability,
    log_negativity,
    reconstruct_state,
)
from .timing import BIN_NS, EventStream, lag_histogram


def window_half_bins(window_ns: float) -> int:
    """Half-width of the acceptance in bins for a stated window."""
    ratio = window_ns / BIN_NS
    if window_ns <= 0 or abs(ratio - round(ratio)) > 1e-9:
        raise ValidationError(
            f"window must be a positive multiple of {BIN_NS:g} ns, got {window_ns}"
        )
    return int(round(ratio)) // 2


def effective_window_s(window_ns: float) -> float:
    """Actual acceptance width in seconds for the accidental estimate."""
    return (2 * window_half_bins(window_ns) + 1) * BIN_NS * 1e-9


@dataclass(frozen=True)
class CoincidenceResult:
    coincidences: int
    singles_a: int
    singles_b: int
    window_ns: float
    integration_time_s: float
    accidental_estimate: float

    def __post_init__(self) -> None:
        if self.coincidences > min(self.singles_a, self.singles_b):
            raise ValidationError("more coincidences than singles on one arm")
        if self.window_ns <= 0:
            raise ValidationError("window must be positive")

    @property
    def rate_per_s(self) -> float:
        return self.coincidences / self.integration_time_s

    @property
    def accidental_rate_per_s(self) -> float:
        return self.accidental_estimate / self.integration_time_s


def count_coincidences(
    a: EventStream,
    b: EventStream,
    window_ns: float,
    offset_bins: int,
    integration_time_s: float,
) -> CoincidenceResult:
    """Greedy one-to-one pairing between two epoch-aligned streams, after
    removing the estimated delay of b (in bins) from its events."""
    if a.epoch_start != b.epoch_start:
        raise ValidationError(
            f"streams are not epoch-aligned ({a.epoch_start} vs {b.epoch_start})"
        )
    if integration_time_s <= 0:
        raise ValidationError("integration time must be positive")
    half = window_half_bins(window_ns)
    matched = _greedy_pair_count(a.bins, b.bins - int(offset_bins), half)
    tau = effective_window_s(window_ns)
    acc = (len(a) / integration_time_s) * (len(b) / integration_time_s) * tau
    return CoincidenceResult(
        coincidences=matched,
        singles_a=len(a),
        singles_b=len(b),
        window_ns=window_ns,
        integration_time_s=integration_time_s,
        accidental_estimate=acc * integration_time_s,
    )


def _greedy_pair_count(a_bins: np.ndarray, b_corr: np.ndarray, half: int) -> int:
    """Two-pointer merge; each event pairs with at most one partner."""
    na, nb = a_bins.size, b_corr.size
    if not na or not nb:
        return 0
    lo_all = np.searchsorted(b_corr, a_bins - half, side="left")
    hi_all = np.searchsorted(b_corr, a_bins + half, side="right")
    contended = np.flatnonzero(hi_all > lo_all)
    used = np.zeros(nb, dtype=bool)
    count = 0
    for i in contended:
        best = -1
        best_d = half + 1
        for j in range(lo_all[i], hi_all[i]):
            if used[j]:
                continue
            d = abs(int(b_corr[j]) - int(a_bins[i]))
            if d < best_d:
                best_d = d
                best = j
        if best >= 0:
            used[best] = True
            count += 1
    return count


def coincidence_histogram(a: EventStream, b: EventStream, max_lag: int) -> dict[int, int]:
    """All-pairs count of (b - a) bin lags over [-max_lag, max_lag]."""
    if a.epoch_start != b.epoch_start:
        raise ValidationError("streams are not epoch-aligned")
    counts = lag_histogram(a.bins, b.bins, int(max_lag))
    return {int(lag): int(c) for lag, c in zip(range(-max_lag, max_lag + 1), counts)}


def simulate_tomography_counts(
    state: TwoQubitState, per_setting_pairs: int, seed: int
) -> TomographyCounts:
    """Statistical tomography data: for each complete-basis setting pair, a
    multinomial draw of per_setting_pairs photon pairs over its four
    projector outcomes, probabilities from the Born rule."""
    if per_setting_pairs <= 0:
        raise ValidationError("per_setting_pairs must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0x7FFFFFFF, 0x706]))
    table = np.zeros((6, 6))
    for group_a in BASIS_GROUPS:
        for group_b in BASIS_GROUPS:
            outcomes = [(a, b) for a in group_a for b in group_b]
            probs = np.array([joint_probability(state, a, b) for a, b in outcomes])
            probs = np.clip(probs, 0.0, None)
            probs /= probs.sum()
            draws = rng.multinomial(per_setting_pairs, probs)
            for (a, b), n in zip(outcomes, draws):
                table[SETTING_LABELS.index(a), SETTING_LABELS.index(b)] = n
    return TomographyCounts(table)


def link_metrics(
    state: TwoQubitState,
    result: CoincidenceResult,
    counts: TomographyCounts | None = None,
    resamples: int = 200,
    seed: int = 0,
) -> LinkMetrics:
    """Scorecard for one link: fidelity to the ideal Bell state, the
    log-negativity, the pair rate, and their product.  When the tomography
    table is supplied, state uncertainties come from a parametric bootstrap
    over the counts (Poisson resampling, re-reconstruction)."""
    if result.integration_time_s <= 0:
        raise ValidationError("integration time must be positive")
    target = bell_state("psi+")
    f = fidelity(state, target)
    en = log_negativity(state)
    rate = result.rate_per_s
    rate_sigma = float(np.sqrt(result.coincidences)) / result.integration_time_s
    if counts is None:
        return LinkMetrics(
            fidelity=f,
            log_negativity=en,
            coincidence_rate=rate,
            fidelity_sigma=0.0,
            log_negativity_sigma=0.0,
            coincidence_rate_sigma=rate_sigma,
            ebit_rate_sigma=en * rate_sigma,
        )
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0x7FFFFFFF, 0xB007]))
    f_samples, en_samples, re_samples = [], [], []
    for _ in range(resamples):
        table = rng.poisson(counts.table)
        try:
            rec = reconstruct_state(TomographyCounts(table))
        except ValidationError:
            continue  # a resample emptied a basis group; skip it
        fb = fidelity(rec, target)
        enb = log_negativity(rec)
        rate_b = rng.poisson(result.coincidences) / result.integration_time_s
        f_samples.append(fb)
        en_samples.append(enb)
        re_samples.append(enb * rate_b)
    if len(f_samples) < 2:
        raise ValidationError("bootstrap failed: too few valid resamples")
    return LinkMetrics(
        fidelity=f,
        log_negativity=en,
        coincidence_rate=rate,
        fidelity_sigma=float(np.std(f_samples)),
        log_negativity_sigma=float(np.std(en_samples)),
        coincidence_rate_sigma=rate_sigma,
        ebit_rate_sigma=float(np.std(re_samples)),
    )
