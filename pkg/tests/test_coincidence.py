"""Coincidence counting against a brute-force oracle, histograms, and
per-link metric assembly."""

import numpy as np
import pytest

from qlansim import qstate
from qlansim.coincidence import (
    CoincidenceResult,
    coincidence_histogram,
    count_coincidences,
    effective_window_s,
    link_metrics,
    simulate_tomography_counts,
    window_half_bins,
)
from qlansim.errors import ValidationError
from qlansim.timing import EventStream


def brute_force_count(a_bins, b_bins, half, offset):
    """Independent implementation of the pairing rule: walk a in time
    order, each event takes the nearest unused partner within the window,
    ties to the earlier partner."""
    b_corr = [int(b) - offset for b in b_bins]
    used = [False] * len(b_corr)
    count = 0
    for av in a_bins:
        best, best_d = None, None
        for j, bv in enumerate(b_corr):
            if used[j]:
                continue
            d = abs(int(av) - bv)
            if d <= half and (best is None or d < best_d):
                best, best_d = j, d
        if best is not None:
            used[best] = True
            count += 1
    return count


def make_stream(bins, node=0, epoch=0.0):
    return EventStream(node, epoch, np.asarray(sorted(bins), dtype=np.int64))


def test_window_half_bins():
    assert window_half_bins(5.0) == 0
    assert window_half_bins(10.0) == 1
    assert window_half_bins(20.0) == 2
    assert effective_window_s(10.0) == pytest.approx(15e-9)
    with pytest.raises(ValidationError):
        window_half_bins(7.0)
    with pytest.raises(ValidationError):
        window_half_bins(0.0)


def test_identical_streams_all_match():
    rng = np.random.default_rng(1)
    s = make_stream(rng.choice(10**7, 3000, replace=False))
    r = count_coincidences(s, s, 5.0, 0, 10.0)
    assert r.coincidences == len(s)
    assert r.singles_a == r.singles_b == len(s)


def test_offset_parameter_recovers_shifted_stream():
    rng = np.random.default_rng(2)
    a = make_stream(rng.choice(10**7, 2000, replace=False))
    b = a.shifted(3)
    assert count_coincidences(a, b, 10.0, 0, 10.0).coincidences == 0
    assert count_coincidences(a, b, 10.0, 3, 10.0).coincidences == len(a)


def test_unaligned_epochs_rejected():
    a = make_stream([1, 2], epoch=0.0)
    b = make_stream([1, 2], epoch=1.0)
    with pytest.raises(ValidationError):
        count_coincidences(a, b, 10.0, 0, 1.0)


def test_accidentals_on_independent_poisson_streams():
    # oracle expectation: S_a * S_b * tau_eff * T with the 3-bin (15 ns)
    # acceptance of a 10 ns request
    from qlansim.photonics import simulate_pair_stream
    from qlansim.timing import tdc_bin

    rate, duration = 1e4, 60.0
    a = tdc_bin(simulate_pair_stream(1, rate, duration, seed=11), 0.0)
    b = tdc_bin(simulate_pair_stream(1, rate, duration, seed=22), 0.0, node_id=1)
    r = count_coincidences(a, b, 10.0, 0, duration)
    expected = rate * rate * effective_window_s(10.0) * duration
    assert abs(r.coincidences - expected) < 5 * np.sqrt(expected)
    # the reported estimate tracks the count
    assert abs(r.accidental_estimate - expected) < 0.1 * expected


def test_two_pointer_equals_brute_force_on_random_streams():
    rng = np.random.default_rng(33)
    for trial in range(200):
        na, nb = rng.integers(0, 200, 2)
        span = int(rng.integers(50, 2000))
        a = np.sort(rng.integers(0, span, na)).astype(np.int64)
        b = np.sort(rng.integers(0, span, nb)).astype(np.int64)
        window = float(rng.choice([5.0, 10.0, 20.0, 30.0]))
        offset = int(rng.integers(-4, 5))
        got = count_coincidences(
            make_stream(a), make_stream(b), window, offset, 1.0
        ).coincidences
        want = brute_force_count(a, b, window_half_bins(window), offset)
        assert got == want, f"trial {trial}: {got} != {want}"


def test_histogram_peak_at_shift():
    rng = np.random.default_rng(3)
    a = make_stream(rng.choice(10**6, 1000, replace=False))
    b = a.shifted(17)
    hist = coincidence_histogram(a, b, 40)
    assert max(hist, key=hist.get) == 17
    assert hist[17] == len(a)


def test_histogram_flat_for_independent_streams():
    from qlansim.photonics import simulate_pair_stream
    from qlansim.timing import tdc_bin

    a = tdc_bin(simulate_pair_stream(1, 5e3, 30.0, seed=5), 0.0)
    b = tdc_bin(simulate_pair_stream(1, 5e3, 30.0, seed=6), 0.0, node_id=1)
    hist = coincidence_histogram(a, b, 50)
    counts = np.array(list(hist.values()), dtype=float)
    assert counts.max() <= counts.mean() + 5 * max(counts.std(), 1.0)


def test_histogram_peak_equals_offset_estimate_on_significant_pairs():
    from qlansim.timing import estimate_offset_full

    rng = np.random.default_rng(41)
    for shift in (-12, 0, 4, 29):
        base = make_stream(rng.choice(10**7, 1200, replace=False))
        other = base.shifted(shift)
        est = estimate_offset_full(base, other, 40)
        assert est.significant
        hist = coincidence_histogram(base, other, 40)
        assert max(hist, key=hist.get) == est.offset_bins == shift


def test_histogram_empty_stream_all_zero():
    a = make_stream([])
    b = make_stream([1, 2, 3])
    hist = coincidence_histogram(a, b, 5)
    assert set(hist) == set(range(-5, 6))
    assert all(v == 0 for v in hist.values())


def test_histogram_window_sum_bounds_one_to_one_count():
    rng = np.random.default_rng(7)
    a = make_stream(rng.choice(10**6, 800, replace=False))
    b = make_stream(rng.choice(10**6, 800, replace=False))
    hist = coincidence_histogram(a, b, 10)
    window_sum = hist[-1] + hist[0] + hist[1]
    counted = count_coincidences(a, b, 10.0, 0, 1.0).coincidences
    assert counted <= window_sum
    assert counted >= window_sum - 2  # one-to-one pairing can only lose ties


def test_tomography_counts_born_rule():
    psi = qstate.bell_state("psi+")
    counts = simulate_tomography_counts(psi, 50_000, seed=9)
    assert counts.count("H", "H") == 0
    zz_total = sum(counts.count(a, b) for a in "HV" for b in "HV")
    assert zz_total == 50_000
    assert abs(counts.count("H", "V") - 0.5 * zz_total) < 5 * np.sqrt(0.25 * zz_total)


def test_tomography_counts_reconstruct_round_trip():
    w = qstate.werner_state(0.9)
    counts = simulate_tomography_counts(w, 111_112, seed=10)
    rec = qstate.reconstruct_state(counts)
    assert qstate.fidelity(rec, qstate.bell_state("psi+")) >= 0.99 * 0.925


def test_link_metrics_published_rows():
    # E_N = 0.89 at 231.46/s gives 206 ebits/s; 0.82 at 390.2/s gives 320
    w = qstate.werner_state((4 * 0.90 - 1) / 3)
    result = CoincidenceResult(
        coincidences=13888, singles_a=60000, singles_b=60000,
        window_ns=10.0, integration_time_s=60.0, accidental_estimate=3.0,
    )
    m = link_metrics(w, result)
    assert m.coincidence_rate == pytest.approx(231.47, abs=0.01)
    assert m.ebit_rate == pytest.approx(m.log_negativity * m.coincidence_rate, rel=1e-12)
    assert qstate.ebit_rate(0.82, 390.24) == pytest.approx(320.0, abs=0.01)


def test_link_metrics_zero_coincidences():
    m = link_metrics(
        qstate.werner_state(0.5),
        CoincidenceResult(0, 10, 10, 10.0, 60.0, 0.0),
    )
    assert m.coincidence_rate == 0.0
    assert m.ebit_rate == 0.0


def test_link_metrics_bootstrap_scales_with_counts():
    w = qstate.werner_state(0.85)
    sigmas = []
    for per_setting in (2_000, 20_000):
        counts = simulate_tomography_counts(w, per_setting, seed=12)
        total = int(counts.total())
        result = CoincidenceResult(total, 4 * total, 4 * total, 10.0, 60.0, 1.0)
        rec = qstate.reconstruct_state(counts)
        m = link_metrics(rec, result, counts=counts, resamples=200, seed=13)
        sigmas.append(m.fidelity_sigma)
    ratio = sigmas[0] / sigmas[1]
    assert np.sqrt(10) / 2 <= ratio <= 2 * np.sqrt(10)


def test_ebit_rate_linearity_in_rate_and_entanglement():
    w = qstate.werner_state(0.9)
    base = link_metrics(w, CoincidenceResult(600, 5000, 5000, 10.0, 60.0, 0.0))
    double = link_metrics(w, CoincidenceResult(1200, 5000, 5000, 10.0, 60.0, 0.0))
    assert double.ebit_rate == pytest.approx(2 * base.ebit_rate, rel=1e-9)
    lower = link_metrics(
        qstate.werner_state(0.6), CoincidenceResult(600, 5000, 5000, 10.0, 60.0, 0.0)
    )
    assert lower.ebit_rate < base.ebit_rate


def test_result_invariant_coincidences_bounded_by_singles():
    with pytest.raises(ValidationError):
        CoincidenceResult(11, 10, 20, 10.0, 1.0, 0.0)
