"""Pair emission, detection chain, and state-degradation models."""

import numpy as np
import pytest

from qlansim import qstate
from qlansim.errors import ValidationError
from qlansim.coincidence import count_coincidences
from qlansim.photonics import (
    DetectorModel,
    FiberLink,
    SourceModel,
    accidental_rate,
    dead_time_filter,
    detect,
    effective_state,
    mix_states,
    project_pairs,
    rotate_signal,
    simulate_pair_stream,
)
from qlansim.timing import ClockModel

LOSSLESS = FiberLink(0.0, 0.0, 0.0)
IDEAL_DET = DetectorModel(efficiency=1.0, dark_count_rate=0.0, jitter_sigma_ns=0.0, dead_time_ns=0.0)
IDEAL_CLOCK = ClockModel(0.0, 0.0, 0.0)


def test_pair_stream_poisson_count():
    em = simulate_pair_stream(1, 1e4, 10.0, seed=1)
    assert abs(em.size - 1e5) < 5 * np.sqrt(1e5)
    assert np.all(np.diff(em) >= 0)
    assert em.min() >= 0 and em.max() < 10e9


def test_pair_stream_zero_duration_empty():
    assert simulate_pair_stream(1, 1e4, 0.0, seed=1).size == 0


def test_pair_stream_deterministic_per_seed():
    a = simulate_pair_stream(2, 5e3, 1.0, seed=9)
    b = simulate_pair_stream(2, 5e3, 1.0, seed=9)
    c = simulate_pair_stream(2, 5e3, 1.0, seed=10)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_pair_stream_rejects_bad_inputs():
    with pytest.raises(ValidationError):
        simulate_pair_stream(1, 0.0, 1.0, seed=1)
    with pytest.raises(ValidationError):
        simulate_pair_stream(1, 100.0, -1.0, seed=1)


def test_detect_ideal_chain_equals_emissions_plus_offset():
    em = simulate_pair_stream(1, 2e4, 1.0, seed=3)
    clock = ClockModel(mean_offset_ns=100.0, jitter_sigma_ns=0.0)
    stream = detect(em, LOSSLESS, IDEAL_DET, clock, 1.0, seed=4)
    expected = np.floor((np.sort(em) + 100.0) / 5.0).astype(np.int64)
    assert np.array_equal(stream.bins, expected)


def test_detect_half_efficiency_both_arms_quarter_coincidences():
    em = simulate_pair_stream(1, 2e4, 5.0, seed=5)
    det = DetectorModel(efficiency=0.5, dark_count_rate=0.0, jitter_sigma_ns=0.0, dead_time_ns=0.0)
    a = detect(em, LOSSLESS, det, IDEAL_CLOCK, 5.0, seed=6)
    b = detect(em, LOSSLESS, det, IDEAL_CLOCK, 5.0, seed=7)
    result = count_coincidences(a, b, 5.0, 0, 5.0)
    n = em.size
    # per-pair joint survival is 0.25; binomial five-sigma band
    assert abs(result.coincidences - 0.25 * n) < 5 * np.sqrt(n * 0.25 * 0.75)


def test_fiber_transmission_formula():
    assert FiberLink(250.0, 0.2, 0.0).transmission() == pytest.approx(10 ** (-0.005), rel=1e-12)
    assert FiberLink(0.0, 0.2, 3.0).transmission() == pytest.approx(10 ** (-0.3), rel=1e-12)
    with pytest.raises(ValidationError):
        FiberLink(-1.0, 0.2, 0.0)


def test_detect_transmission_thinning_statistics():
    em = simulate_pair_stream(1, 1e5, 1.0, seed=11)
    link = FiberLink(250.0, 0.2, 0.0)
    stream = detect(em, link, IDEAL_DET, IDEAL_CLOCK, 1.0, seed=12)
    p = link.transmission()
    assert abs(len(stream) - p * em.size) < 5 * np.sqrt(em.size * p * (1 - p))


def test_coincidences_scale_as_product_of_transmissions():
    em = simulate_pair_stream(1, 4e4, 5.0, seed=13)
    n = em.size
    for i, ea in enumerate((0.4, 0.8)):
        for j, eb in enumerate((0.3, 0.6)):
            da = DetectorModel(efficiency=ea, dark_count_rate=0, jitter_sigma_ns=0, dead_time_ns=0)
            db = DetectorModel(efficiency=eb, dark_count_rate=0, jitter_sigma_ns=0, dead_time_ns=0)
            a = detect(em, LOSSLESS, da, IDEAL_CLOCK, 5.0, seed=100 + i)
            b = detect(em, LOSSLESS, db, IDEAL_CLOCK, 5.0, seed=200 + j)
            got = count_coincidences(a, b, 5.0, 0, 5.0).coincidences
            p = ea * eb
            assert abs(got - p * n) < 5 * np.sqrt(n * p * (1 - p))


def test_detect_dark_counts_only():
    det = DetectorModel(efficiency=1.0, dark_count_rate=5000.0, jitter_sigma_ns=0.0, dead_time_ns=0.0)
    stream = detect(np.empty(0), LOSSLESS, det, IDEAL_CLOCK, 10.0, seed=21)
    assert abs(len(stream) - 5e4) < 5 * np.sqrt(5e4)


def test_detect_never_exceeds_emissions_plus_darks():
    em = simulate_pair_stream(1, 1e4, 1.0, seed=22)
    det = DetectorModel(efficiency=1.0, dark_count_rate=100.0, jitter_sigma_ns=0.1, dead_time_ns=0.0)
    stream = detect(em, LOSSLESS, det, IDEAL_CLOCK, 1.0, seed=23)
    assert len(stream) <= em.size + 200  # darks ~100 expected


def test_dead_time_filter_burst():
    t = np.array([0.0, 30.0, 70.0, 100.0, 109.0, 200.0])
    assert list(dead_time_filter(t, 50.0)) == [0.0, 70.0, 200.0]
    assert list(dead_time_filter(t, 0.0)) == list(t)


def test_detect_dead_time_enforced():
    # saturating flux: a 10 us dead time caps the rate near 1/dead_time
    em = np.sort(np.random.default_rng(1).uniform(0, 1e9, 100_000))
    det = DetectorModel(efficiency=1.0, dark_count_rate=0.0, jitter_sigma_ns=0.0, dead_time_ns=10_000.0)
    stream = detect(em, LOSSLESS, det, IDEAL_CLOCK, 1.0, seed=2)
    times = stream.bins * 5.0
    assert np.all(np.diff(times) >= 10_000.0 - 5.0)
    assert len(stream) <= 1e9 / 10_000.0 + 1


def test_accidental_rate_formula():
    assert accidental_rate(1e4, 1e4, 10e-9) == pytest.approx(1.0, rel=1e-12)
    assert accidental_rate(0.0, 123.0, 1e-8) == 0.0
    assert accidental_rate(100.0, 100.0, 2e-8) == pytest.approx(
        2 * accidental_rate(100.0, 100.0, 1e-8), rel=1e-12
    )
    with pytest.raises(ValidationError):
        accidental_rate(-1.0, 1.0, 1e-9)


def test_effective_state_limits():
    psi = qstate.bell_state("psi+")
    assert effective_state(psi, 10.0, 0.0) == psi
    mixed = effective_state(psi, 0.0, 10.0)
    assert np.allclose(mixed.matrix, np.eye(4) / 4)
    with pytest.raises(ValidationError):
        effective_state(psi, 0.0, 0.0)


def test_effective_state_equal_rates_is_werner_half():
    psi = qstate.bell_state("psi+")
    eff = effective_state(psi, 7.0, 7.0)
    assert qstate.fidelity(eff, psi) == pytest.approx(0.625, abs=1e-9)
    assert np.allclose(eff.matrix, qstate.werner_state(0.5).matrix, atol=1e-12)


def test_effective_state_fidelity_monotone_in_accidentals():
    psi = qstate.bell_state("psi+")
    fids = [
        qstate.fidelity(effective_state(psi, 100.0, acc), psi)
        for acc in (0.0, 1.0, 10.0, 100.0, 1000.0)
    ]
    assert all(a > b for a, b in zip(fids, fids[1:]))


def test_mix_states_weighting():
    psi = qstate.bell_state("psi+")
    phi = qstate.bell_state("phi+")
    mixed = mix_states([psi, phi], [3.0, 1.0])
    assert qstate.fidelity(mixed, psi) == pytest.approx(0.75, abs=1e-12)
    with pytest.raises(ValidationError):
        mix_states([psi], [0.0])


def test_rotation_fidelity_cosine_squared():
    psi = qstate.bell_state("psi+")
    for theta in (0.1, 0.4, 1.0):
        rotated = rotate_signal(psi, theta)
        assert qstate.fidelity(rotated, psi) == pytest.approx(np.cos(theta) ** 2, abs=1e-12)
        # local rotations do not change entanglement
        assert qstate.log_negativity(rotated) == pytest.approx(1.0, abs=1e-9)


def test_source_model_channel_state():
    src = SourceModel(
        flux_per_s=(1000.0, 900.0),
        states=(qstate.bell_state("psi+"), qstate.bell_state("psi+")),
        rotation_rad=(0.0, 0.3),
    )
    assert qstate.fidelity(src.channel_state(1), qstate.bell_state("psi+")) == pytest.approx(1.0)
    assert qstate.fidelity(src.channel_state(2), qstate.bell_state("psi+")) == pytest.approx(
        np.cos(0.3) ** 2, abs=1e-12
    )
    with pytest.raises(ValidationError):
        SourceModel(flux_per_s=(0.0, 1.0))


def test_project_pairs_born_rule():
    psi = qstate.bell_state("psi+")
    rng = np.random.default_rng(31)
    n = 200_000
    ma, mb = project_pairs(psi, "H", "V", n, rng)
    both = (ma & mb).mean()
    assert abs(both - 0.5) < 5 * np.sqrt(0.25 / n)
    ma, mb = project_pairs(psi, "H", "H", n, rng)
    assert (ma & mb).sum() == 0  # orthogonal outcome for the singlet-like state
    ma, mb = project_pairs(psi, "D", "D", n, rng)
    assert abs((ma & mb).mean() - 0.5) < 5 * np.sqrt(0.25 / n)


def test_detector_model_validation():
    with pytest.raises(ValidationError):
        DetectorModel(efficiency=0.0)
    with pytest.raises(ValidationError):
        DetectorModel(efficiency=0.5, kind="PMT")
    apd = DetectorModel.apd()
    assert apd.kind == "APD" and apd.efficiency == 0.20 and apd.dead_time_ns == 10_000.0
    snspd = DetectorModel.snspd()
    assert snspd.kind == "SNSPD" and snspd.efficiency == 0.80 and snspd.dead_time_ns == 50.0
