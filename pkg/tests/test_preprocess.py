import numpy as np
import pytest
from hypothesis import given, strategies as st

from glowrecon.forward import SourcePulse
from glowrecon.grid import TraceSet
from glowrecon.laplace import laplace_transform
from glowrecon.preprocess import (
    CorruptionModel, LatticeMismatchError, NoDirectSignalError, PipelineParams, calibrate, calibration_factor,
    corrupt, detect_onset, extract_scattered, process, propagate_data, time_zero_correct,
)

TAU = 0.003
PULSE = SourcePulse()


def pulse_trace(delay=0.1, nt=400, shape=(3, 2), amp=1.0):
    t = TAU * np.arange(nt)
    vals = amp * np.broadcast_to(PULSE.amplitude(t - delay), shape + (nt,)).copy()
    return TraceSet(2, 0.08, (0.0, 0.0), (0.02, 0.02), TAU, vals)


def template():
    t = TAU * np.arange(int(PULSE.t1 / TAU) + 1)
    return PULSE.amplitude(t)


def rel_l2(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# -- corruption -----------------------------------------------------------------------


def test_zero_model_is_identity():
    tr = pulse_trace()
    assert np.array_equal(corrupt(tr, CorruptionModel(), 0).values, tr.values)


def test_t0_is_pure_shift():
    tr = pulse_trace()
    out = corrupt(tr, CorruptionModel(t0=0.05), 0).values
    k = round(0.05 / TAU)
    assert np.array_equal(out[..., k:], tr.values[..., :-k])
    assert not out[..., :k].any()


def test_noise_snr_34_db():
    tr = pulse_trace(shape=(4, 4))
    snr = []
    for seed in range(100):
        noise = corrupt(tr, CorruptionModel(sigma=0.02), seed).values - tr.values
        snr.append(20 * np.log10(np.abs(tr.values).max() / noise.std()))
    assert np.mean(snr) == pytest.approx(34.0, abs=1.0)


def test_same_seed_same_noise():
    tr = pulse_trace()
    m = CorruptionModel(sigma=0.02)
    assert np.array_equal(corrupt(tr, m, 7).values, corrupt(tr, m, 7).values)
    assert not np.array_equal(corrupt(tr, m, 7).values, corrupt(tr, m, 8).values)


def test_echo_and_gain():
    tr = pulse_trace()
    out = corrupt(tr, CorruptionModel(echoes=((0.3, 0.5),), gain=2.0), 0).values
    k = round(0.3 / TAU)
    expect = tr.values.copy()
    expect[..., k:] += 0.5 * tr.values[..., :-k]
    assert np.allclose(out, 2.0 * expect)


def test_direct_signal_needs_waveform():
    with pytest.raises(ValueError):
        corrupt(pulse_trace(), CorruptionModel(direct=(0.0, 0.5)), 0)


@pytest.mark.parametrize("kw", [{"sigma": -1.0}, {"gain": 0.0}, {"t0": -0.1}, {"echoes": ((-0.1, 1.0),)}])
def test_model_rejects_bad_parameters(kw):
    with pytest.raises(ValueError):
        CorruptionModel(**kw)


# -- time zero ------------------------------------------------------------------------


def test_aligned_trace_has_zero_shift():
    tr = pulse_trace(delay=0.0)
    onset = detect_onset(tr, template())
    assert time_zero_correct(tr, template(), onset)[1] == 0


@given(t0=st.floats(0.0, 0.2), seed=st.integers(0, 1000))
def test_time_zero_round_trip(t0, seed):
    tr = pulse_trace(delay=0.05)
    onset = detect_onset(tr, template())
    noisy = corrupt(tr, CorruptionModel(sigma=0.02, t0=t0), seed)
    fixed, shift = time_zero_correct(noisy, template(), onset)
    assert abs(shift - round(t0 / TAU)) <= 1


def test_pure_noise_rejected(rng):
    tr = pulse_trace().with_values(rng.standard_normal((3, 2, 400)))
    with pytest.raises(NoDirectSignalError):
        detect_onset(tr, template(), 0.7)


def test_bad_template_rejected():
    with pytest.raises(ValueError):
        detect_onset(pulse_trace(), np.zeros(5))


# -- extraction -----------------------------------------------------------------------


def test_total_equal_incident_gives_zero():
    tr = pulse_trace()
    assert not extract_scattered(tr, tr).values.any()


def test_lattice_mismatch():
    a = pulse_trace()
    b = a.with_values(a.values, tau=2 * TAU)
    with pytest.raises(LatticeMismatchError):
        extract_scattered(a, b)


def test_gate_zeroes_outside_window():
    tr = pulse_trace()
    zero = tr.with_values(np.zeros_like(tr.values))
    out = extract_scattered(tr, zero, 0.2, 0.3)
    t = tr.times
    assert not out.values[..., (t < 0.2) | (t > 0.5)].any()
    inside = (t >= 0.2) & (t <= 0.5)
    assert np.array_equal(out.values[..., inside], tr.values[..., inside])


def test_gate_removes_late_echo(block_sim):
    # the echo arrives after the gate closes, so the gated result equals the gated clean record
    _, sim = block_sim
    model = CorruptionModel(echoes=((0.6, 0.3),))
    tot = corrupt(sim.total_meas, model, 0)
    ref = corrupt(sim.reference_meas, model, 0)
    gated = extract_scattered(tot, ref, 0.0, 0.6)
    clean = extract_scattered(sim.total_meas, sim.reference_meas, 0.0, 0.6)
    assert rel_l2(gated.values, clean.values) <= 0.05


def gate_leakage(sim, end):
    sc = extract_scattered(sim.total_meas, sim.reference_meas)
    e = (sc.values ** 2).sum(axis=(0, 1))
    inside = sc.times <= end
    return e[~inside].sum() / e[inside].sum()


@pytest.mark.xfail(strict=True, reason="block return rings to t ~ 1.1; see decisions ledger")
def test_block_energy_outside_primary_gate(block_sim):
    _, sim = block_sim
    assert gate_leakage(sim, 0.5) < 0.01


def test_block_energy_inside_late_gate(block_sim):
    _, sim = block_sim
    assert gate_leakage(sim, 0.85) < 0.1


# -- propagation ----------------------------------------------------------------------


def test_zero_distance_is_identity():
    tr = pulse_trace()
    out = propagate_data(tr, 0.0)
    assert np.array_equal(out.values, tr.values) and out.coord == tr.coord


def test_laplace_gain_of_propagation():
    tr = pulse_trace(delay=0.75)
    out = propagate_data(tr, 0.7)
    ratio = laplace_transform(out, 10.0) / laplace_transform(tr, 10.0)
    assert np.allclose(ratio, np.exp(7.0), rtol=1e-3)
    assert out.coord == pytest.approx(0.08 - 0.7)


@given(d=st.floats(0.01, 0.2))
def test_propagation_round_trip(d):
    tr = pulse_trace(delay=0.3)
    back = propagate_data(propagate_data(tr, d), -d)
    # two cubic-spline resamplings of a pulse with envelope kinks
    assert rel_l2(back.values, tr.values) < 5e-3
    assert back.coord == pytest.approx(tr.coord)


def test_shift_exceeding_record_rejected():
    with pytest.raises(ValueError):
        propagate_data(pulse_trace(nt=50), 1.0)


def near_plane_error(block_sim):
    cfg, sim = block_sim
    sc = extract_scattered(sim.total_meas, sim.reference_meas)
    moved = propagate_data(sc, cfg.measurement_z - sim.grid.z_gamma)
    direct = extract_scattered(sim.total_gamma, sim.reference_gamma)
    return rel_l2(moved.values, direct.values)


def test_propagation_against_direct_recording_coarse(block_sim):
    # plane-wave shift over 0.02 in the near field; measured about 28 %
    assert near_plane_error(block_sim) < 0.35


@pytest.mark.xfail(strict=True, reason="plane-wave shift misses near-field spreading; see decisions ledger")
def test_propagation_against_direct_recording(block_sim):
    assert near_plane_error(block_sim) <= 0.15


# -- calibration ----------------------------------------------------------------------


def test_identical_pair_factor_one():
    tr = pulse_trace()
    assert calibration_factor(tr, tr) == 1.0


def test_double_measured_halves():
    tr = pulse_trace()
    meas = tr.with_values(2 * tr.values)
    out = calibrate(tr, meas, tr)
    assert np.allclose(out.values, 0.5 * tr.values)


@given(a=st.floats(0.1, 10.0), b=st.floats(0.1, 10.0))
def test_calibration_is_linear(a, b):
    tr = pulse_trace()
    out = calibrate(tr.with_values(a * tr.values), tr.with_values(b * tr.values), tr)
    assert np.allclose(out.values, a / b * tr.values)


def test_zero_peaks_rejected():
    tr = pulse_trace()
    zero = tr.with_values(np.zeros_like(tr.values))
    with pytest.raises(ValueError):
        calibration_factor(zero, tr)
    with pytest.raises(ValueError):
        calibration_factor(tr, zero)


# -- all four steps --------------------------------------------------------------------


def test_process_undoes_t0_and_gain():
    clean = pulse_trace(delay=0.0, amp=1.0)
    echo = pulse_trace(delay=0.3, amp=0.2)
    total = clean.with_values(clean.values + echo.values)
    onset = detect_onset(clean, template())
    model = CorruptionModel(t0=0.03, gain=3.0)
    out = process(corrupt(total, model, 0), corrupt(clean, model, 1), template(), onset,
                  PipelineParams(), (total.with_values(3 * echo.values), echo))
    assert out.shifts == (10, 10)
    assert out.factor == pytest.approx(1 / 3)
    assert np.allclose(out.scattered.values, echo.values)
