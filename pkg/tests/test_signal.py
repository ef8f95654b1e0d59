"""Waveform, envelope, modulation, and spectrum tests."""

import numpy as np
import pytest

from upconv import signal as sig
from upconv.errors import GridMismatchError, ParameterError

RNG = np.random.default_rng(20260822)


# ---------------------------------------------------------------------------
# envelopes
# ---------------------------------------------------------------------------

def test_drag_duration_and_edges():
    env = sig.drag_envelope(10e-9, 2.5, 1.0, -0.9e-9, 2e9)
    assert env.n == 100
    assert env.duration == pytest.approx(50e-9, abs=0)
    # shifted Gaussian: exactly zero at the leading truncation edge,
    # renormalized peak exactly at amplitude
    assert env.i_env[0] == pytest.approx(0.0, abs=1e-15)
    assert env.i_env.max() == pytest.approx(1.0, abs=1e-12)


def test_drag_zero_coeff_kills_quadrature():
    env = sig.drag_envelope(10e-9, 2.5, 0.7, 0.0, 2e9)
    assert np.all(env.q_env == 0.0)


def test_drag_quadrature_peaks_at_inflection_points():
    fs = 10e9
    sigma = 10e-9
    env = sig.drag_envelope(sigma, 2.5, 1.0, -1e-9, fs)
    t = env.times
    tc = env.duration / 2
    dt = 1 / fs
    t_max = t[np.argmax(env.q_env)]
    t_min = t[np.argmin(env.q_env)]
    # derivative extrema sit at tc -+ sigma (coeff is negative here)
    assert min(abs(t_max - (tc + sigma)), abs(t_max - (tc - sigma))) <= dt
    assert min(abs(t_min - (tc + sigma)), abs(t_min - (tc - sigma))) <= dt
    assert abs(t_max - t_min) == pytest.approx(2 * sigma, abs=2 * dt)


def test_drag_rejects_coarse_grid():
    with pytest.raises(ParameterError):
        sig.drag_envelope(10e-9, 2.5, 1.0, 0.0, 0.3e9)


def test_constant_envelope_is_constant():
    env = sig.constant_envelope(0.2, 1e-6, 1e9)
    assert env.n == 1000
    assert env.is_constant()
    assert np.all(env.i_env == 0.2)


# ---------------------------------------------------------------------------
# modulation and up-conversion
# ---------------------------------------------------------------------------

def test_iq_modulate_at_zero_frequency_is_identity():
    env = sig.drag_envelope(10e-9, 2.5, 0.8, -1e-9, 2e9)
    v_i, v_q = sig.iq_modulate(env, 0.0, phase=0.0)
    np.testing.assert_allclose(v_i.samples, env.i_env, atol=1e-15)
    np.testing.assert_allclose(v_q.samples, env.q_env, atol=1e-15)


def test_iq_modulate_preserves_pointwise_norm():
    env = sig.drag_envelope(10e-9, 2.5, 1.0, -1e-9, 2e9)
    v_i, v_q = sig.iq_modulate(env, 100e6, phase=1.1)
    np.testing.assert_allclose(
        v_i.samples**2 + v_q.samples**2,
        env.i_env**2 + env.q_env**2,
        atol=1e-12,
    )


def test_iq_modulate_matches_rotation_formula():
    n, fs, f = 512, 2e9, 137e6
    env = sig.EnvelopePair(RNG.normal(size=n), RNG.normal(size=n), fs)
    phase = 0.37
    v_i, v_q = sig.iq_modulate(env, f, phase)
    ph = 2 * np.pi * f * env.times + phase
    np.testing.assert_allclose(
        v_i.samples, env.i_env * np.cos(ph) + env.q_env * np.sin(ph), atol=1e-12
    )
    np.testing.assert_allclose(
        v_q.samples, -env.i_env * np.sin(ph) + env.q_env * np.cos(ph), atol=1e-12
    )


def test_upconvert_places_single_sideband_exactly():
    # modulate + ideal up-conversion must equal the closed-form sideband:
    # i_env cos((w_lo + w_if) t + lo_phase + if_phase) + q_env sin(same)
    fs = 10e9
    f_if, f_lo = 100e6, 900e6
    if_phase, lo_phase = 0.7, -0.4
    env = sig.drag_envelope(10e-9, 2.5, 1.0, -1e-9, fs)
    v_i, v_q = sig.iq_modulate(env, f_if, if_phase)
    out = sig.ideal_iq_upconvert(v_i, v_q, sig.ToneSpec(f_lo, phase_rad=lo_phase))
    arg = 2 * np.pi * (f_lo + f_if) * env.times + lo_phase + if_phase
    direct = env.i_env * np.cos(arg) + env.q_env * np.sin(arg)
    assert np.max(np.abs(out.samples - direct)) < 1e-9


def test_upconvert_sign_inverted_if_lands_on_lower_sideband():
    fs = 10e9
    env = sig.constant_envelope(0.25, 1e-6, fs)
    v_i, v_q = sig.iq_modulate(env, -100e6)
    out = sig.ideal_iq_upconvert(v_i, v_q, sig.ToneSpec(900e6))
    assert sig.tone_amplitude(out, 800e6) == pytest.approx(0.25, abs=1e-9)
    assert sig.tone_amplitude(out, 1000e6) == pytest.approx(0.0, abs=1e-9)


def test_upconvert_zero_in_zero_out():
    fs = 10e9
    env = sig.constant_envelope(0.0, 1e-7, fs)
    v_i, v_q = sig.iq_modulate(env, 100e6)
    out = sig.ideal_iq_upconvert(v_i, v_q, sig.ToneSpec(1e9))
    assert np.all(out.samples == 0.0)


def test_upconvert_grid_checks():
    fs = 10e9
    a = sig.SampledWaveform(np.zeros(100), fs)
    b = sig.SampledWaveform(np.zeros(101), fs)
    with pytest.raises(GridMismatchError):
        sig.ideal_iq_upconvert(a, b, sig.ToneSpec(1e9))
    c = sig.SampledWaveform(np.zeros(100), fs)
    with pytest.raises(ParameterError):
        sig.ideal_iq_upconvert(a, c, sig.ToneSpec(6e9))


def test_modulate_rejects_if_above_nyquist():
    env = sig.constant_envelope(1.0, 1e-6, 1e9)
    with pytest.raises(ParameterError):
        sig.iq_modulate(env, 600e6)


# ---------------------------------------------------------------------------
# spectra
# ---------------------------------------------------------------------------

def _tone_wave(freqs_amps, fs, n):
    t = np.arange(n) / fs
    x = np.zeros(n)
    for f, a in freqs_amps:
        x += a * np.cos(2 * np.pi * f * t)
    return sig.SampledWaveform(x, fs)


def test_rect_window_reads_bin_centered_tone_exactly():
    fs = 1e9
    a0 = sig.dbm_to_amplitude(0.0)
    w = _tone_wave([(10e6, a0)], fs, 16000)
    # rbw = fs/4000 puts the tone exactly on bin 40 of a 4000-point segment
    sp = sig.power_spectrum(w, window="rect", rbw_hz=fs / 4000)
    assert sp.power_at(10e6, width_hz=sp.bin_hz / 2) == pytest.approx(0.0, abs=0.1)


def test_rect_window_conserves_total_power():
    fs = 1e9
    a0 = sig.dbm_to_amplitude(0.0)
    w = _tone_wave([(10e6, a0)], fs, 16000)
    sp = sig.power_spectrum(w, window="rect", rbw_hz=fs / 4000)
    total_w = np.sum(sig.dbm_to_watts(sp.power_dbm))
    assert 10 * np.log10(total_w / 1e-3) == pytest.approx(0.0, abs=0.1)


def test_flattop_reads_two_tones_regardless_of_bin_alignment():
    fs = 1e9
    a0 = sig.dbm_to_amplitude(0.0)
    a1 = sig.dbm_to_amplitude(-52.0)
    # 13.37 MHz is deliberately off-grid for every segment length
    w = _tone_wave([(13.37e6, a0), (113.37e6, a1)], fs, 2**18)
    sp = sig.power_spectrum(w, window="flattop", rbw_hz=1e6)
    p_hi = sp.power_at(13.37e6)
    p_lo = sp.power_at(113.37e6)
    assert p_hi == pytest.approx(0.0, abs=0.2)
    assert p_lo == pytest.approx(-52.0, abs=0.2)
    assert p_hi - p_lo == pytest.approx(52.0, abs=0.2)


def test_zero_waveform_spectrum_is_floored():
    w = sig.SampledWaveform(np.zeros(4096), 1e9)
    sp = sig.power_spectrum(w, window="hann", rbw_hz=2e6)
    assert np.all(sp.power_dbm <= -200.0)


def test_unachievable_rbw_raises():
    w = sig.SampledWaveform(np.zeros(1024), 1e9)
    with pytest.raises(ParameterError):
        sig.power_spectrum(w, window="rect", rbw_hz=1e5)


def test_unknown_window_raises():
    w = sig.SampledWaveform(np.zeros(1024), 1e9)
    with pytest.raises(ParameterError):
        sig.power_spectrum(w, window="blackmanharris")


def test_tone_power_invariant_under_time_shift():
    fs = 1e9
    a0 = sig.dbm_to_amplitude(-3.0)
    w = _tone_wave([(20e6, a0)], fs, 2**15)
    rolled = sig.SampledWaveform(np.roll(w.samples, 1234), fs)
    sp1 = sig.power_spectrum(w, window="flattop", rbw_hz=1e6)
    sp2 = sig.power_spectrum(rolled, window="flattop", rbw_hz=1e6)
    assert sp1.power_at(20e6) == pytest.approx(sp2.power_at(20e6), abs=0.05)


def test_tone_amplitude_projection():
    fs = 1e9
    w = _tone_wave([(25e6, 0.123)], fs, 40000)  # integer periods
    assert sig.tone_amplitude(w, 25e6) == pytest.approx(0.123, abs=1e-12)
    shifted = sig.SampledWaveform(w.samples, fs, t0=3.3e-7)
    assert sig.tone_amplitude(shifted, 25e6) == pytest.approx(0.123, abs=1e-12)
    with pytest.raises(ParameterError):
        sig.tone_amplitude(w, -1.0)
    with pytest.raises(ParameterError):
        sig.tone_amplitude(w, fs)


def test_find_peaks_orders_and_guards():
    fs = 1e9
    tones = [(100e6, sig.dbm_to_amplitude(0.0)), (200e6, sig.dbm_to_amplitude(-40.0))]
    sp = sig.power_spectrum(_tone_wave(tones, fs, 2**17), window="flattop", rbw_hz=1e6)
    freqs, powers = sig.find_peaks(sp, floor_dbm=-95.0)
    assert len(freqs) == 2
    assert abs(freqs[0] - 100e6) <= sp.rbw_hz
    assert abs(freqs[1] - 200e6) <= sp.rbw_hz
    assert powers[0] > powers[1]


def test_carrier_phase_shift_composes_and_inverts():
    fs = 1e9
    n = 1000
    t = np.arange(n) / fs
    x = 0.4 * np.cos(2 * np.pi * 50e6 * t) + 0.1 * np.cos(2 * np.pi * 150e6 * t + 0.2)
    y = sig.carrier_phase_shift(sig.carrier_phase_shift(x, 0.3), -0.3)
    np.testing.assert_allclose(y, x, atol=1e-12)
    a = sig.carrier_phase_shift(sig.carrier_phase_shift(x, 0.2), 0.5)
    b = sig.carrier_phase_shift(x, 0.7)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_resample_envelope_constant_and_shaped():
    cw = sig.constant_envelope(0.3, 1e-6, 2e9)
    up = sig.resample_envelope(cw, 20)
    assert up.sample_rate == 40e9
    assert up.n == 20 * cw.n
    assert np.all(up.i_env == 0.3)

    env = sig.drag_envelope(10e-9, 2.5, 1.0, -1e-9, 2e9)
    up = sig.resample_envelope(env, 10)
    assert up.sample_rate == 20e9
    assert up.i_env.max() == pytest.approx(1.0, abs=1e-4)
    # interior samples must track the analytic envelope closely
    t = up.times
    tc = env.duration / 2
    edge = np.exp(-0.5 * 2.5**2)
    analytic = (np.exp(-0.5 * ((t - tc) / 10e-9) ** 2) - edge) / (1 - edge)
    core = slice(up.n // 4, 3 * up.n // 4)
    np.testing.assert_allclose(up.i_env[core], analytic[core], atol=2e-4)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def test_waveform_binary_roundtrip(tmp_path):
    w = sig.SampledWaveform(RNG.normal(size=777), 6e9)
    path = tmp_path / "wave.bin"
    sig.write_waveform(path, w)
    back = sig.read_waveform(path)
    assert back.sample_rate == 6e9
    np.testing.assert_array_equal(back.samples, w.samples)


def test_waveform_binary_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"\x00" * 13)
    with pytest.raises(ParameterError):
        sig.read_waveform(path)


def test_spectrum_csv_roundtrip(tmp_path):
    sp = sig.Spectrum(np.arange(10) * 1e6 + 1e6, RNG.normal(size=10), 1e6)
    path = tmp_path / "spec.csv"
    sig.write_spectrum_csv(path, sp)
    header = path.read_text().splitlines()[0]
    assert header == "freq_hz,power_dbm"
    back = sig.read_spectrum_csv(path)
    np.testing.assert_allclose(back.freq_hz, sp.freq_hz)
    np.testing.assert_allclose(back.power_dbm, sp.power_dbm)
    assert back.rbw_hz == pytest.approx(1e6)
