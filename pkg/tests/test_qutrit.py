import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.linalg import expm

from upconv.errors import FitError, ParameterError
from upconv.qutrit import (
    DEFAULT_TRANSMON,
    DragPulse,
    QutritState,
    TransmonParams,
    calibrate_pulses,
    clifford_sequence,
    clifford_unitaries,
    coherence_limit,
    drag_drive,
    fit_leakage,
    fit_rb_decay,
    ground_state,
    lossless,
    propagate,
    rb_sequence_from_indices,
    rotation_unitary,
    run_rb,
    thermal_state,
)

CLEAN = lossless(DEFAULT_TRANSMON)


@pytest.fixture(scope="module")
def default_cal():
    return calibrate_pulses()


def pi_pulse(cal, pulse=None, params=CLEAN, phi=0.0):
    """Envelope pair for one calibrated pi pulse."""
    pulse = pulse or DragPulse()
    env = drag_drive(pulse, cal.peak_pi_rad_s, params, detuning_hz=cal.detune_pi_hz)
    if phi:
        z = (env.i_env + 1j * env.q_env) * np.exp(1j * phi)
        env = replace(env, i_env=z.real, q_env=z.imag)
    return env


# ---------------------------------------------------------------------------
# parameters and states
# ---------------------------------------------------------------------------

def test_transmon_params_validation():
    with pytest.raises(ParameterError):
        TransmonParams(t1_s=-1.0)
    with pytest.raises(ParameterError):
        TransmonParams(t1_s=10e-6, t2_echo_s=30e-6)  # t2e > 2 t1
    with pytest.raises(ParameterError):
        TransmonParams(anharmonicity_hz=0.0)
    with pytest.raises(ParameterError):
        TransmonParams(thermal_population=1.0)
    assert DEFAULT_TRANSMON.dephasing_rate > 0
    assert lossless(DEFAULT_TRANSMON).dephasing_rate == 0.0


def test_qutrit_state_validation():
    with pytest.raises(ParameterError):
        QutritState(np.eye(2))
    with pytest.raises(ParameterError):
        QutritState(np.diag([1.0, 0.5, 0.0]))  # trace 1.5
    bad = np.diag([1.2, -0.2, 0.0]).astype(complex)
    with pytest.raises(ParameterError):
        QutritState(bad)  # negative population
    herm = np.diag([0.5, 0.5, 0.0]).astype(complex)
    herm[0, 1] = 0.1j
    with pytest.raises(ParameterError):
        QutritState(herm)  # not Hermitian
    s = thermal_state(DEFAULT_TRANSMON)
    assert s.populations == pytest.approx([0.964, 0.036, 0.0])


# ---------------------------------------------------------------------------
# idle Lindblad dynamics against closed forms
# ---------------------------------------------------------------------------

def test_t1_decay_matches_closed_form():
    t = 5e-6
    rho0 = QutritState(np.diag([0.0, 1.0, 0.0]).astype(complex))
    out = propagate(rho0, None, DEFAULT_TRANSMON, duration_s=t)
    assert out.populations[1] == pytest.approx(math.exp(-t / 23.7e-6), rel=1e-9)


def test_f_state_cascade_matches_closed_form():
    # |f> decays at 2/T1 and feeds |e>: P_e(t) = 2 e^{-t/T1} (1 - e^{-t/T1})
    t = 4e-6
    g = 1.0 / 23.7e-6
    rho0 = QutritState(np.diag([0.0, 0.0, 1.0]).astype(complex))
    out = propagate(rho0, None, DEFAULT_TRANSMON, duration_s=t)
    assert out.populations[2] == pytest.approx(math.exp(-2 * g * t), rel=1e-9)
    assert out.populations[1] == pytest.approx(
        2 * math.exp(-g * t) * (1 - math.exp(-g * t)), rel=1e-8
    )


def test_echo_coherence_decays_at_t2():
    t = 3e-6
    rho0 = QutritState(np.array([[0.5, 0.5, 0], [0.5, 0.5, 0], [0, 0, 0]], dtype=complex))
    out = propagate(rho0, None, DEFAULT_TRANSMON, duration_s=t)
    assert abs(out.rho[0, 1]) == pytest.approx(0.5 * math.exp(-t / 16.6e-6), rel=1e-9)


def test_propagate_matches_expm_oracle():
    # constant drive, fine steps, against the exact Liouvillian exponential
    om = 2 * math.pi * 5e6 * np.exp(0.3j)
    t = 40e-9
    p = DEFAULT_TRANSMON
    a = np.diag([1.0, math.sqrt(2.0)], 1).astype(complex)
    n = np.diag([0.0, 1.0, 2.0]).astype(complex)
    h = 2 * math.pi * p.anharmonicity_hz * np.diag([0.0, 0.0, 1.0]) + 0.5 * (
        om * a.conj().T + np.conj(om) * a
    )
    eye = np.eye(3)
    lv = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for c in (math.sqrt(1.0 / p.t1_s) * a, math.sqrt(2.0 * p.dephasing_rate) * n):
        cc = c.conj().T @ c
        lv += np.kron(c, c.conj()) - 0.5 * (np.kron(cc, eye) + np.kron(eye, cc.T))
    rho0 = thermal_state(p).rho
    want = (expm(lv * t) @ rho0.reshape(9)).reshape(3, 3)

    # zero-offset tone = exactly constant drive on the integrator grid
    got = propagate(QutritState(rho0), [(0.0, om)], p, dt=2e-11, duration_s=t).rho
    assert np.max(np.abs(got - want)) < 1e-9


def test_propagate_drive_forms():
    with pytest.raises(ParameterError):
        propagate(ground_state(), None, DEFAULT_TRANSMON)  # needs duration
    with pytest.raises(ParameterError):
        propagate(ground_state(), None, DEFAULT_TRANSMON, dt=1e-8, duration_s=1e-6)
    out = propagate(ground_state(), [(0.0, 0.0)], CLEAN, duration_s=1e-7)
    assert out.populations[0] == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------------------
# calibrated pulses
# ---------------------------------------------------------------------------

def test_calibrated_pi_pulse_inverts_population(default_cal):
    out = propagate(ground_state(), pi_pulse(default_cal), CLEAN)
    pops = out.populations
    assert pops[1] > 1.0 - 1e-6
    assert pops[2] < 1e-8


def test_two_half_pulses_make_a_pi(default_cal):
    pulse = DragPulse()
    env = drag_drive(pulse, default_cal.peak_half_rad_s, CLEAN,
                     detuning_hz=default_cal.detune_half_hz)
    mid = propagate(ground_state(), env, CLEAN)
    assert mid.populations[1] == pytest.approx(0.5, abs=1e-3)
    out = propagate(mid, env, CLEAN)
    assert out.populations[1] > 1.0 - 1e-6


def test_half_pulse_axis_convention(default_cal):
    # an x-axis pi/2 rotation leaves rho_ge = +i/2 up to small frame shifts
    pulse = DragPulse()
    env = drag_drive(pulse, default_cal.peak_half_rad_s, CLEAN,
                     detuning_hz=default_cal.detune_half_hz)
    out = propagate(ground_state(), env, CLEAN)
    assert out.rho[0, 1].imag > 0.45


def test_drag_orders_leakage(default_cal):
    # correct coefficient beats none, none beats the wrong sign
    leak = {}
    for scale in (1.0, 0.0, -1.0):
        pulse = DragPulse(drag_scale=scale)
        cal = calibrate_pulses(pulse, CLEAN)
        env = drag_drive(pulse, cal.peak_pi_rad_s, CLEAN, detuning_hz=cal.detune_pi_hz)
        leak[scale] = propagate(ground_state(), env, CLEAN).populations[2]
    assert leak[1.0] < leak[0.0] < leak[-1.0]


def test_ef_tone_sign_convention(default_cal):
    # a tone at the anharmonicity offset drives e->f resonantly
    excited = propagate(ground_state(), pi_pulse(default_cal), CLEAN)
    amp = 2 * math.pi * 2e6
    t_pi = math.pi / (math.sqrt(2.0) * amp)
    onres = propagate(excited, [(-178e6, amp)], CLEAN, duration_s=t_pi)
    offres = propagate(excited, [(178e6, amp)], CLEAN, duration_s=t_pi)
    assert onres.populations[2] > 0.999
    assert offres.populations[2] < 0.01


def test_calibration_converges_for_short_pulse():
    # stronger drive, larger Stark shift to absorb; finer dt to resolve it
    cal = calibrate_pulses(DragPulse(sigma_s=4e-9), CLEAN)
    pulse = DragPulse(sigma_s=4e-9)
    env = drag_drive(pulse, cal.peak_pi_rad_s, CLEAN, detuning_hz=cal.detune_pi_hz)
    out = propagate(ground_state(), env, CLEAN, dt=2e-11)
    assert out.populations[1] > 1.0 - 1e-5


# ---------------------------------------------------------------------------
# Clifford table
# ---------------------------------------------------------------------------

def test_cliffords_distinct_and_closed():
    u = clifford_unitaries()
    assert u.shape == (24, 2, 2)
    # pairwise distinct up to global phase
    ov = np.abs(np.einsum("iab,jab->ij", u.conj(), u))
    assert np.all(ov[~np.eye(24, dtype=bool)] < 2.0 - 1e-6)
    # closed under composition
    for i in range(24):
        for j in range(24):
            prod = u[i] @ u[j]
            assert np.max(np.abs(np.einsum("kab,ba->k", u, prod.conj().T))) > 2.0 - 1e-9


def test_clifford_pulse_table_cost():
    from upconv.qutrit import _CLIFFORD_XY

    assert len(_CLIFFORD_XY) == 24
    slots = sum(len(names) for names in _CLIFFORD_XY)
    assert slots == 45  # 1.875 physical pulses per Clifford


def test_single_decomposition_reconstructs_each_clifford():
    u = clifford_unitaries()
    for k in range(24):
        seq = rb_sequence_from_indices([k], decomposition="single")
        # sequence of Clifford k plus its inverse composes to identity
        tot = seq.ideal_unitary()
        assert abs(np.trace(tot)) > 2.0 - 1e-9
        # the chosen recovery really is the group inverse
        inv = u[seq.recovery] @ u[k]
        assert abs(np.trace(inv)) > 2.0 - 1e-9


def test_sequence_construction():
    seq = clifford_sequence(20, seed=5)
    same = clifford_sequence(20, seed=5)
    other = clifford_sequence(20, seed=6)
    assert seq.indices == same.indices
    assert seq.indices != other.indices
    assert abs(np.trace(seq.ideal_unitary())) > 2.0 - 1e-9
    assert clifford_sequence(0, seed=1).recovery == 0
    with pytest.raises(ParameterError):
        rb_sequence_from_indices([24])
    with pytest.raises(ParameterError):
        clifford_sequence(-1, seed=0)
    with pytest.raises(ParameterError):
        rb_sequence_from_indices([0], decomposition="zx")


def test_xy_and_single_slot_counts():
    seq_xy = clifford_sequence(40, seed=9, decomposition="xy")
    seq_one = clifford_sequence(40, seed=9, decomposition="single")
    assert seq_one.slot_count == 41  # one pulse per Clifford incl. recovery
    assert seq_xy.slot_count >= seq_one.slot_count


# ---------------------------------------------------------------------------
# randomized benchmarking
# ---------------------------------------------------------------------------

def test_rb_without_decoherence_stays_in_ground_state(default_cal):
    for mode in ("single", "xy"):
        res = run_rb((100,), 3, params=CLEAN, seed=3, decomposition=mode,
                     bootstrap=0, calibration=default_cal)
        assert res.fit is None
        assert np.all(res.samples_g > 1.0 - 1e-4), mode


def test_rb_decay_tracks_coherence_limit(default_cal):
    res = run_rb((1, 5, 10, 20, 50, 100, 150, 200), 8, seed=7, bootstrap=0,
                 calibration=default_cal)
    limit = coherence_limit(DEFAULT_TRANSMON)
    assert res.fit is not None
    assert res.error_per_clifford == pytest.approx(limit, rel=0.25)
    assert 0.4 < res.fit.b < 0.6
    assert 0.3 < res.fit.a < 0.6
    # curve actually decays
    assert res.p_g[0] > res.p_g[-1] + 0.1


def test_rb_thermal_start_without_preselection(default_cal):
    res = run_rb((0,), 4, seed=5, preselected=False, bootstrap=0,
                 calibration=default_cal)
    assert res.p_g[0] == pytest.approx(1.0 - 0.036, abs=0.005)


def test_rb_readout_hook_is_used(default_cal):
    class CountingReadout:
        calls = 0

        def simulate_assignment(self, probs, shots, rng):
            type(self).calls += 1
            counts = rng.multinomial(shots, probs / probs.sum())
            return counts / shots

    res = run_rb((1, 10, 20), 2, params=CLEAN, seed=9, bootstrap=0,
                 readout=CountingReadout(), readout_shots=500,
                 calibration=default_cal)
    assert CountingReadout.calls == 6
    assert np.all(res.samples_g >= 0.97)


def test_rb_distortion_tone_degrades_fidelity(default_cal):
    # spur power orders the damage; offsets must be commensurate with slots
    kw = dict(params=CLEAN, seed=13, bootstrap=0, calibration=default_cal)
    clean = run_rb((60,), 4, **kw)
    weak = run_rb((60,), 4, distortion=[(100e6, -72.0)], **kw)
    strong = run_rb((60,), 4, distortion=[(100e6, -40.0)], **kw)
    assert strong.p_g[0] < weak.p_g[0]
    assert strong.p_g[0] < clean.p_g[0] - 1e-5
    with pytest.raises(ParameterError):
        run_rb((10,), 2, distortion=[(13e6, -60.0)], **kw)


def test_rb_is_deterministic(default_cal):
    a = run_rb((1, 10, 30), 3, seed=21, bootstrap=0, calibration=default_cal)
    b = run_rb((1, 10, 30), 3, seed=21, bootstrap=0, calibration=default_cal)
    c = run_rb((1, 10, 30), 3, seed=22, bootstrap=0, calibration=default_cal)
    assert np.array_equal(a.samples_g, b.samples_g)
    assert not np.array_equal(a.samples_g, c.samples_g)


def test_rb_input_validation(default_cal):
    with pytest.raises(ParameterError):
        run_rb((), 3, calibration=default_cal)
    with pytest.raises(ParameterError):
        run_rb((-1,), 3, calibration=default_cal)
    with pytest.raises(ParameterError):
        run_rb((10,), 0, calibration=default_cal)
    with pytest.raises(ParameterError):
        run_rb((10,), 2, decomposition="bad", calibration=default_cal)


# ---------------------------------------------------------------------------
# decay and leakage fits
# ---------------------------------------------------------------------------

def test_fit_rb_decay_recovers_exact_curve():
    n = np.array([1, 5, 10, 20, 50, 100, 150, 200], dtype=float)
    curve = 0.5 * 0.9966**n + 0.5
    fit = fit_rb_decay(n, curve, bootstrap=0)
    assert fit.error_per_clifford == pytest.approx(0.0017, abs=1e-9)
    assert fit.uncertainty is None


def test_fit_rb_decay_handles_noise_and_bootstrap():
    rng = np.random.default_rng(8)
    n = np.array([1, 5, 10, 20, 50, 100, 150, 200], dtype=float)
    truth = 0.45 * 0.995**n + 0.52
    samples = truth[:, None] + 0.005 * rng.standard_normal((n.size, 30))
    fit = fit_rb_decay(n, samples, bootstrap=100, seed=1)
    assert fit.error_per_clifford == pytest.approx(0.0025, abs=3e-4)
    assert 0.0 < fit.uncertainty < 5e-4


def test_fit_rb_decay_shallow_decay():
    n = np.array([1, 10, 50, 100, 200], dtype=float)
    curve = 0.5 * 0.999**n + 0.5
    fit = fit_rb_decay(n, curve, bootstrap=0)
    assert fit.error_per_clifford == pytest.approx(5e-4, rel=1e-3)


def test_fit_rb_decay_validation():
    with pytest.raises(ParameterError):
        fit_rb_decay([1, 2], [1.0, 0.9], bootstrap=0)
    with pytest.raises(ParameterError):
        fit_rb_decay([1, 2, 3], [[1.0], [0.9]], bootstrap=0)


def test_fit_leakage_round_trip():
    n = np.array([1, 10, 30, 60, 100, 150, 200], dtype=float)
    up, down = 7e-5, 1e-2
    rate = up + down
    pf = up / rate * -np.expm1(-rate * n)
    fit = fit_leakage(n, pf)
    assert fit.p_up == pytest.approx(up, rel=1e-3)
    assert fit.p_down == pytest.approx(down, rel=1e-3)


def test_fit_leakage_degenerate_cases():
    n = np.array([1, 10, 30, 60, 100, 150, 200], dtype=float)
    # no leakage at all
    fit = fit_leakage(n, np.zeros_like(n))
    assert fit.p_up < 1e-7
    # linear regime: only the product is constrained; the rate model can
    # only approximate an exactly linear curve, hence the looser bound
    fit = fit_leakage(n, 2.6e-5 * n)
    assert fit.p_up == pytest.approx(2.6e-5, rel=5e-3)
    with pytest.raises(ParameterError):
        fit_leakage([1, 2], [0.0, 1e-5])


def test_leakage_increases_with_drag_miscalibration():
    # fixed calibration, scanned DRAG weight: less DRAG leaks more
    pulse = DragPulse(sigma_s=3e-9)
    cal = calibrate_pulses(pulse, DEFAULT_TRANSMON)
    ups = []
    for eps in (0.0, 0.02, 0.05):
        scanned = DragPulse(sigma_s=3e-9, drag_scale=1.0 - eps)
        res = run_rb((1, 10, 30, 60, 100, 150, 200), 8, pulse=scanned,
                     seed=11, bootstrap=0, calibration=cal)
        ups.append(fit_leakage(res.lengths, res.p_f).p_up)
    assert ups[0] > 0
    assert ups[0] < ups[1] < ups[2]


# ---------------------------------------------------------------------------
# coherence limit
# ---------------------------------------------------------------------------

def test_coherence_limit_frozen_value():
    assert coherence_limit(DEFAULT_TRANSMON, 50e-9) == pytest.approx(
        1.3537523e-3, rel=1e-6
    )
    with pytest.raises(ParameterError):
        coherence_limit(DEFAULT_TRANSMON, 0.0)


def test_coherence_limit_matches_idle_oracle():
    # average idle survival over the six cardinal states
    t = 50e-9
    kets = [
        np.array([1, 0]), np.array([0, 1]),
        np.array([1, 1]) / math.sqrt(2), np.array([1, -1]) / math.sqrt(2),
        np.array([1, 1j]) / math.sqrt(2), np.array([1, -1j]) / math.sqrt(2),
    ]
    fids = []
    for k in kets:
        rho = np.zeros((3, 3), dtype=complex)
        rho[:2, :2] = np.outer(k, k.conj())
        out = propagate(QutritState(rho), None, DEFAULT_TRANSMON, duration_s=t)
        fids.append(float(np.real(k.conj() @ out.rho[:2, :2] @ k)))
    oracle = 1.0 - np.mean(fids)
    assert coherence_limit(DEFAULT_TRANSMON, t) == pytest.approx(oracle, rel=1e-6)


def test_coherence_limit_grows_with_duration():
    a = coherence_limit(DEFAULT_TRANSMON, 25e-9)
    b = coherence_limit(DEFAULT_TRANSMON, 50e-9)
    c = coherence_limit(DEFAULT_TRANSMON, 100e-9)
    assert a < b < c
