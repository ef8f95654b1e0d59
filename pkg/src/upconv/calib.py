"""Calibration sweeps, spur analytics, drift, and phase-noise estimates.

Calibration follows the two-surface procedure: sweep the DC offsets with
the drive off and fit the carrier-amplitude surface, then sweep the
quadrature scale/phase pre-correction with a CW drive and fit the image
surface. Both model families are exact for the chain simulator, so the
fitted optimum is not limited to the sweep resolution.

The carrier surface depends on the two leakage terms only through their
phasor sum; the fit therefore reports an equivalent single-path leakage
(l_i, theta_i) with l_q = 0 rather than pretending to resolve four
parameters from two observables. The compensation offsets, which are the
actionable output, are unaffected by that convention.

Measurements inside sweeps use single-bin projections on short records
whose length makes every synthesis tone integer-periodic, which is exact
and much faster than a full Welch estimate. Spectrum-level analytics
(SFDR, drift time series) go through the Welch path.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares

from ._util import parallel_map
from .chains import (
    DoubleChainConfig,
    IqChainConfig,
    double_chain_waveform,
    iq_chain_waveform,
    run_iq_chain,
    snap_to_grid,
)
from .errors import AnalysisError, FitError, ParameterError
from .mixers import CompensationParams
from .signal import (
    Spectrum,
    constant_envelope,
    find_peaks,
    power_spectrum,
    tone_amplitude,
)


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

@dataclass
class CalSurface:
    """Measured amplitude over a rectangular parameter grid.

    values[i, j] corresponds to (axis1[i], axis2[j]).
    """

    axis1: np.ndarray
    axis2: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.axis1 = np.asarray(self.axis1, dtype=float)
        self.axis2 = np.asarray(self.axis2, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.axis1.ndim != 1 or self.axis2.ndim != 1 or self.axis1.size == 0 or self.axis2.size == 0:
            raise ParameterError("surface axes must be non-empty 1-D arrays")
        if self.values.shape != (self.axis1.size, self.axis2.size):
            raise ParameterError("values shape must be (len(axis1), len(axis2))")
        if np.any(self.values < 0):
            raise ParameterError("surface values are amplitudes and must be >= 0")

    def min_location(self):
        i, j = np.unravel_index(np.argmin(self.values), self.values.shape)
        return float(self.axis1[i]), float(self.axis2[j])


@dataclass
class CalResult:
    fitted_params: dict
    optimum: CompensationParams
    residual_rms: float
    covariance: np.ndarray


@dataclass
class SfdrResult:
    sfdr_db: float
    fundamental_hz: float
    fundamental_dbm: float
    spur_hz: float | None
    spur_dbm: float | None
    floor_limited: bool


@dataclass
class PhaseNoiseProfile:
    """Single-sideband phase noise L(f) in dBc/Hz at offset f from carrier."""

    points: tuple
    carrier_hz: float | None = None

    def __post_init__(self):
        pts = tuple((float(f), float(db)) for f, db in self.points)
        if not pts:
            raise ParameterError("phase-noise profile needs at least one point")
        freqs = [f for f, _ in pts]
        if any(f <= 0 for f in freqs) or any(b <= a for a, b in zip(freqs, freqs[1:])):
            raise ParameterError("offsets must be positive and strictly increasing")
        self.points = pts

    def level_dbc(self, freq_hz):
        """Log-log interpolation, linearly extended beyond the tabulated span."""
        f = np.atleast_1d(np.asarray(freq_hz, dtype=float))
        if np.any(f <= 0):
            raise ParameterError("offset frequencies must be positive")
        logf = np.log10([p[0] for p in self.points])
        vals = np.array([p[1] for p in self.points])
        x = np.log10(f)
        out = np.interp(x, logf, vals)
        if len(self.points) > 1:
            lo_slope = (vals[1] - vals[0]) / (logf[1] - logf[0])
            hi_slope = (vals[-1] - vals[-2]) / (logf[-1] - logf[-2])
            out = np.where(x < logf[0], vals[0] + lo_slope * (x - logf[0]), out)
            out = np.where(x > logf[-1], vals[-1] + hi_slope * (x - logf[-1]), out)
        return out if np.ndim(freq_hz) else float(out[0])

    def phase_psd(self, freq_hz):
        """Double-sideband phase PSD S_phi = 2 * 10^(L/10), rad^2/Hz."""
        return 2.0 * 10.0 ** (np.asarray(self.level_dbc(freq_hz)) / 10.0)


@dataclass
class DriftModel:
    """First-order thermal response of mixer parameters.

    Each named IqMixerModel field relaxes toward
    nominal + coeff * (T - base_temp_c) with one shared time constant.
    """

    temp_coeffs: dict = field(default_factory=dict)
    thermal_time_constant: float = 300.0
    base_temp_c: float = 20.0

    _FIELDS = (
        "lo_leak_i",
        "lo_leak_i_phase",
        "lo_leak_q",
        "lo_leak_q_phase",
        "gain_imbalance",
        "phase_imbalance",
    )

    def __post_init__(self):
        if self.thermal_time_constant <= 0:
            raise ParameterError("thermal_time_constant must be positive")
        for key in self.temp_coeffs:
            if key not in self._FIELDS:
                raise ParameterError(f"unknown drift parameter {key!r}")


def default_drift_model():
    # sized so a 10 degC step parks LO and image near -60 dBc: badly
    # degraded from calibration yet still below the -52 dBc quadratic
    # spur, which keeps the SFDR spur-limited as the suppressions decay
    return DriftModel(
        temp_coeffs={
            "lo_leak_i": 2.5e-6,
            "lo_leak_q": -2e-6,
            "lo_leak_i_phase": 1e-4,
            "lo_leak_q_phase": -1e-4,
            "gain_imbalance": 1e-4,
            "phase_imbalance": 1.5e-4,
        }
    )


def step_temperature_profile(
    duration_s=3600.0, dt_s=60.0, step_time_s=1800.0, base_c=20.0, final_c=30.0
):
    times = np.arange(0.0, duration_s + dt_s / 2, dt_s)
    return [(float(t), base_c if t < step_time_s else final_c) for t in times]


def default_phase_noise_profile(carrier_hz=6e9):
    """Synthesizer-like profile: flicker shoulder, then steep rolloff."""
    return PhaseNoiseProfile(
        (
            (1e3, -72.0),
            (1e4, -82.0),
            (1e5, -95.0),
            (1e6, -112.0),
            (1e7, -130.0),
            (1e8, -145.0),
        ),
        carrier_hz=carrier_hz,
    )


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

# short integer-period record: every tone of interest in the default plans
# is a multiple of 10 MHz, so 100 ns gives exact single-bin projections
SWEEP_RECORD_S = 100e-9


def _drive_amplitude(config, power_dbm=0.0):
    from .signal import dbm_to_amplitude

    return dbm_to_amplitude(power_dbm) / 10.0 ** (config.ideal_gain_db / 20.0)


def _sweep_points(config, comps, freq_hz, envelope):
    def one(comp):
        out = run_iq_chain(replace(config, comp=comp), envelope).output
        return tone_amplitude(out, freq_hz)

    return parallel_map(one, comps)


def sweep_lo_leakage(config, v_i_grid, v_q_grid, record_s=SWEEP_RECORD_S):
    """Carrier amplitude vs. DC offsets, drive off."""
    v_i_grid = np.asarray(v_i_grid, dtype=float)
    v_q_grid = np.asarray(v_q_grid, dtype=float)
    if v_i_grid.size == 0 or v_q_grid.size == 0:
        raise ParameterError("offset grids must be non-empty")
    cfg = replace(config, f_lo=snap_to_grid(config.f_lo, record_s))
    env = constant_envelope(0.0, record_s, cfg.awg_rate)
    comps = [
        replace(cfg.comp, dc_offset_i=float(vi), dc_offset_q=float(vq))
        for vi in v_i_grid
        for vq in v_q_grid
    ]
    values = _sweep_points(cfg, comps, cfg.f_lo, env)
    return CalSurface(v_i_grid, v_q_grid, np.reshape(values, (v_i_grid.size, v_q_grid.size)))


def sweep_image(config, alpha_grid, phi_grid, power_dbm=0.0, record_s=SWEEP_RECORD_S):
    """Image amplitude vs. quadrature pre-correction, CW drive on."""
    alpha_grid = np.asarray(alpha_grid, dtype=float)
    phi_grid = np.asarray(phi_grid, dtype=float)
    if alpha_grid.size == 0 or phi_grid.size == 0:
        raise ParameterError("correction grids must be non-empty")
    if np.any(alpha_grid <= 0):
        raise ParameterError("alpha grid must be positive")
    cfg = replace(
        config,
        f_lo=snap_to_grid(config.f_lo, record_s),
        f_if=snap_to_grid(config.f_if, record_s),
    )
    env = constant_envelope(_drive_amplitude(cfg, power_dbm), record_s, cfg.awg_rate)
    comps = [
        replace(cfg.comp, amp_scale=float(a), phase_offset=float(p))
        for a in alpha_grid
        for p in phi_grid
    ]
    values = _sweep_points(cfg, comps, cfg.f_lo - cfg.f_if, env)
    return CalSurface(alpha_grid, phi_grid, np.reshape(values, (alpha_grid.size, phi_grid.size)))


# ---------------------------------------------------------------------------
# fits
# ---------------------------------------------------------------------------

def _run_fit(residual_fn, x0, param_names):
    res = least_squares(residual_fn, x0, method="lm", max_nfev=2000)
    if not res.success:
        raise FitError(
            "surface fit did not converge",
            diagnostics={
                "status": int(res.status),
                "message": res.message,
                "cost": float(res.cost),
                "nfev": int(res.nfev),
                "x": [float(v) for v in res.x],
                "params": list(param_names),
            },
        )
    m, n = res.jac.shape
    rms = float(np.sqrt(np.mean(res.fun**2)))
    if m > n:
        var = 2.0 * res.cost / (m - n)
        cov = var * np.linalg.pinv(res.jac.T @ res.jac)
    else:
        cov = np.full((n, n), np.nan)
    return res.x, rms, cov


def fit_lo_leakage(surface):
    """Fit Y = s * |(V_I + a) + i (b - V_Q)| and return the offset optimum.

    (a, b) is the leakage phasor sum referred to the IF port; only that
    sum is observable, so it is reported as an equivalent I-path leakage.
    """
    vi, vq = np.meshgrid(surface.axis1, surface.axis2, indexing="ij")
    vi, vq, y = vi.ravel(), vq.ravel(), surface.values.ravel()

    def model(p):
        a, b, s = p
        return s * np.hypot(vi + a, b - vq)

    vi0, vq0 = surface.min_location()
    span = max(np.ptp(surface.axis1), np.ptp(surface.axis2), 1e-6)
    s0 = max(np.max(y), 1e-12) / span
    x0 = np.array([-vi0, vq0, s0])
    (a, b, s), rms, cov = _run_fit(lambda p: model(p) - y, x0, ("a", "b", "scale"))
    return CalResult(
        fitted_params={
            "l_i": float(np.hypot(a, b)),
            "theta_i": float(np.arctan2(b, a)),
            "l_q": 0.0,
            "theta_q": 0.0,
            "scale": float(s),
        },
        optimum=CompensationParams(dc_offset_i=float(-a), dc_offset_q=float(b)),
        residual_rms=rms,
        covariance=cov,
    )


def fit_image(surface):
    """Fit Y = s * |1 - (alpha~/alpha) e^{i(phi~-phi)}|."""
    al, ph = np.meshgrid(surface.axis1, surface.axis2, indexing="ij")
    al, ph, y = al.ravel(), ph.ravel(), surface.values.ravel()

    def model(p):
        a_t, p_t, s = p
        r = a_t / al
        d = p_t - ph
        return s * np.hypot(1.0 - r * np.cos(d), r * np.sin(d))

    a0, p0 = surface.min_location()
    x0 = np.array([a0, p0, max(np.max(y), 1e-12)])
    (a_t, p_t, s), rms, cov = _run_fit(
        lambda p: model(p) - y, x0, ("alpha", "phi", "scale")
    )
    p_t = float(np.arctan2(np.sin(p_t), np.cos(p_t)))  # wrap to (-pi, pi]
    return CalResult(
        fitted_params={"alpha": float(abs(a_t)), "phi": p_t, "scale": float(s)},
        optimum=CompensationParams(amp_scale=float(abs(a_t)), phase_offset=p_t),
        residual_rms=rms,
        covariance=cov,
    )


# ---------------------------------------------------------------------------
# calibration orchestration
# ---------------------------------------------------------------------------

def calibrate_lo(config, span_v=0.02, points=9, refine=True, record_s=SWEEP_RECORD_S):
    """Sweep-fit-(refine) the DC offsets; returns (updated config, CalResult)."""
    grid = np.linspace(-span_v, span_v, points)
    surface = sweep_lo_leakage(config, grid, grid, record_s)
    result = fit_lo_leakage(surface)
    if refine:
        step = 2 * span_v / (points - 1) if points > 1 else span_v
        gi = result.optimum.dc_offset_i + np.linspace(-step, step, points)
        gq = result.optimum.dc_offset_q + np.linspace(-step, step, points)
        surface = sweep_lo_leakage(config, gi, gq, record_s)
        result = fit_lo_leakage(surface)
    comp = replace(
        config.comp,
        dc_offset_i=result.optimum.dc_offset_i,
        dc_offset_q=result.optimum.dc_offset_q,
    )
    return replace(config, comp=comp), result


def calibrate_image(
    config,
    alpha_span=(0.9, 1.15),
    phi_span=(-0.2, 0.2),
    points=9,
    refine=True,
    record_s=SWEEP_RECORD_S,
):
    """Sweep-fit-(refine) the quadrature pre-correction."""
    alpha_grid = np.linspace(alpha_span[0], alpha_span[1], points)
    phi_grid = np.linspace(phi_span[0], phi_span[1], points)
    surface = sweep_image(config, alpha_grid, phi_grid, record_s=record_s)
    result = fit_image(surface)
    if refine:
        da = (alpha_span[1] - alpha_span[0]) / (points - 1) if points > 1 else 0.02
        dp = (phi_span[1] - phi_span[0]) / (points - 1) if points > 1 else 0.02
        ga = result.optimum.amp_scale + np.linspace(-da, da, points)
        gp = result.optimum.phase_offset + np.linspace(-dp, dp, points)
        surface = sweep_image(config, ga, gp, record_s=record_s)
        result = fit_image(surface)
    comp = replace(
        config.comp,
        amp_scale=result.optimum.amp_scale,
        phase_offset=result.optimum.phase_offset,
    )
    return replace(config, comp=comp), result


def calibrate_chain(config, record_s=SWEEP_RECORD_S):
    """LO offsets first, then the image correction on the offset chain.

    The DC offsets bias each path into its polynomial, shifting the
    effective gain balance, so the image stage must run second to absorb
    that shift into the fitted correction.
    """
    config, lo_result = calibrate_lo(config, record_s=record_s)
    config, image_result = calibrate_image(config, record_s=record_s)
    return config, {"lo": lo_result, "image": image_result}


# ---------------------------------------------------------------------------
# SFDR and spur scaling
# ---------------------------------------------------------------------------

def compute_sfdr(spectrum, fundamental_hz=None, floor_dbc=-100.0, guard_rbw=6.0):
    """Fundamental-to-strongest-spur ratio from a measured spectrum.

    The fundamental is the strongest peak (or the peak nearest
    `fundamental_hz` when given); everything above the relative floor
    outside its guard band competes as a spur. With no spur above the
    floor, the result is floor-limited and reports -floor_dbc.
    """
    freqs, powers = find_peaks(
        spectrum,
        floor_dbm=np.max(spectrum.power_dbm) - 1.0 + floor_dbc,
        guard_rbw=guard_rbw,
    )
    peaks = list(zip(freqs, powers))
    if not peaks:
        raise AnalysisError("no peaks above the detection floor")
    if fundamental_hz is None:
        fund = peaks[0]
    else:
        near = [p for p in peaks if abs(p[0] - fundamental_hz) <= guard_rbw * spectrum.rbw_hz]
        if not near:
            raise AnalysisError(
                f"no fundamental peak near {fundamental_hz / 1e9:.4f} GHz"
            )
        fund = max(near, key=lambda p: p[1])
    spurs = [
        p
        for p in peaks
        if abs(p[0] - fund[0]) > guard_rbw * spectrum.rbw_hz
        and p[1] >= fund[1] + floor_dbc
    ]
    if spurs:
        spur = max(spurs, key=lambda p: p[1])
        return SfdrResult(
            sfdr_db=float(fund[1] - spur[1]),
            fundamental_hz=float(fund[0]),
            fundamental_dbm=float(fund[1]),
            spur_hz=float(spur[0]),
            spur_dbm=float(spur[1]),
            floor_limited=False,
        )
    return SfdrResult(
        sfdr_db=float(-floor_dbc),
        fundamental_hz=float(fund[0]),
        fundamental_dbm=float(fund[1]),
        spur_hz=None,
        spur_dbm=None,
        floor_limited=True,
    )


def _chain_waveform(config, power_dbm, duration):
    if isinstance(config, IqChainConfig):
        res = iq_chain_waveform(config, power_dbm, duration)
    elif isinstance(config, DoubleChainConfig):
        res = double_chain_waveform(config, power_dbm, duration)
    else:
        raise ParameterError(f"unsupported chain config {type(config).__name__}")
    return res


def measure_sfdr(
    config,
    power_dbm=0.0,
    duration=10e-6,
    rbw_hz=2e6,
    window="flattop",
    floor_dbc=-100.0,
):
    """Run a chain at one power and score its spectrum.

    Returns (SfdrResult, Spectrum); the fundamental is looked up at the
    chain's own carrier, so a strong spur can never be mistaken for it.
    """
    res = _chain_waveform(config, power_dbm, duration)
    carrier = res.plan.f_target if res.plan is not None else res.carrier_hz
    spectrum = power_spectrum(res.output, window=window, rbw_hz=rbw_hz)
    return compute_sfdr(spectrum, fundamental_hz=carrier, floor_dbc=floor_dbc), spectrum


def spur_power_scaling(config, spur_freq_hz, power_sweep_dbm, duration=2e-6):
    """dB-per-dB slope of one spur line against the drive power."""
    powers = [float(p) for p in power_sweep_dbm]
    if len(powers) < 2:
        raise ParameterError("power sweep needs at least two points")
    levels = []
    for p in powers:
        res = _chain_waveform(config, p, duration)
        carrier = res.plan.f_target if res.plan is not None else res.carrier_hz
        f_spur = snap_to_grid(spur_freq_hz, duration)
        amp = tone_amplitude(res.output, f_spur)
        fund = tone_amplitude(res.output, carrier)
        if amp <= fund * 1e-10:
            raise AnalysisError(
                f"spur at {spur_freq_hz / 1e9:.4f} GHz is below the measurement floor"
            )
        levels.append(20.0 * np.log10(amp))
    slope = np.polyfit(powers, levels, 1)[0]
    return float(slope)


# ---------------------------------------------------------------------------
# temperature drift
# ---------------------------------------------------------------------------

def simulate_temperature_step(
    config,
    drift,
    profile,
    power_dbm=0.0,
    duration=2e-6,
    rbw_hz=4e6,
    floor_dbc=-100.0,
):
    """Replay a temperature profile against a frozen calibration.

    Mixer parameters relax exponentially toward their linear-in-T targets
    (exact discrete update per step); the compensation inside `config`
    stays at its calibration values. Returns {"time_s", "temp_c",
    "sfdr_db"} plus, for the IQ chain, "lo_suppression_db" and
    "image_suppression_db" (positive numbers, dB below the fundamental).
    """
    prof = [(float(t), float(temp)) for t, temp in profile]
    if not prof:
        raise ParameterError("temperature profile is empty")
    times = [t for t, _ in prof]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ParameterError("profile times must be strictly increasing")

    is_iq = isinstance(config, IqChainConfig)
    if not is_iq and not isinstance(config, DoubleChainConfig):
        raise ParameterError(f"unsupported chain config {type(config).__name__}")

    nominal = {}
    state = {}
    if is_iq:
        nominal = {k: getattr(config.mixer, k) for k in drift.temp_coeffs}
        state = {
            k: nominal[k] + drift.temp_coeffs[k] * (prof[0][1] - drift.base_temp_c)
            for k in nominal
        }

    out = {"time_s": [], "temp_c": [], "sfdr_db": []}
    if is_iq:
        out["lo_suppression_db"] = []
        out["image_suppression_db"] = []

    prev_t = prof[0][0]
    for t, temp in prof:
        decay = np.exp(-(t - prev_t) / drift.thermal_time_constant) if t > prev_t else 1.0
        for k in state:
            target = nominal[k] + drift.temp_coeffs[k] * (temp - drift.base_temp_c)
            state[k] = target + (state[k] - target) * decay
        prev_t = t

        cfg = replace(config, mixer=replace(config.mixer, **state)) if is_iq else config
        res = _chain_waveform(cfg, power_dbm, duration)
        carrier = res.plan.f_target if res.plan is not None else res.carrier_hz
        spectrum = power_spectrum(res.output, window="flattop", rbw_hz=rbw_hz)
        sfdr = compute_sfdr(spectrum, fundamental_hz=carrier, floor_dbc=floor_dbc)
        out["time_s"].append(t)
        out["temp_c"].append(temp)
        out["sfdr_db"].append(sfdr.sfdr_db)
        if is_iq:
            fund = tone_amplitude(res.output, carrier)
            lo_amp = tone_amplitude(res.output, cfg.f_lo)
            im_amp = tone_amplitude(res.output, cfg.f_lo - cfg.f_if)
            out["lo_suppression_db"].append(
                float(-20 * np.log10(max(lo_amp, 1e-300) / fund))
            )
            out["image_suppression_db"].append(
                float(-20 * np.log10(max(im_amp, 1e-300) / fund))
            )
    return {k: np.asarray(v) for k, v in out.items()}


# ---------------------------------------------------------------------------
# phase noise -> Ramsey infidelity
# ---------------------------------------------------------------------------

def ramsey_infidelity(profile, tau_s, num_points=4001):
    """First-order dephasing estimate for a Ramsey delay tau.

    1 - F_av = (2/3) * integral S_phi(f) sin^2(pi f tau) df, with S_phi
    from the profile's SSB levels. The integral runs over the union of
    the tabulated span and [1/(10 tau), 10/tau]; spans beyond the table
    are log-log extrapolated with the edge slopes and flagged with a
    warning. The kernel is a stated approximation: good in the
    weak-noise, free-evolution limit, linear in S_phi by construction.
    """
    if tau_s <= 0:
        raise ParameterError("tau must be positive")
    f_table_lo = profile.points[0][0]
    f_table_hi = profile.points[-1][0]
    f_lo = min(f_table_lo, 1.0 / (10.0 * tau_s))
    f_hi = max(f_table_hi, 10.0 / tau_s)
    if f_lo < f_table_lo or f_hi > f_table_hi:
        warnings.warn(
            "phase-noise profile does not cover the Ramsey band; "
            "extrapolating log-log with edge slopes",
            stacklevel=2,
        )
    freqs = np.logspace(np.log10(f_lo), np.log10(f_hi), num_points)
    s_phi = profile.phase_psd(freqs)
    kernel = np.sin(np.pi * freqs * tau_s) ** 2
    return float(2.0 / 3.0 * np.trapezoid(s_phi * kernel, freqs))


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def write_surface_csv(path, surface):
    vi, vq = np.meshgrid(surface.axis1, surface.axis2, indexing="ij")
    rows = np.column_stack([vi.ravel(), vq.ravel(), surface.values.ravel()])
    np.savetxt(path, rows, delimiter=",", header="axis1,axis2,value", comments="", fmt="%.17g")


def read_surface_csv(path):
    try:
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise ParameterError(f"malformed surface CSV: {exc}") from exc
    if rows.shape[1] != 3:
        raise ParameterError("surface CSV needs columns axis1,axis2,value")
    axis1 = np.unique(rows[:, 0])
    axis2 = np.unique(rows[:, 1])
    if axis1.size * axis2.size != rows.shape[0]:
        raise ParameterError("surface CSV does not form a rectangular grid")
    values = np.full((axis1.size, axis2.size), np.nan)
    i = np.searchsorted(axis1, rows[:, 0])
    j = np.searchsorted(axis2, rows[:, 1])
    values[i, j] = rows[:, 2]
    if np.any(np.isnan(values)):
        raise ParameterError("surface CSV is missing grid points")
    return CalSurface(axis1, axis2, values)


def write_phase_noise_csv(path, profile):
    rows = np.asarray(profile.points, dtype=float)
    np.savetxt(path, rows, delimiter=",", header="offset_hz,dbc_hz", comments="", fmt="%.17g")


def read_phase_noise_csv(path, carrier_hz=None):
    try:
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise ParameterError(f"malformed phase-noise CSV: {exc}") from exc
    if rows.shape[1] != 2:
        raise ParameterError("phase-noise CSV needs columns offset_hz,dbc_hz")
    return PhaseNoiseProfile(tuple(map(tuple, rows)), carrier_hz=carrier_hz)


def cal_result_to_dict(result):
    return {
        "fitted_params": {k: float(v) for k, v in result.fitted_params.items()},
        "optimum": {
            "dc_offset_i_volts": result.optimum.dc_offset_i,
            "dc_offset_q_volts": result.optimum.dc_offset_q,
            "amp_scale": result.optimum.amp_scale,
            "phase_offset_rad": result.optimum.phase_offset,
        },
        "residual_rms": float(result.residual_rms),
        "covariance": np.asarray(result.covariance).tolist(),
    }
