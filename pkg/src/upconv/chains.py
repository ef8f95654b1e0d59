"""End-to-end up-conversion chains.

Two architectures produce a microwave drive from a baseband envelope:

* single-stage IQ chain: AWG envelope -> digital IF modulation -> analog
  IQ modulator (with its imperfections) -> amplifier -> band-pass filter.
* double conversion chain: RF-DAC synthesizes a first IF directly ->
  reconstruction images -> low-pass -> mixer 1 (up to the filter band) ->
  band-pass -> mixer 2 (down to the target as the lower sideband) ->
  output low-pass. Neighboring-channel crosstalk is injected at a fixed
  relative level after the output filter.

The second stage of the double chain selects the lower sideband, which
mirrors the spectrum; the digital synthesis conjugates the envelope up
front so both chains map the same (i, q) pair to the same output
spectrum around their carrier.

Filters are ideal zero-phase Butterworth magnitude responses applied in
the frequency domain. That keeps calibration phases intact and makes
attenuation exactly reproducible; group delay is irrelevant for the
spur budgets studied here.

All synthesis frequencies are snapped to the 1/duration grid by the
waveform builders, so every steady tone sits exactly on an FFT bin and
filtered spectra are free of circular-convolution leakage.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AnalysisError, ParameterError, PlanningError
from .mixers import CompensationParams, IqMixerModel, RfMixerModel, iq_mix, rf_mix
from .signal import (
    EnvelopePair,
    SampledWaveform,
    ToneSpec,
    constant_envelope,
    dbm_to_amplitude,
    iq_modulate,
    resample_envelope,
    tone_amplitude,
)


def snap_to_grid(freq_hz, duration_s):
    """Nearest frequency commensurate with a record of the given length."""
    if duration_s <= 0:
        raise ParameterError("duration must be positive")
    return round(freq_hz * duration_s) / duration_s


# ---------------------------------------------------------------------------
# filters and DAC reconstruction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FilterSpec:
    """Butterworth magnitude prototype, order N, applied zero-phase.

    kind "lowpass" uses `high_cutoff_hz`; kind "bandpass" uses both edges
    (-3 dB at each). The band-pass response is the standard lowpass ->
    bandpass transform |H| = (1 + x^2N)^-1/2 with x = (f^2-f0^2)/(B f).
    """

    kind: str
    high_cutoff_hz: float
    low_cutoff_hz: float = 0.0
    order: int = 7

    def __post_init__(self):
        if self.kind not in ("lowpass", "bandpass"):
            raise ParameterError(f"unknown filter kind {self.kind!r}")
        if self.high_cutoff_hz <= 0:
            raise ParameterError("high_cutoff_hz must be positive")
        if self.kind == "bandpass" and not (0 < self.low_cutoff_hz < self.high_cutoff_hz):
            raise ParameterError("bandpass needs 0 < low_cutoff_hz < high_cutoff_hz")
        if self.order < 1:
            raise ParameterError("filter order must be >= 1")

    def magnitude(self, freq_hz):
        f = np.asarray(freq_hz, dtype=float)
        # x**(2N) legitimately overflows far out of band; 1/sqrt(inf) -> 0
        # is the intended response there, so the warnings are suppressed
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            if self.kind == "lowpass":
                x = f / self.high_cutoff_hz
            else:
                f0_sq = self.low_cutoff_hz * self.high_cutoff_hz
                bw = self.high_cutoff_hz - self.low_cutoff_hz
                x = np.where(f > 0, (f * f - f0_sq) / (bw * np.maximum(f, 1e-300)), np.inf)
            mag = 1.0 / np.sqrt(1.0 + np.abs(x) ** (2 * self.order))
        return np.where(np.isfinite(x), mag, 0.0)


def apply_filter(wave, spec):
    """Filter a waveform with the zero-phase magnitude response."""
    spec_fft = np.fft.rfft(wave.samples)
    freqs = np.fft.rfftfreq(wave.n, 1.0 / wave.sample_rate)
    out = np.fft.irfft(spec_fft * spec.magnitude(freqs), n=wave.n)
    return SampledWaveform(out, wave.sample_rate, wave.t0)


@dataclass(frozen=True)
class DacModel:
    """RF-DAC reconstruction: hold or zero-stuff, then an ideal anti-alias
    brickwall that keeps `num_alias_images` image zones above Nyquist."""

    sample_rate: float = 6e9
    oversample: int = 14
    method: str = "zoh"
    num_alias_images: int = 2

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ParameterError("DAC sample_rate must be positive")
        if int(self.oversample) != self.oversample or self.oversample < 1:
            raise ParameterError("oversample must be an integer >= 1")
        if self.method not in ("zoh", "zero_stuff"):
            raise ParameterError(f"unknown DAC method {self.method!r}")
        if self.num_alias_images < 0:
            raise ParameterError("num_alias_images must be >= 0")

    @property
    def sim_rate(self):
        return self.sample_rate * self.oversample


def rfdac_output(samples, dac, t0=0.0):
    """Reconstruct DAC-rate samples on the oversampled simulation grid.

    "zoh" repeats each sample (sinc-shaped image rolloff); "zero_stuff"
    emits flat-amplitude images. Content above the brickwall cutoff
    (num_alias_images + 0.5) * sample_rate is removed.
    """
    samples = np.asarray(samples, dtype=float)
    L = int(dac.oversample)
    if dac.method == "zoh":
        up = np.repeat(samples, L)
    else:
        up = np.zeros(samples.size * L)
        up[::L] = samples * L
    cutoff = (dac.num_alias_images + 0.5) * dac.sample_rate
    fft = np.fft.rfft(up)
    freqs = np.fft.rfftfreq(up.size, 1.0 / dac.sim_rate)
    fft[freqs > cutoff] = 0.0
    return SampledWaveform(np.fft.irfft(fft, n=up.size), dac.sim_rate, t0)


# ---------------------------------------------------------------------------
# frequency planning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FrequencyPlan:
    f_target: float
    f_if1: float
    f_lo1: float
    f_lo2: float
    image: float  # second-stage upper sideband before the output filter


def plan_frequencies(
    f_target,
    f_lo1=10e9,
    lo2_range=(13e9, 20e9),
    if1_range=(1.5e9, 2.5e9),
    bpf_center=12e9,
):
    """Pick (f_if1, f_lo2) so the lower sideband of stage two lands on the
    target: f_target = f_lo2 - (f_lo1 + f_if1).

    Among feasible settings the first IF is kept as close as possible to
    the band-pass center minus f_lo1: |f_if1 - 2 GHz| grows linearly as
    f_lo2 moves away from f_target + bpf_center, so clipping that ideal
    point into the synthesizer range is optimal.
    """
    if not (lo2_range[0] < lo2_range[1]) or not (if1_range[0] < if1_range[1]):
        raise ParameterError("frequency ranges must be increasing")
    f_lo2 = min(max(f_target + bpf_center, lo2_range[0]), lo2_range[1])
    f_if1 = f_lo2 - f_lo1 - f_target
    if not (if1_range[0] <= f_if1 <= if1_range[1]):
        raise PlanningError(
            f"target {f_target / 1e9:.3f} GHz needs f_if1 = {f_if1 / 1e9:.3f} GHz, "
            f"outside [{if1_range[0] / 1e9:.2f}, {if1_range[1] / 1e9:.2f}] GHz"
        )
    return FrequencyPlan(
        f_target=f_target,
        f_if1=f_if1,
        f_lo1=f_lo1,
        f_lo2=f_lo2,
        image=f_lo2 + f_lo1 + f_if1,
    )


# ---------------------------------------------------------------------------
# chain configurations
# ---------------------------------------------------------------------------

# Default IQ-path polynomial. The quadratic and cubic terms put the
# strongest intermodulation lines at -52 dBc (f_lo +- 2 f_if) and
# -65 dBc (f_lo - 3 f_if) for a 0 dBm output tone.
DEFAULT_IF_POLY = (1.0, 0.1263411988218848, 0.7113117640155692)


def _default_iq_mixer():
    path = RfMixerModel(conversion_gain_db=-6.0, if_poly=DEFAULT_IF_POLY)
    return IqMixerModel(
        lo_leak_i=3e-3,
        lo_leak_i_phase=0.35,
        lo_leak_q=2e-3,
        lo_leak_q_phase=-0.65,
        gain_imbalance=1.04,
        phase_imbalance=0.035,
        path_i=path,
        path_q=path,
    )


@dataclass
class IqChainConfig:
    f_lo: float = 5.9e9
    f_if: float = 100e6
    awg_rate: float = 2e9
    sim_rate: float = 40e9
    amp_gain_db: float = 21.0
    lo_phase: float = 0.0
    mixer: IqMixerModel = field(default_factory=_default_iq_mixer)
    comp: CompensationParams = field(default_factory=CompensationParams)
    output_filter: FilterSpec = field(
        default_factory=lambda: FilterSpec("bandpass", 8e9, 4e9, order=7)
    )

    def __post_init__(self):
        if self.awg_rate <= 0 or self.sim_rate <= 0:
            raise ParameterError("sample rates must be positive")
        ratio = self.sim_rate / self.awg_rate
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ParameterError("sim_rate must be an integer multiple of awg_rate")
        if self.f_if == 0:
            raise ParameterError("f_if must be nonzero (sign picks the sideband)")

    @property
    def carrier_hz(self):
        return self.f_lo + self.f_if

    @property
    def ideal_gain_db(self):
        """Small-signal envelope -> output amplitude gain of the ideal chain."""
        return self.amp_gain_db + self.mixer.path_i.conversion_gain_db


def default_iq_chain():
    return IqChainConfig()


@dataclass
class DoubleChainConfig:
    f_target: float = 6.0e9
    dac: DacModel = field(default_factory=DacModel)
    f_lo1: float = 10e9
    lo2_range: tuple = (13e9, 20e9)
    if1_range: tuple = (1.5e9, 2.5e9)
    bpf_center: float = 12e9
    mixer1: RfMixerModel = field(
        default_factory=lambda: RfMixerModel(conversion_gain_db=-7.0)
    )
    mixer2: RfMixerModel = field(
        default_factory=lambda: RfMixerModel(
            conversion_gain_db=-7.0, lo_harmonics=((2, -35.0),)
        )
    )
    if_filter: FilterSpec = field(
        default_factory=lambda: FilterSpec("lowpass", 2.5e9, order=7)
    )
    band_filter: FilterSpec = field(
        default_factory=lambda: FilterSpec("bandpass", 12.5e9, 11.5e9, order=7)
    )
    output_filter: FilterSpec = field(
        default_factory=lambda: FilterSpec("lowpass", 8.7e9, order=7)
    )
    crosstalk_dbc: float | None = -72.0
    crosstalk_offset_hz: float = 100e6

    def plan(self):
        return plan_frequencies(
            self.f_target, self.f_lo1, self.lo2_range, self.if1_range, self.bpf_center
        )


def default_double_chain():
    return DoubleChainConfig()


@dataclass
class ChainResult:
    output: SampledWaveform
    carrier_hz: float
    config: object = None
    plan: FrequencyPlan | None = None
    stages: dict | None = None


# ---------------------------------------------------------------------------
# runners
# ---------------------------------------------------------------------------

def run_iq_chain(config, env, keep_stages=False):
    """Drive the IQ chain with an envelope sampled at the AWG rate."""
    up = round(config.sim_rate / env.sample_rate)
    env_sim = resample_envelope(env, up) if up > 1 else env
    v_i, v_q = iq_modulate(env_sim, config.f_if)
    lo = ToneSpec(config.f_lo, phase_rad=config.lo_phase)
    rf = iq_mix(config.mixer, config.comp, v_i, v_q, lo)
    amp = 10.0 ** (config.amp_gain_db / 20.0)
    amplified = SampledWaveform(amp * rf.samples, rf.sample_rate, rf.t0)
    out = apply_filter(amplified, config.output_filter)
    stages = None
    if keep_stages:
        stages = {"modulated_i": v_i, "modulated_q": v_q, "mixer": rf, "output": out}
    return ChainResult(out, config.carrier_hz, config=config, stages=stages)


def iq_chain_waveform(config, power_dbm=0.0, duration=10e-6, keep_stages=False):
    """Steady single-sideband tone at the chain output.

    The LO and IF are snapped to the record grid and the envelope
    amplitude is set from the ideal chain gain, so the realized output
    power sits within the chain's own compression (well under 0.1 dB at
    the default drive) of the request.
    """
    cfg = replace(
        config,
        f_lo=snap_to_grid(config.f_lo, duration),
        f_if=snap_to_grid(config.f_if, duration),
    )
    amplitude = dbm_to_amplitude(power_dbm) / 10.0 ** (cfg.ideal_gain_db / 20.0)
    env = constant_envelope(amplitude, duration, cfg.awg_rate)
    return run_iq_chain(cfg, env, keep_stages=keep_stages)


def run_double_chain(config, env, keep_stages=False):
    """Drive the double-conversion chain with an envelope at the DAC rate.

    The synthesis frequencies are snapped to the grid set by the envelope
    length; the returned result carries the snapped plan.
    """
    duration = env.n / env.sample_rate
    f_lo1 = snap_to_grid(config.f_lo1, duration)
    f_lo2_raw = min(
        max(config.f_target + config.bpf_center, config.lo2_range[0]),
        config.lo2_range[1],
    )
    f_lo2 = snap_to_grid(f_lo2_raw, duration)
    f_target = snap_to_grid(config.f_target, duration)
    f_if1 = f_lo2 - f_lo1 - f_target
    if not (config.if1_range[0] <= f_if1 <= config.if1_range[1]):
        raise PlanningError(
            f"target {f_target / 1e9:.3f} GHz needs f_if1 = {f_if1 / 1e9:.3f} GHz, "
            "outside the first-IF range"
        )
    plan = FrequencyPlan(f_target, f_if1, f_lo1, f_lo2, f_lo2 + f_lo1 + f_if1)

    # conjugate envelope: the lower-sideband pick at stage two mirrors the
    # spectrum, so synthesize at -f_if1 to land the envelope upright
    v_dac, _ = iq_modulate(env, -f_if1)
    dac_wave = rfdac_output(v_dac.samples, config.dac, t0=v_dac.t0)
    if_wave = apply_filter(dac_wave, config.if_filter)
    m1 = rf_mix(config.mixer1, if_wave, ToneSpec(f_lo1))
    band = apply_filter(m1, config.band_filter)
    m2 = rf_mix(config.mixer2, band, ToneSpec(f_lo2))
    out = apply_filter(m2, config.output_filter)

    if config.crosstalk_dbc is not None:
        level = tone_amplitude(out, f_target) * 10.0 ** (config.crosstalk_dbc / 20.0)
        t = out.times
        talk = np.zeros_like(out.samples)
        for sign in (-1.0, 1.0):
            f_x = f_target + sign * config.crosstalk_offset_hz
            if 0 < f_x < out.sample_rate / 2:
                talk += level * np.cos(2 * np.pi * f_x * t)
        out = SampledWaveform(out.samples + talk, out.sample_rate, out.t0)

    stages = None
    if keep_stages:
        stages = {
            "dac": dac_wave,
            "if_filtered": if_wave,
            "mixer1": m1,
            "bandpass": band,
            "mixer2": m2,
            "output": out,
        }
    return ChainResult(out, f_target, config=config, plan=plan, stages=stages)


def double_chain_waveform(config, power_dbm=0.0, duration=5e-6, keep_stages=False):
    """Steady tone at the double-chain output, normalized to the requested
    power with a probe pass (exact for the default, linear-path chain)."""
    probe_cfg = replace(config, crosstalk_dbc=None)
    env = constant_envelope(1e-3, duration, config.dac.sample_rate)
    probe = run_double_chain(probe_cfg, env)
    measured = tone_amplitude(probe.output, probe.plan.f_target)
    if measured <= 0:
        raise AnalysisError("probe tone vanished; check the frequency plan")
    scale = dbm_to_amplitude(power_dbm) / measured * 1e-3
    env = constant_envelope(scale, duration, config.dac.sample_rate)
    return run_double_chain(config, env, keep_stages=keep_stages)


# ---------------------------------------------------------------------------
# peak annotation
# ---------------------------------------------------------------------------

def annotate_peaks(
    peaks,
    basis,
    sample_rate=None,
    tol_hz=1.0,
    max_order=5,
    max_coeff=3,
    extra_labels=None,
):
    """Attribute spectral peaks to integer combinations of basis tones.

    Args:
        peaks: (freq_hz, power_dbm) pairs, e.g. from find_peaks.
        basis: ordered {name: freq_hz} of LOs / IFs / clocks.
        sample_rate: when given, combinations above Nyquist are folded
            once and tagged "(alias)".
        tol_hz: match tolerance; pass the spectrum RBW for measured data.
        max_order: bound on the sum of |coefficients|.
        max_coeff: bound on each individual coefficient.
        extra_labels: {label: freq_hz} checked before the combinations
            (crosstalk tones, known clock spurs).

    Returns:
        list of {"freq_hz", "power_dbm", "label"}; unmatched peaks get
        "unidentified".
    """
    names = list(basis)
    freqs = np.array([basis[k] for k in names], dtype=float)
    candidates = []
    ranges = [range(-max_coeff, max_coeff + 1)] * len(names)
    for coeffs in itertools.product(*ranges):
        order = sum(abs(c) for c in coeffs)
        if order == 0 or order > max_order:
            continue
        value = float(np.dot(coeffs, freqs))
        if value < 0:
            continue  # the sign-flipped twin covers it
        alias = False
        if sample_rate is not None and value > sample_rate / 2:
            folded = value % sample_rate
            value = min(folded, sample_rate - folded)
            alias = True
        candidates.append((value, order, coeffs, alias))

    out = []
    for freq, power in peaks:
        label = None
        for name, f_x in (extra_labels or {}).items():
            if abs(freq - f_x) <= tol_hz:
                label = name
                break
        if label is None:
            best = None
            for value, order, coeffs, alias in candidates:
                err = abs(value - freq)
                if err <= tol_hz and (best is None or (order, err) < best[:2]):
                    best = (order, err, coeffs, alias)
            if best is not None:
                terms = []
                for name, c in zip(names, best[2]):
                    if c == 0:
                        continue
                    mag = abs(c)
                    piece = name if mag == 1 else f"{mag}{name}"
                    terms.append(("-" if c < 0 else "+") + piece)
                label = "".join(terms).lstrip("+")
                if best[3]:
                    label += " (alias)"
        out.append(
            {"freq_hz": float(freq), "power_dbm": float(power), "label": label or "unidentified"}
        )
    return out


def iq_peak_basis(config):
    return {"f_lo": config.f_lo, "f_if": config.f_if}


def double_peak_basis(plan, dac=None):
    basis = {"f_lo1": plan.f_lo1, "f_lo2": plan.f_lo2, "f_if1": plan.f_if1}
    if dac is not None:
        basis["f_clk"] = dac.sample_rate
    return basis
