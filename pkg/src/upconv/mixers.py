"""Behavioral mixer models: single RF mixers and imperfect IQ modulators.

The single-mixer model is a memoryless polynomial on the IF port times a
local oscillator with additive harmonics. The nonlinear products are
DC-blocked before the LO multiply, so a DC bias on the IF port converts
strictly linearly while a drive tone still produces the full grid of
products at ``n*f_lo +- m*f_if`` whose power scales as the m-th power of
the drive.

The IQ model combines two such paths in quadrature and adds the three
standard imperfections of an analog single-sideband modulator: carrier
leakage on each path (amplitude and phase), a gain imbalance, and a phase
imbalance between the paths. Software-side pre-corrections travel in
:class:`CompensationParams` and are applied by :func:`iq_mix` before the
imperfections, exactly as an AWG would pre-distort its outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatchError, ParameterError
from .signal import SampledWaveform, ToneSpec, carrier_phase_shift


@dataclass
class RfMixerModel:
    """Polynomial mixer with LO harmonics.

    Args:
        conversion_gain_db: gain applied to the whole converted signal.
        if_poly: polynomial coefficients (c1, c2, ..., cM) applied to the
            IF port, c1 != 0. Orders >= 2 are DC-blocked (see module doc).
        lo_harmonics: (order, level_dbc) pairs; each adds
            ``10**(level/20) * cos(n * lo_phase(t))`` to the LO waveform.
    """

    conversion_gain_db: float = 0.0
    if_poly: tuple = (1.0,)
    lo_harmonics: tuple = ()

    def __post_init__(self):
        self.if_poly = tuple(float(c) for c in self.if_poly)
        if not self.if_poly or self.if_poly[0] == 0.0:
            raise ParameterError("if_poly needs a nonzero linear coefficient c1")
        harms = []
        for entry in self.lo_harmonics:
            n, level = entry
            if int(n) != n or n < 1:
                raise ParameterError("LO harmonic order must be an integer >= 1")
            if level > 0:
                raise ParameterError("LO harmonic levels are dBc and must be <= 0")
            harms.append((int(n), float(level)))
        self.lo_harmonics = tuple(harms)

    @property
    def dc_gain(self):
        """Linear gain seen by a DC bias on the IF port."""
        return 10.0 ** (self.conversion_gain_db / 20.0) * self.if_poly[0]


@dataclass
class IqMixerModel:
    """IQ modulator built from two polynomial paths plus imperfections.

    Leakage amplitudes are in volts at the output; `gain_imbalance` and
    `phase_imbalance_rad` act on the quadrature drive signal (not on DC
    biases, which couple through the plain path polynomial).
    """

    lo_leak_i: float = 0.0
    lo_leak_i_phase: float = 0.0
    lo_leak_q: float = 0.0
    lo_leak_q_phase: float = 0.0
    gain_imbalance: float = 1.0
    phase_imbalance: float = 0.0
    path_i: RfMixerModel = field(default_factory=RfMixerModel)
    path_q: RfMixerModel = field(default_factory=RfMixerModel)

    def __post_init__(self):
        if self.lo_leak_i < 0 or self.lo_leak_q < 0:
            raise ParameterError("leakage amplitudes must be >= 0")
        if not (self.gain_imbalance > 0):
            raise ParameterError("gain_imbalance must be positive")


@dataclass
class CompensationParams:
    """Software pre-correction: DC offsets plus quadrature rescale/rephase."""

    dc_offset_i: float = 0.0
    dc_offset_q: float = 0.0
    amp_scale: float = 1.0
    phase_offset: float = 0.0

    def __post_init__(self):
        if not (self.amp_scale > 0):
            raise ParameterError("amp_scale must be positive")


IDENTITY_COMP = CompensationParams()


# ---------------------------------------------------------------------------
# core operations
# ---------------------------------------------------------------------------

def _lo_waveform(model, lo, times, nyquist):
    if lo.frequency_hz <= 0 or lo.frequency_hz >= nyquist:
        raise ParameterError("LO frequency must lie inside (0, Nyquist)")
    base = 2.0 * np.pi * lo.frequency_hz * times + lo.phase_rad
    wave = np.cos(base)
    for order, level in model.lo_harmonics:
        if order * lo.frequency_hz >= nyquist:
            raise ParameterError(
                f"LO harmonic {order} at {order * lo.frequency_hz:g} Hz "
                "exceeds the grid Nyquist rate"
            )
        wave += 10.0 ** (level / 20.0) * np.cos(order * base)
    return wave


def _shape_if(model, v):
    out = model.if_poly[0] * v
    if len(model.if_poly) > 1:
        nl = np.zeros_like(v)
        vk = v
        for ck in model.if_poly[1:]:
            vk = vk * v
            if ck != 0.0:
                nl += ck * vk
        out = out + nl - np.mean(nl)
    return out


def rf_mix(model, if_wave, lo):
    """Convert an IF waveform with a single mixer.

    Args:
        model: RfMixerModel.
        if_wave: SampledWaveform at the IF port.
        lo: ToneSpec for the local oscillator; its power field is ignored
            (drive level is absorbed in the conversion gain).

    Returns:
        SampledWaveform on the same grid.
    """
    nyq = if_wave.sample_rate / 2.0
    t = if_wave.times
    shaped = _shape_if(model, if_wave.samples)
    lo_wave = _lo_waveform(model, lo, t, nyq)
    gain = 10.0 ** (model.conversion_gain_db / 20.0)
    return SampledWaveform(gain * shaped * lo_wave, if_wave.sample_rate, if_wave.t0)


def iq_mix(model, comp, v_i, v_q, lo):
    """Up-convert an IF pair through an imperfect IQ modulator.

    The compensation is applied to the digital signals first (quadrature
    divided by `amp_scale` and rephased by `-phase_offset`, DC offsets
    added), then the hardware imperfections act: the quadrature drive is
    scaled by the gain imbalance and rephased by the phase imbalance, each
    path runs through its polynomial mixer (I against cos, Q against sin
    of the LO), and the carrier leakage terms add at the output.

    With an ideal model and identity compensation this reduces exactly to
    :func:`upconv.signal.ideal_iq_upconvert`.
    """
    if not v_i.same_grid(v_q):
        raise GridMismatchError("v_i and v_q must share a time grid")
    # compensation and imbalance compose into one carrier rotation
    net_phase = model.phase_imbalance - comp.phase_offset
    q_drive = v_q.samples
    if net_phase != 0.0:
        q_drive = carrier_phase_shift(q_drive, net_phase)
    q_drive = (model.gain_imbalance / comp.amp_scale) * q_drive

    i_in = SampledWaveform(v_i.samples + comp.dc_offset_i, v_i.sample_rate, v_i.t0)
    q_in = SampledWaveform(q_drive + comp.dc_offset_q, v_q.sample_rate, v_q.t0)

    lo_q = ToneSpec(lo.frequency_hz, lo.power_dbm, lo.phase_rad - np.pi / 2.0)
    out = rf_mix(model.path_i, i_in, lo).samples + rf_mix(model.path_q, q_in, lo_q).samples

    t = v_i.times
    base = 2.0 * np.pi * lo.frequency_hz * t + lo.phase_rad
    if model.lo_leak_i != 0.0:
        out = out + model.lo_leak_i * np.cos(base + model.lo_leak_i_phase)
    if model.lo_leak_q != 0.0:
        out = out + model.lo_leak_q * np.sin(base + model.lo_leak_q_phase)
    return SampledWaveform(out, v_i.sample_rate, v_i.t0)


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------

def carrier_leakage_amplitude(model, v_i_dc, v_q_dc):
    """Carrier amplitude at the output for given DC offsets.

    Phasor convention: a tone ``a cos(wt) + b sin(wt)`` is the phasor
    ``a - i b``, so the carrier reads

        | k_i V_I + L_I e^(i th_I) - i k_q V_Q - i L_Q e^(i th_Q) |

    with k the DC gain of each path. For unit-gain paths this is the
    textbook leakage expression; it is exact for this model because DC
    converts strictly linearly.
    """
    k_i = model.path_i.dc_gain
    k_q = model.path_q.dc_gain
    phasor = (
        k_i * v_i_dc
        + model.lo_leak_i * np.exp(1j * model.lo_leak_i_phase)
        - 1j * k_q * v_q_dc
        - 1j * model.lo_leak_q * np.exp(1j * model.lo_leak_q_phase)
    )
    return float(np.abs(phasor))


def lo_null_offsets(model):
    """DC offsets that null the carrier exactly.

    Returns:
        (v_i_dc, v_q_dc) solving the real and imaginary parts of the
        leakage phasor; for unit path gains this is
        ``V_I = -(L_I cos th_I + L_Q sin th_Q)``,
        ``V_Q = L_I sin th_I - L_Q cos th_Q``.
    """
    li, ti = model.lo_leak_i, model.lo_leak_i_phase
    lq, tq = model.lo_leak_q, model.lo_leak_q_phase
    v_i = -(li * np.cos(ti) + lq * np.sin(tq)) / model.path_i.dc_gain
    v_q = (li * np.sin(ti) - lq * np.cos(tq)) / model.path_q.dc_gain
    return float(v_i), float(v_q)


def image_amplitude(model, alpha=1.0, phi=0.0):
    """Residual image relative to the drive amplitude.

    For a single-sideband drive pre-corrected with quadrature scale
    `alpha` and phase `phi`, the opposite sideband has relative amplitude

        0.5 * | 1 - (gain_imbalance / alpha) * e^(i (phase_imbalance - phi)) |

    which is zero exactly when the compensation matches the hardware.
    """
    if not (alpha > 0):
        raise ParameterError("alpha must be positive")
    ratio = model.gain_imbalance / alpha
    delta = model.phase_imbalance - phi
    return float(0.5 * np.abs(1.0 - ratio * np.exp(1j * delta)))


# ---------------------------------------------------------------------------
# serialization (flat JSON, SI units in the field names)
# ---------------------------------------------------------------------------

def iq_mixer_to_dict(model):
    return {
        "lo_leak_i_volts": model.lo_leak_i,
        "lo_leak_i_phase_rad": model.lo_leak_i_phase,
        "lo_leak_q_volts": model.lo_leak_q,
        "lo_leak_q_phase_rad": model.lo_leak_q_phase,
        "gain_imbalance": model.gain_imbalance,
        "phase_imbalance_rad": model.phase_imbalance,
        "conversion_gain_i_db": model.path_i.conversion_gain_db,
        "if_poly_i": list(model.path_i.if_poly),
        "lo_harmonics_i": [list(h) for h in model.path_i.lo_harmonics],
        "conversion_gain_q_db": model.path_q.conversion_gain_db,
        "if_poly_q": list(model.path_q.if_poly),
        "lo_harmonics_q": [list(h) for h in model.path_q.lo_harmonics],
    }


def iq_mixer_from_dict(doc):
    try:
        return IqMixerModel(
            lo_leak_i=float(doc["lo_leak_i_volts"]),
            lo_leak_i_phase=float(doc["lo_leak_i_phase_rad"]),
            lo_leak_q=float(doc["lo_leak_q_volts"]),
            lo_leak_q_phase=float(doc["lo_leak_q_phase_rad"]),
            gain_imbalance=float(doc["gain_imbalance"]),
            phase_imbalance=float(doc["phase_imbalance_rad"]),
            path_i=RfMixerModel(
                conversion_gain_db=float(doc["conversion_gain_i_db"]),
                if_poly=tuple(doc["if_poly_i"]),
                lo_harmonics=tuple(tuple(h) for h in doc["lo_harmonics_i"]),
            ),
            path_q=RfMixerModel(
                conversion_gain_db=float(doc["conversion_gain_q_db"]),
                if_poly=tuple(doc["if_poly_q"]),
                lo_harmonics=tuple(tuple(h) for h in doc["lo_harmonics_q"]),
            ),
        )
    except KeyError as exc:
        raise ParameterError(f"IQ mixer document missing field {exc}") from exc


def compensation_to_dict(comp):
    return {
        "dc_offset_i_volts": comp.dc_offset_i,
        "dc_offset_q_volts": comp.dc_offset_q,
        "amp_scale": comp.amp_scale,
        "phase_offset_rad": comp.phase_offset,
    }


def compensation_from_dict(doc):
    try:
        return CompensationParams(
            dc_offset_i=float(doc["dc_offset_i_volts"]),
            dc_offset_q=float(doc["dc_offset_q_volts"]),
            amp_scale=float(doc["amp_scale"]),
            phase_offset=float(doc["phase_offset_rad"]),
        )
    except KeyError as exc:
        raise ParameterError(f"compensation document missing field {exc}") from exc


def write_iq_mixer_json(path, model):
    with open(path, "w") as fh:
        json.dump(iq_mixer_to_dict(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_iq_mixer_json(path):
    with open(path) as fh:
        return iq_mixer_from_dict(json.load(fh))
