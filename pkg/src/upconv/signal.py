"""Sampled waveforms, pulse envelopes, IF modulation, and spectrum estimation.

Everything downstream (mixer models, conversion chains, calibration sweeps)
is built on the containers and primitives defined here. Conventions used
throughout the package:

* time grids are uniform, ``t = t0 + k / sample_rate``;
* an envelope pair (i_env, q_env) modulated at ``f_if`` produces the two
  mixer inputs

      v_i(t) =  i_env(t) cos(w t + phi) + q_env(t) sin(w t + phi)
      v_q(t) = -i_env(t) sin(w t + phi) + q_env(t) cos(w t + phi)

  which an ideal IQ stage maps to a single sideband at ``f_lo + f_if``;
* spectra are single-sided, in dBm into a reference impedance (50 ohm
  unless stated), with the realized resolution bandwidth recorded.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import get_window, resample_poly, welch

from .errors import GridMismatchError, ParameterError

# Map public window names onto scipy names and their asymptotic equivalent
# noise bandwidth in bins. The realized ENBW of the actual window vector is
# what gets recorded in Spectrum.rbw_hz.
_WINDOWS = {
    "rect": ("boxcar", 1.0),
    "hann": ("hann", 1.5),
    "flattop": ("flattop", 3.7702),
}

SPECTRUM_FLOOR_DBM = -300.0


# ---------------------------------------------------------------------------
# unit helpers
# ---------------------------------------------------------------------------

def dbm_to_watts(p_dbm):
    return 1e-3 * 10.0 ** (np.asarray(p_dbm, dtype=float) / 10.0)


def watts_to_dbm(p_w):
    return 10.0 * np.log10(np.asarray(p_w, dtype=float) / 1e-3)


def dbm_to_amplitude(p_dbm, impedance=50.0):
    """Peak voltage of a sine dissipating `p_dbm` into `impedance`."""
    return np.sqrt(2.0 * impedance * dbm_to_watts(p_dbm))


def amplitude_to_dbm(v_peak, impedance=50.0):
    """Power in dBm of a sine with peak voltage `v_peak` into `impedance`."""
    v_peak = np.asarray(v_peak, dtype=float)
    return watts_to_dbm(v_peak**2 / (2.0 * impedance))


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

@dataclass
class SampledWaveform:
    """A real waveform on a uniform time grid.

    Parameters
    ----------
    samples : ndarray
        Real-valued samples, finite.
    sample_rate : float
        Samples per second, > 0.
    t0 : float
        Time of the first sample, seconds.
    """

    samples: np.ndarray
    sample_rate: float
    t0: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ParameterError("samples must be a non-empty 1-D array")
        if not np.all(np.isfinite(self.samples)):
            raise ParameterError("samples must be finite")
        if not (self.sample_rate > 0):
            raise ParameterError("sample_rate must be positive")

    @property
    def n(self):
        return self.samples.size

    @property
    def duration(self):
        return self.n / self.sample_rate

    @property
    def times(self):
        return self.t0 + np.arange(self.n) / self.sample_rate

    def same_grid(self, other):
        return (
            self.n == other.n
            and self.sample_rate == other.sample_rate
            and self.t0 == other.t0
        )


@dataclass
class EnvelopePair:
    """Baseband in-phase / quadrature envelopes on a shared grid.

    The pair is defined on ``t in [0, duration)`` and is implicitly zero
    outside it.
    """

    i_env: np.ndarray
    q_env: np.ndarray
    sample_rate: float

    def __post_init__(self):
        self.i_env = np.asarray(self.i_env, dtype=float)
        self.q_env = np.asarray(self.q_env, dtype=float)
        if self.i_env.shape != self.q_env.shape or self.i_env.ndim != 1:
            raise GridMismatchError("i_env and q_env must be 1-D and equally long")
        if self.i_env.size == 0:
            raise ParameterError("envelope must contain at least one sample")
        if not (self.sample_rate > 0):
            raise ParameterError("sample_rate must be positive")
        if not (np.all(np.isfinite(self.i_env)) and np.all(np.isfinite(self.q_env))):
            raise ParameterError("envelope samples must be finite")

    @property
    def n(self):
        return self.i_env.size

    @property
    def duration(self):
        return self.n / self.sample_rate

    @property
    def times(self):
        return np.arange(self.n) / self.sample_rate

    def is_constant(self):
        return np.ptp(self.i_env) == 0.0 and np.ptp(self.q_env) == 0.0


@dataclass
class ToneSpec:
    """A single tone: frequency, nominal power, and phase."""

    frequency_hz: float
    power_dbm: float = 0.0
    phase_rad: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.frequency_hz):
            raise ParameterError("frequency must be finite")


@dataclass
class Spectrum:
    """Single-sided power spectrum in dBm.

    ``rbw_hz`` is the realized equivalent-noise resolution bandwidth of
    the estimator that produced the bins, not the bin spacing.
    """

    freq_hz: np.ndarray
    power_dbm: np.ndarray
    rbw_hz: float
    ref_impedance: float = 50.0

    def __post_init__(self):
        self.freq_hz = np.asarray(self.freq_hz, dtype=float)
        self.power_dbm = np.asarray(self.power_dbm, dtype=float)
        if self.freq_hz.shape != self.power_dbm.shape or self.freq_hz.ndim != 1:
            raise GridMismatchError("freq_hz and power_dbm must be 1-D and equally long")
        if self.freq_hz.size < 2:
            raise ParameterError("a spectrum needs at least two bins")
        if np.any(np.diff(self.freq_hz) <= 0):
            raise ParameterError("freq_hz must be strictly increasing")
        if not (self.rbw_hz > 0):
            raise ParameterError("rbw_hz must be positive")

    @property
    def bin_hz(self):
        return float(self.freq_hz[1] - self.freq_hz[0])

    def power_at(self, freq_hz, width_hz=None):
        """Max power within +-width_hz of `freq_hz` (default: one RBW)."""
        if width_hz is None:
            width_hz = self.rbw_hz
        sel = np.abs(self.freq_hz - freq_hz) <= width_hz
        if not np.any(sel):
            raise ParameterError(f"no bins within {width_hz} Hz of {freq_hz} Hz")
        return float(np.max(self.power_dbm[sel]))


# ---------------------------------------------------------------------------
# envelopes
# ---------------------------------------------------------------------------

def drag_envelope(sigma, truncation, amplitude, drag_coeff, sample_rate):
    """Gaussian envelope with a derivative quadrature.

    The in-phase envelope is a Gaussian of width `sigma`, truncated at
    ``+-truncation*sigma`` and shifted so it reaches exactly zero at the
    truncation edges, with its peak renormalized to `amplitude`. The
    quadrature is ``drag_coeff`` times the analytic time derivative of the
    in-phase envelope.

    Parameters
    ----------
    sigma : float
        Gaussian width in seconds.
    truncation : float
        Half-length of the pulse in units of sigma; total duration is
        ``2 * truncation * sigma``.
    amplitude : float
        Peak value of the in-phase envelope.
    drag_coeff : float
        Quadrature scale in seconds (0 disables the quadrature).
    sample_rate : float
        Grid rate; must satisfy ``sample_rate * sigma >= 4`` so the pulse
        is resolved.

    Returns
    -------
    EnvelopePair
    """
    if sigma <= 0 or truncation <= 0:
        raise ParameterError("sigma and truncation must be positive")
    if sample_rate * sigma < 4:
        raise ParameterError("sample_rate * sigma must be >= 4")
    duration = 2.0 * truncation * sigma
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    tc = duration / 2.0
    edge = np.exp(-0.5 * truncation**2)
    core = np.exp(-0.5 * ((t - tc) / sigma) ** 2)
    i_env = amplitude * (core - edge) / (1.0 - edge)
    # analytic derivative of i_env; the constant edge term drops out
    di_dt = amplitude * core * (-(t - tc) / sigma**2) / (1.0 - edge)
    q_env = drag_coeff * di_dt
    return EnvelopePair(i_env, q_env, sample_rate)


def constant_envelope(amplitude, duration, sample_rate, q_amplitude=0.0):
    """Rectangular envelope pair for continuous-wave runs."""
    n = int(round(duration * sample_rate))
    if n < 1:
        raise ParameterError("duration too short for the sample rate")
    return EnvelopePair(
        np.full(n, float(amplitude)), np.full(n, float(q_amplitude)), sample_rate
    )


def resample_envelope(env, up):
    """Upsample an envelope pair by an exact integer factor.

    Constant envelopes are regenerated exactly; shaped envelopes go through
    a polyphase interpolator whose stopband sits below -130 dB so AWG
    imaging products stay under any analysis floor used here.
    """
    up = int(up)
    if up < 1:
        raise ParameterError("upsampling factor must be >= 1")
    if up == 1:
        return env
    rate = env.sample_rate * up
    if env.is_constant():
        n = env.n * up
        return EnvelopePair(
            np.full(n, env.i_env[0]), np.full(n, env.q_env[0]), rate
        )
    i_up = resample_poly(env.i_env, up, 1, window=("kaiser", 14.0))
    q_up = resample_poly(env.q_env, up, 1, window=("kaiser", 14.0))
    return EnvelopePair(i_up, q_up, rate)


# ---------------------------------------------------------------------------
# modulation
# ---------------------------------------------------------------------------

def iq_modulate(env, f_if, phase=0.0):
    """Rotate an envelope pair onto an IF carrier.

    Returns the pair (v_i, v_q) defined in the module docstring. A negative
    `f_if` mirrors the envelope spectrum, which is how a chain that inverts
    the spectrum downstream pre-corrects its digital signal.

    Parameters
    ----------
    env : EnvelopePair
    f_if : float
        IF frequency in Hz, ``|f_if| < sample_rate / 2``.
    phase : float
        Carrier phase offset in radians.

    Returns
    -------
    (SampledWaveform, SampledWaveform)
    """
    if abs(f_if) >= env.sample_rate / 2:
        raise ParameterError("|f_if| must be below the envelope Nyquist rate")
    t = env.times
    ph = 2.0 * np.pi * f_if * t + phase
    c, s = np.cos(ph), np.sin(ph)
    v_i = env.i_env * c + env.q_env * s
    v_q = -env.i_env * s + env.q_env * c
    return (
        SampledWaveform(v_i, env.sample_rate),
        SampledWaveform(v_q, env.sample_rate),
    )


def ideal_iq_upconvert(v_i, v_q, lo):
    """Combine IF inputs with a perfect quadrature LO stage.

    output = v_i(t) cos(w_lo t + phase) + v_q(t) sin(w_lo t + phase)

    For inputs produced by :func:`iq_modulate` this yields a single
    sideband at ``f_lo + f_if`` with the envelope amplitude preserved.
    """
    if not v_i.same_grid(v_q):
        raise GridMismatchError("v_i and v_q must share a time grid")
    if lo.frequency_hz >= v_i.sample_rate / 2:
        raise ParameterError("LO frequency must be below the grid Nyquist rate")
    t = v_i.times
    ph = 2.0 * np.pi * lo.frequency_hz * t + lo.phase_rad
    out = v_i.samples * np.cos(ph) + v_q.samples * np.sin(ph)
    return SampledWaveform(out, v_i.sample_rate, v_i.t0)


def carrier_phase_shift(samples, phase):
    """Shift the carrier phase of a real narrowband record by `phase`.

    Every positive-frequency component is multiplied by exp(i*phase)
    (negative frequencies by the conjugate), i.e. cos(w t) becomes
    cos(w t + phase) for every w. DC and the Nyquist bin are untouched.
    Exact for records that hold an integer number of carrier periods or
    that decay to zero at both ends.
    """
    x = np.asarray(samples, dtype=float)
    n = x.size
    spec = np.fft.fft(x)
    rot = np.ones(n, dtype=complex)
    half = (n + 1) // 2
    rot[1:half] = np.exp(1j * phase)
    rot[half + (1 if n % 2 == 0 else 0):] = np.exp(-1j * phase)
    if n % 2 == 0:
        rot[n // 2] = 1.0
    return np.fft.ifft(spec * rot).real


# ---------------------------------------------------------------------------
# measurement
# ---------------------------------------------------------------------------

def tone_amplitude(wave, freq_hz):
    """Peak amplitude of the component of `wave` at `freq_hz`.

    Single-bin projection, exact when the record holds an integer number
    of periods of `freq_hz`. This is the marker measurement used by the
    calibration sweeps.
    """
    if freq_hz <= 0 or freq_hz >= wave.sample_rate / 2:
        raise ParameterError("freq_hz must lie inside (0, Nyquist)")
    phasor = np.exp(-2j * np.pi * freq_hz * wave.times)
    return float(2.0 * np.abs(np.mean(wave.samples * phasor)))


def tone_power_dbm(wave, freq_hz, impedance=50.0):
    a = tone_amplitude(wave, freq_hz)
    if a == 0.0:
        return SPECTRUM_FLOOR_DBM
    return float(amplitude_to_dbm(a, impedance))


def power_spectrum(wave, window="flattop", rbw_hz=None, ref_impedance=50.0):
    """Welch-averaged power spectrum in dBm.

    Segments overlap by 50%; the segment length is chosen so the window's
    equivalent noise bandwidth matches the requested RBW. With the default
    flattop window, tone powers read correctly to within the window's
    scalloping error (about 0.01 dB) regardless of bin alignment.

    Parameters
    ----------
    wave : SampledWaveform
    window : {"flattop", "hann", "rect"}
    rbw_hz : float, optional
        Requested resolution bandwidth. Must be achievable for the record:
        the implied segment cannot exceed the record length. Default picks
        eight segments.
    ref_impedance : float
        Load for the dBm conversion.

    Returns
    -------
    Spectrum
    """
    if window not in _WINDOWS:
        raise ParameterError(f"unknown window {window!r}; choose from {sorted(_WINDOWS)}")
    scipy_name, enbw_bins = _WINDOWS[window]
    n = wave.n
    fs = wave.sample_rate
    if rbw_hz is not None:
        if rbw_hz <= 0:
            raise ParameterError("rbw_hz must be positive")
        nperseg = int(round(enbw_bins * fs / rbw_hz))
        if nperseg > n:
            raise ParameterError(
                f"rbw {rbw_hz:g} Hz needs {nperseg} samples per segment "
                f"but the record has only {n}"
            )
        nperseg = max(nperseg, 16)
    else:
        nperseg = min(n, max(256, n // 8))
    win = get_window(scipy_name, nperseg)
    realized_rbw = fs * np.sum(win**2) / np.sum(win) ** 2
    freq, pxx = welch(
        wave.samples,
        fs=fs,
        window=win,
        noverlap=nperseg // 2,
        detrend=False,
        scaling="spectrum",
        return_onesided=True,
    )
    watts = pxx / ref_impedance
    with np.errstate(divide="ignore"):
        dbm = watts_to_dbm(np.maximum(watts, 0.0))
    dbm = np.maximum(dbm, SPECTRUM_FLOOR_DBM)
    return Spectrum(freq, dbm, float(realized_rbw), ref_impedance)


def find_peaks(spectrum, floor_dbm, guard_rbw=6.0):
    """Local spectral maxima above an absolute floor.

    A candidate within ``guard_rbw * rbw`` of a stronger accepted peak is
    discarded: window sidelobes of a strong tone must not masquerade as
    spurs. Returns (freqs, powers) sorted by descending power.
    """
    p = spectrum.power_dbm
    f = spectrum.freq_hz
    inner = np.arange(1, p.size - 1)
    is_max = (p[inner] > p[inner - 1]) & (p[inner] >= p[inner + 1])
    idx = inner[is_max & (p[inner] >= floor_dbm)]
    order = idx[np.argsort(p[idx])[::-1]]
    kept = []
    guard = guard_rbw * spectrum.rbw_hz
    for i in order:
        if all(abs(f[i] - f[j]) > guard for j in kept):
            kept.append(i)
    kept = np.array(kept, dtype=int)
    return f[kept], p[kept]


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def write_waveform(path, wave):
    """Binary waveform: 8-byte little-endian float64 sample rate, then samples."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<d", wave.sample_rate))
        fh.write(wave.samples.astype("<f8").tobytes())


def read_waveform(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or (len(raw) - 8) % 8 != 0:
        raise ParameterError(f"{path}: not a waveform file (rate field + float64 samples)")
    (rate,) = struct.unpack("<d", raw[:8])
    samples = np.frombuffer(raw[8:], dtype="<f8")
    return SampledWaveform(samples.copy(), rate)


def write_spectrum_csv(path, spectrum):
    data = np.column_stack([spectrum.freq_hz, spectrum.power_dbm])
    np.savetxt(path, data, fmt="%.17g", delimiter=",",
               header="freq_hz,power_dbm", comments="")


def read_spectrum_csv(path, rbw_hz=None):
    """Load a spectrum CSV.

    The format stores bins only; if `rbw_hz` is not given, the bin spacing
    is used as the resolution bandwidth.
    """
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 2:
        raise ParameterError(f"{path}: expected two columns freq_hz,power_dbm")
    freq, p = data[:, 0], data[:, 1]
    if rbw_hz is None:
        rbw_hz = float(np.median(np.diff(freq)))
    return Spectrum(freq, p, rbw_hz)
