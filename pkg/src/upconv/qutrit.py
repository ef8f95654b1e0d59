"""Three-level transmon simulation and randomized benchmarking.

The qubit is modeled as the lowest three levels |g>, |e>, |f> of a
transmon in the frame rotating at the drive carrier, which is kept on
resonance with the g-e transition:

    H/hbar = alpha |f><f| + (Omega(t) a+ + Omega*(t) a) / 2,

with a = |g><e| + sqrt(2) |e><f| and alpha the (negative) anharmonicity
in rad/s.  Decoherence enters through two Lindblad collapse operators:
relaxation sqrt(1/T1) a (the f level decays at 2/T1 through the sqrt(2)
matrix element) and pure dephasing sqrt(2 gamma_phi) a+a with
gamma_phi = 1/T2_echo - 1/(2 T1), so g-e coherence decays at exactly
1/T2_echo.

Conventions.  The complex drive envelope Omega(t) is a Rabi rate in
rad/s; multiplying it by exp(i phi) rotates the drive axis to angle phi
in the equatorial plane, so a real Gaussian envelope of area theta is
R_phi=0(theta), an X rotation.  A detuned tone at `offset_hz` above the
carrier contributes amp * exp(-2j pi offset t) to the envelope; the e-f
transition therefore sits at offset = alpha/2pi (negative).  Virtual Z
gates are instantaneous frame shifts diag(1, e^{i lam}, e^{2i lam}).

Propagation is fixed-step RK4 on the Lindblad equation.  Randomized
benchmarking compiles the 24 single-qubit Cliffords to pulse slots of
one fixed duration, builds one superoperator per distinct slot by
propagating the nine matrix units through it, and then plays sequences
as 9x9 matrix products, which keeps even 200-Clifford sequences cheap.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import least_squares, minimize_scalar

from .errors import FitError, ParameterError
from .signal import EnvelopePair, SampledWaveform, drag_envelope

TWO_PI = 2.0 * math.pi

# default integrator step; 0.1 ns resolves a 178 MHz anharmonicity
# (|alpha| dt ~ 0.11 rad) with RK4 slot error around 1e-10
DEFAULT_DT_S = 1e-10

_LOWER = np.array(
    [[0.0, 1.0, 0.0], [0.0, 0.0, math.sqrt(2.0)], [0.0, 0.0, 0.0]], dtype=complex
)
_RAISE = _LOWER.conj().T
_NUMBER = np.diag([0.0, 1.0, 2.0]).astype(complex)


# ---------------------------------------------------------------------------
# device parameters and states
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransmonParams:
    """Measured device parameters.

    Times are seconds and may be ``math.inf`` to switch decoherence off.
    ``t2_star_s`` is recorded for completeness; the white-noise dephasing
    rate used by the propagator comes from the echo time.
    """

    qubit_freq_hz: float = 6.143e9
    anharmonicity_hz: float = -178e6
    t1_s: float = 23.7e-6
    t2_star_s: float = 11.7e-6
    t2_echo_s: float = 16.6e-6
    thermal_population: float = 0.036

    def __post_init__(self):
        for name in ("t1_s", "t2_star_s", "t2_echo_s"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if self.t2_echo_s > 2.0 * self.t1_s:
            raise ParameterError("t2_echo_s cannot exceed 2*t1_s")
        if self.anharmonicity_hz == 0:
            raise ParameterError("anharmonicity must be nonzero")
        if not 0.0 <= self.thermal_population < 1.0:
            raise ParameterError("thermal_population must be in [0, 1)")

    @property
    def dephasing_rate(self):
        # pure dephasing; nonnegative by the t2_echo <= 2 t1 invariant
        return 1.0 / self.t2_echo_s - 0.5 / self.t1_s


DEFAULT_TRANSMON = TransmonParams()


def lossless(params):
    """Copy of `params` with decoherence and thermal population removed."""
    return replace(
        params,
        t1_s=math.inf,
        t2_star_s=math.inf,
        t2_echo_s=math.inf,
        thermal_population=0.0,
    )


@dataclass
class QutritState:
    """3x3 density matrix in the {|g>, |e>, |f>} basis."""

    rho: np.ndarray

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=complex)
        if self.rho.shape != (3, 3):
            raise ParameterError("rho must be a 3x3 matrix")
        if not np.all(np.isfinite(self.rho.view(float))):
            raise ParameterError("rho must be finite")
        if np.max(np.abs(self.rho - self.rho.conj().T)) > 1e-9:
            raise ParameterError("rho must be Hermitian")
        if abs(np.trace(self.rho).real - 1.0) > 1e-9:
            raise ParameterError("rho must have unit trace")
        if np.linalg.eigvalsh(self.rho).min() < -1e-9:
            raise ParameterError("rho must be positive semidefinite")

    @property
    def populations(self):
        return np.clip(np.real(np.diag(self.rho)), 0.0, 1.0)


def ground_state():
    return QutritState(np.diag([1.0, 0.0, 0.0]).astype(complex))


def thermal_state(params):
    """Diagonal state with the device thermal population in |e>."""
    p = params.thermal_population
    return QutritState(np.diag([1.0 - p, p, 0.0]).astype(complex))


# ---------------------------------------------------------------------------
# drive pulses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DragPulse:
    """Truncated-Gaussian DRAG pulse shape.

    ``drag_coefficient_s=None`` selects the first-order value
    -1/alpha (in rad/s, so positive for a negative anharmonicity);
    ``drag_scale`` multiplies whichever coefficient is in effect and is
    the knob used to study deliberate DRAG miscalibration.
    """

    sigma_s: float = 10e-9
    truncation: float = 2.5
    drag_coefficient_s: float | None = None
    drag_scale: float = 1.0

    def __post_init__(self):
        if not (self.sigma_s > 0 and self.truncation > 0):
            raise ParameterError("sigma_s and truncation must be positive")

    @property
    def duration_s(self):
        return 2.0 * self.truncation * self.sigma_s

    def drag_coefficient(self, params):
        base = self.drag_coefficient_s
        if base is None:
            base = -1.0 / (TWO_PI * params.anharmonicity_hz)
        return base * self.drag_scale

    @property
    def unit_area_s(self):
        """Area under the in-phase envelope for unit peak amplitude."""
        tr = self.truncation
        edge = math.exp(-0.5 * tr * tr)
        gauss = math.sqrt(TWO_PI) * math.erf(tr / math.sqrt(2.0))
        return self.sigma_s * (gauss - 2.0 * tr * edge) / (1.0 - edge)

    def nominal_peak(self, theta):
        """Peak Rabi rate giving pulse area `theta` (before calibration)."""
        return theta / self.unit_area_s


def drag_drive(pulse, peak_rad_s, params=DEFAULT_TRANSMON, sample_rate_hz=20e9,
               detuning_hz=0.0):
    """Sample a DRAG pulse as an I/Q envelope pair (Rabi rate in rad/s)."""
    env = drag_envelope(
        pulse.sigma_s,
        pulse.truncation,
        peak_rad_s,
        pulse.drag_coefficient(params),
        sample_rate_hz,
    )
    if detuning_hz:
        z = (env.i_env + 1j * env.q_env) * np.exp(
            -1j * TWO_PI * detuning_hz * env.times
        )
        env = EnvelopePair(z.real, z.imag, sample_rate_hz)
    return env


# ---------------------------------------------------------------------------
# Lindblad propagation
# ---------------------------------------------------------------------------

def _slot_omega(pulse, peak_rad_s, lam, phi, tones, steps, dt, detuning_hz=0.0):
    """Complex envelope on the RK4 half-step grid for one pulse slot.

    `detuning_hz` chirps the pulse itself (slot-local phase ramp, the
    same knob a hardware calibration turns to cancel the drive-induced
    Stark shift); the spur `tones` stay at their absolute offsets.
    """
    t = np.arange(2 * steps + 1) * (0.5 * dt)
    if peak_rad_s != 0.0:
        tc = pulse.truncation * pulse.sigma_s
        edge = math.exp(-0.5 * pulse.truncation**2)
        core = np.exp(-0.5 * ((t - tc) / pulse.sigma_s) ** 2)
        i_env = peak_rad_s * (core - edge) / (1.0 - edge)
        q_env = lam * peak_rad_s * core * (-(t - tc) / pulse.sigma_s**2) / (1.0 - edge)
        om = (i_env + 1j * q_env) * np.exp(1j * phi - 1j * TWO_PI * detuning_hz * t)
    else:
        om = np.zeros(t.size, dtype=complex)
    for offset_hz, amp in tones:
        om = om + amp * np.exp(-1j * TWO_PI * offset_hz * t)
    return om


def _rates(params):
    return 1.0 / params.t1_s, params.dephasing_rate


def _evolve_density(rho, omega_half, params, dt, steps):
    """RK4 Lindblad propagation; `rho` may be a (..., 3, 3) batch."""
    g1, gphi = _rates(params)
    h0 = TWO_PI * params.anharmonicity_hz * np.diag([0.0, 0.0, 1.0]).astype(complex)
    # K = -iH - (1/2) sum C+C, split into its constant part and the drive
    k0 = -1j * h0 - 0.5 * (g1 * (_RAISE @ _LOWER) + 2.0 * gphi * (_NUMBER @ _NUMBER))
    n_op = _NUMBER

    def rhs(r, w):
        k = k0 - 0.5j * (w * _RAISE + np.conj(w) * _LOWER)
        out = k @ r + r @ k.conj().T
        if g1:
            out = out + g1 * (_LOWER @ r @ _RAISE)
        if gphi:
            out = out + 2.0 * gphi * (n_op @ r @ n_op)
        return out

    r = np.array(rho, dtype=complex)
    for i in range(steps):
        w0, w1, w2 = omega_half[2 * i], omega_half[2 * i + 1], omega_half[2 * i + 2]
        k1 = rhs(r, w0)
        k2 = rhs(r + 0.5 * dt * k1, w1)
        k3 = rhs(r + 0.5 * dt * k2, w1)
        k4 = rhs(r + dt * k3, w2)
        r = r + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return r


def _evolve_unitary(omega_half, params, dt, steps):
    """Schroedinger propagator of one slot with decoherence off."""
    h0 = TWO_PI * params.anharmonicity_hz * np.diag([0.0, 0.0, 1.0]).astype(complex)

    def rhs(u, w):
        h = h0 + 0.5 * (w * _RAISE + np.conj(w) * _LOWER)
        return -1j * (h @ u)

    u = np.eye(3, dtype=complex)
    for i in range(steps):
        w0, w1, w2 = omega_half[2 * i], omega_half[2 * i + 1], omega_half[2 * i + 2]
        k1 = rhs(u, w0)
        k2 = rhs(u + 0.5 * dt * k1, w1)
        k3 = rhs(u + 0.5 * dt * k2, w1)
        k4 = rhs(u + dt * k3, w2)
        u = u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return u


def _check_dt(params, dt):
    if not dt > 0:
        raise ParameterError("dt must be positive")
    if TWO_PI * abs(params.anharmonicity_hz) * dt > 0.5:
        raise ParameterError("dt does not resolve the anharmonicity")


def propagate(state, drive, params=DEFAULT_TRANSMON, dt=DEFAULT_DT_S, duration_s=None):
    """Evolve a qutrit state under a drive.

    `drive` is one of: ``None`` (idle; requires `duration_s`), an
    :class:`EnvelopePair` or ``(i_wave, q_wave)`` tuple of
    :class:`SampledWaveform` giving the complex Rabi envelope in rad/s,
    or an iterable of ``(offset_hz, amp_rad_s)`` detuned CW tones
    (requires `duration_s`; `amp` may be complex).
    """
    _check_dt(params, dt)

    if drive is None:
        tones = ()
    elif isinstance(drive, EnvelopePair):
        tones = None
    elif (
        isinstance(drive, tuple)
        and len(drive) == 2
        and isinstance(drive[0], SampledWaveform)
    ):
        if not drive[0].same_grid(drive[1]):
            raise ParameterError("I and Q waveforms must share a grid")
        drive = EnvelopePair(drive[0].samples, drive[1].samples, drive[0].sample_rate)
        tones = None
    else:
        tones = tuple((float(f), complex(a)) for f, a in drive)
        for offset_hz, _ in tones:
            if TWO_PI * abs(offset_hz) * dt > 1.0:
                raise ParameterError("dt does not resolve a tone offset")

    if tones is None:
        duration_s = drive.duration
    elif duration_s is None:
        raise ParameterError("duration_s is required without an envelope drive")
    if not duration_s > 0:
        raise ParameterError("duration_s must be positive")

    steps = max(1, int(round(duration_s / dt)))
    dt_eff = duration_s / steps
    t_half = np.arange(2 * steps + 1) * (0.5 * dt_eff)
    if tones is None:
        om = np.interp(t_half, drive.times, drive.i_env, right=0.0) + 1j * np.interp(
            t_half, drive.times, drive.q_env, right=0.0
        )
    else:
        om = np.zeros(t_half.size, dtype=complex)
        for offset_hz, amp in tones:
            om += amp * np.exp(-1j * TWO_PI * offset_hz * t_half)

    rho = _evolve_density(state.rho, om, params, dt_eff, steps)
    return QutritState(rho)


# ---------------------------------------------------------------------------
# Clifford group
# ---------------------------------------------------------------------------

# physical pulse alphabet: (rotation angle, axis angle in the xy plane)
_PULSES = {
    "I": (0.0, 0.0),
    "X": (math.pi, 0.0),
    "Y": (math.pi, math.pi / 2),
    "X/2": (math.pi / 2, 0.0),
    "-X/2": (math.pi / 2, math.pi),
    "Y/2": (math.pi / 2, math.pi / 2),
    "-Y/2": (math.pi / 2, 3 * math.pi / 2),
}

# the 24 single-qubit Cliffords as time-ordered pulse strings
# (45 slots total, 1.875 per Clifford on average)
_CLIFFORD_XY = (
    ("I",),
    ("X",),
    ("Y",),
    ("X", "Y"),
    ("X/2", "Y/2"),
    ("X/2", "-Y/2"),
    ("-X/2", "Y/2"),
    ("-X/2", "-Y/2"),
    ("Y/2", "X/2"),
    ("Y/2", "-X/2"),
    ("-Y/2", "X/2"),
    ("-Y/2", "-X/2"),
    ("X/2",),
    ("-X/2",),
    ("Y/2",),
    ("-Y/2",),
    ("-X/2", "Y/2", "X/2"),
    ("-X/2", "-Y/2", "X/2"),
    ("X", "Y/2"),
    ("X", "-Y/2"),
    ("Y", "X/2"),
    ("Y", "-X/2"),
    ("X/2", "Y/2", "X/2"),
    ("-X/2", "Y/2", "-X/2"),
)


def rotation_unitary(theta, phi):
    """2x2 rotation by `theta` about the equatorial axis at angle `phi`."""
    c = math.cos(theta / 2.0)
    s = math.sin(theta / 2.0)
    return np.array(
        [
            [c, -1j * s * np.exp(-1j * phi)],
            [-1j * s * np.exp(1j * phi), c],
        ]
    )


def _z_unitary(lam):
    return np.diag([1.0, np.exp(1j * lam)])


def clifford_unitaries():
    """The 24 Clifford unitaries (2x2, ideal) in table order."""
    out = np.empty((24, 2, 2), dtype=complex)
    for idx, names in enumerate(_CLIFFORD_XY):
        u = np.eye(2, dtype=complex)
        for name in names:
            u = rotation_unitary(*_PULSES[name]) @ u
        out[idx] = u
    return out


_CLIFFORDS = clifford_unitaries()

_ANGLE_GRID = math.pi / 2


def _snap_angle(value, grid=_ANGLE_GRID):
    snapped = round(value / grid) * grid
    if abs(snapped - value) > 1e-9:
        raise ParameterError(f"angle {value} is not on the pi/2 grid")
    return snapped % TWO_PI


def _zxz_angles(u):
    """Decompose a 2x2 unitary as R_phi(theta) . Z(lam), up to phase."""
    det = np.linalg.det(u)
    v = u / np.sqrt(det)
    a, c = v[0, 0], v[1, 0]
    theta = 2.0 * math.atan2(abs(c), abs(a))
    if abs(c) < 1e-12:
        return 0.0, 0.0, _snap_angle(-2.0 * np.angle(a))
    if abs(a) < 1e-12:
        # pi rotations about a diagonal axis (e.g. (x+y)/sqrt2) land on the
        # pi/4 axis grid; R_phi(pi) = R_x(pi) Z(-2 phi) moves them onto x
        return math.pi, 0.0, _snap_angle(-2.0 * np.angle(c) - math.pi)
    ssum = -2.0 * np.angle(a)  # gamma + beta
    sdif = 2.0 * np.angle(c) + math.pi  # gamma - beta
    phi = _snap_angle(0.5 * (ssum + sdif))
    lam = _snap_angle(ssum)
    theta = _snap_angle(theta)
    if theta not in (0.0, math.pi / 2.0, math.pi):
        raise ParameterError("not a Clifford rotation angle")
    return theta, phi, lam


@dataclass(frozen=True)
class PulseOp:
    """One physical pulse slot; theta_rad == 0 is an idle slot."""

    theta_rad: float
    phi_rad: float = 0.0


@dataclass(frozen=True)
class FrameShift:
    """Virtual Z: instantaneous, error-free frame rotation."""

    angle_rad: float


def _clifford_ops(index, decomposition):
    if decomposition == "xy":
        return tuple(PulseOp(*_PULSES[name]) for name in _CLIFFORD_XY[index])
    if decomposition == "single":
        theta, phi, lam = _zxz_angles(_CLIFFORDS[index])
        ops = []
        if lam != 0.0:
            ops.append(FrameShift(lam))
        ops.append(PulseOp(theta, phi))
        return tuple(ops)
    raise ParameterError(f"unknown decomposition {decomposition!r}")


@dataclass(frozen=True)
class CliffordSequence:
    """A benchmarking sequence: Clifford indices, recovery, compiled ops."""

    indices: tuple
    recovery: int
    ops: tuple
    decomposition: str

    @property
    def slot_count(self):
        return sum(1 for op in self.ops if isinstance(op, PulseOp))

    def ideal_unitary(self):
        """Product of the compiled ops as ideal 2-level gates."""
        u = np.eye(2, dtype=complex)
        for op in self.ops:
            if isinstance(op, PulseOp):
                if op.theta_rad != 0.0:
                    u = rotation_unitary(op.theta_rad, op.phi_rad) @ u
            else:
                u = _z_unitary(op.angle_rad) @ u
        return u


def rb_sequence_from_indices(indices, decomposition="single"):
    """Build a sequence (with its recovery Clifford) from explicit indices."""
    indices = tuple(int(i) for i in indices)
    if any(not 0 <= i < 24 for i in indices):
        raise ParameterError("Clifford indices must be in [0, 24)")
    total = np.eye(2, dtype=complex)
    for i in indices:
        total = _CLIFFORDS[i] @ total
    overlaps = np.abs(np.einsum("kab,ba->k", _CLIFFORDS, total))
    recovery = int(np.argmax(overlaps))
    ops = []
    for i in indices:
        ops.extend(_clifford_ops(i, decomposition))
    ops.extend(_clifford_ops(recovery, decomposition))
    return CliffordSequence(indices, recovery, tuple(ops), decomposition)


def clifford_sequence(n, seed, decomposition="single"):
    """`n` uniformly random Cliffords plus the recovery gate."""
    if n < 0:
        raise ParameterError("sequence length must be nonnegative")
    rng = np.random.default_rng(seed)
    indices = rng.integers(0, 24, size=int(n))
    return rb_sequence_from_indices(indices, decomposition)


# ---------------------------------------------------------------------------
# pulse calibration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PulseCalibration:
    """Calibrated amplitude, detuning, and frame phases per pulse type.

    The drive dresses the levels while a pulse plays, which both tilts
    the rotation axis out of the equator and leaves a Z phase behind.
    The per-type detuning takes out the tilt; what is left is absorbed
    into frame shifts applied around the physical pulse, mirroring how a
    hardware calibration folds phase errors into the AWG frame.
    """

    peak_pi_rad_s: float
    peak_half_rad_s: float
    detune_pi_hz: float
    detune_half_hz: float
    pre_pi_rad: float
    post_pi_rad: float
    pre_half_rad: float
    post_half_rad: float
    drag_coefficient_s: float

    def peak(self, theta):
        if theta == math.pi:
            return self.peak_pi_rad_s
        if theta == math.pi / 2.0:
            return self.peak_half_rad_s
        if theta == 0.0:
            return 0.0
        raise ParameterError("only pi and pi/2 pulses are calibrated")

    def detuning(self, theta):
        if theta == math.pi:
            return self.detune_pi_hz
        if theta == math.pi / 2.0:
            return self.detune_half_hz
        return 0.0

    def corrections(self, theta):
        if theta == math.pi:
            return self.pre_pi_rad, self.post_pi_rad
        if theta == math.pi / 2.0:
            return self.pre_half_rad, self.post_half_rad
        return 0.0, 0.0


def _closest_unitary(m):
    u, _, vh = np.linalg.svd(m)
    return u @ vh


def calibrate_pulses(pulse=None, params=DEFAULT_TRANSMON, dt=DEFAULT_DT_S):
    """Tune pulse amplitude and detuning, then extract frame corrections.

    With decoherence off, the pi amplitude maximizes single-pulse P_e
    and the pi/2 amplitude maximizes P_e after two back-to-back pulses
    (that maximum sits at exactly theta = pi/2 regardless of any phase
    error between the pulses, so the estimate is unbiased).  Amplitude
    alone cannot reach P_e = 1: the drive Stark shift tilts the rotation
    axis, so each type also gets a detuning tuned against the same
    population cost.  The residual Z phases are then read off the
    achieved g-e block and returned as virtual-Z corrections.
    """
    if pulse is None:
        pulse = DragPulse()
    _check_dt(params, dt)
    clean = lossless(params)
    lam = pulse.drag_coefficient(params)
    steps = max(1, int(round(pulse.duration_s / dt)))
    dt_eff = pulse.duration_s / steps

    def slot_unitary(peak, detuning_hz):
        om = _slot_omega(pulse, peak, lam, 0.0, (), steps, dt_eff, detuning_hz)
        return _evolve_unitary(om, clean, dt_eff, steps)

    def tune(theta, repeats):
        nominal = pulse.nominal_peak(theta)
        # the Stark shift to cancel grows as (Rabi rate)^2 / anharmonicity,
        # so short strong pulses need a wider detuning window
        rabi_hz = nominal / TWO_PI
        det_bound = max(8e6, rabi_hz**2 / (2.0 * abs(params.anharmonicity_hz)))

        def loss(scale, det):
            u = slot_unitary(scale * nominal, det)
            psi = np.linalg.matrix_power(u, repeats)[:, 0]
            return -abs(psi[1]) ** 2

        # amplitude and detuning are nearly separable; alternate 1-D
        # bounded searches instead of one fussy 2-D optimizer
        scale, det = 1.0, 0.0
        for _ in range(4):
            det = float(
                minimize_scalar(
                    lambda d: loss(scale, d),
                    bounds=(-det_bound, det_bound),
                    method="bounded",
                    options={"xatol": 1e-3},
                ).x
            )
            scale = float(
                minimize_scalar(
                    lambda s: loss(s, det),
                    bounds=(0.7, 1.3),
                    method="bounded",
                    options={"xatol": 1e-10},
                ).x
            )
        return scale * nominal, det

    peak_pi, det_pi = tune(math.pi, 1)
    peak_half, det_half = tune(math.pi / 2.0, 2)

    def z_corrections(theta, peak, det):
        block = _closest_unitary(slot_unitary(peak, det)[:2, :2])
        got_theta, phi, lam_z = _zxz_full(block)
        # want FrameShift(pre) . slot . FrameShift(post) == R_x(theta)
        return phi - lam_z, -phi, got_theta

    pre_pi, post_pi, theta_pi = z_corrections(math.pi, peak_pi, det_pi)
    pre_half, post_half, theta_half = z_corrections(math.pi / 2.0, peak_half, det_half)
    if abs(theta_pi - math.pi) > 1e-3 or abs(theta_half - math.pi / 2.0) > 1e-3:
        raise FitError(
            "pulse amplitude calibration did not converge",
            {"theta_pi": theta_pi, "theta_half": theta_half},
        )
    return PulseCalibration(
        peak_pi, peak_half, det_pi, det_half,
        pre_pi, post_pi, pre_half, post_half, lam,
    )


def _zxz_full(u):
    """ZXZ Euler angles of an arbitrary 2x2 unitary (no grid snapping)."""
    v = u / np.sqrt(np.linalg.det(u))
    a, c = v[0, 0], v[1, 0]
    theta = 2.0 * math.atan2(abs(c), abs(a))
    if abs(c) < 1e-14:
        return 0.0, 0.0, float(-2.0 * np.angle(a))
    if abs(a) < 1e-14:
        return math.pi, float(np.angle(c) + math.pi / 2.0), 0.0
    ssum = -2.0 * np.angle(a)
    sdif = 2.0 * np.angle(c) + math.pi
    return theta, float(0.5 * (ssum + sdif)), float(ssum)


# ---------------------------------------------------------------------------
# randomized benchmarking
# ---------------------------------------------------------------------------

def _frame_shift_vector(lam):
    ph = np.exp(1j * lam * np.arange(3))
    return np.outer(ph, ph.conj()).reshape(9)


def _slot_superoperator(pulse, peak, lam, phi, tones, params, dt, detuning_hz):
    steps = max(1, int(round(pulse.duration_s / dt)))
    dt_eff = pulse.duration_s / steps
    om = _slot_omega(pulse, peak, lam, phi, tones, steps, dt_eff, detuning_hz)
    basis = np.eye(9, dtype=complex).reshape(9, 3, 3)
    out = _evolve_density(basis, om, params, dt_eff, steps)
    return out.reshape(9, 9).T


class _SlotCache:
    """Superoperators for the distinct (theta, phi) slots of one run."""

    def __init__(self, pulse, cal, tones, params, dt):
        self.pulse = pulse
        self.cal = cal
        self.tones = tones
        self.params = params
        self.dt = dt
        # lam follows the pulse, not the calibration record, so a reused
        # calibration permits deliberate DRAG-coefficient scans
        self.lam = pulse.drag_coefficient(params)
        self._slots = {}

    def slot(self, theta, phi):
        key = (round(theta, 12), round(phi, 12))
        if key not in self._slots:
            self._slots[key] = _slot_superoperator(
                self.pulse,
                self.cal.peak(theta),
                self.lam,
                phi,
                self.tones,
                self.params,
                self.dt,
                self.cal.detuning(theta),
            )
        return self._slots[key]

    def clifford_matrix(self, index, decomposition):
        m = np.eye(9, dtype=complex)
        for op in _clifford_ops(index, decomposition):
            if isinstance(op, FrameShift):
                m = _frame_shift_vector(op.angle_rad)[:, None] * m
                continue
            pre, post = self.cal.corrections(op.theta_rad)
            if pre:
                m = _frame_shift_vector(pre)[:, None] * m
            m = self.slot(op.theta_rad, op.phi_rad) @ m
            if post:
                m = _frame_shift_vector(post)[:, None] * m
        return m


@dataclass(frozen=True)
class RbFit:
    """Exponential decay fit P_g(N) = a * p**N + b."""

    a: float
    p: float
    b: float
    error_per_clifford: float
    uncertainty: float | None
    residual_rms: float


@dataclass
class RbResult:
    """Averaged benchmarking curves plus the decay fit."""

    lengths: tuple
    p_g: np.ndarray
    p_f: np.ndarray
    samples_g: np.ndarray
    samples_f: np.ndarray
    fit: RbFit | None
    decomposition: str
    preselected: bool

    @property
    def error_per_clifford(self):
        return None if self.fit is None else self.fit.error_per_clifford

    @property
    def uncertainty(self):
        return None if self.fit is None else self.fit.uncertainty


def _rb_model(n, a, p, b):
    return a * np.power(p, n) + b


def _fit_decay_mean(lengths, mean):
    """Best (a, p, b) for one averaged decay curve."""
    n = np.asarray(lengths, dtype=float)
    best = None
    for p0 in (0.85, 0.95, 0.99, 0.995, 0.999, 0.9999, 1.0):
        basis = np.column_stack([np.power(p0, n), np.ones_like(n)])
        coef, *_ = np.linalg.lstsq(basis, mean, rcond=None)
        sse = float(np.sum((basis @ coef - mean) ** 2))
        if best is None or sse < best[0]:
            best = (sse, coef[0], p0, coef[1])
    _, a0, p0, b0 = best
    x0 = np.clip([a0, p0, b0], [0.0, 1e-6, -1.0], [2.0, 1.0, 1.5])
    res = least_squares(
        lambda x: _rb_model(n, *x) - mean,
        x0,
        bounds=([0.0, 1e-6, -1.0], [2.0, 1.0, 1.5]),
        method="trf",
    )
    if not res.success:
        raise FitError(
            "decay fit did not converge",
            {"status": res.status, "message": res.message, "x": res.x.tolist()},
        )
    a, p, b = (float(v) for v in res.x)
    rms = float(np.sqrt(np.mean(res.fun**2)))
    return a, p, b, rms


def fit_rb_decay(lengths, samples, bootstrap=200, seed=0):
    """Fit the ground-state return curve and bootstrap its uncertainty.

    `samples` is (n_lengths, n_seeds) of per-sequence P_g values, or an
    already-averaged 1-D curve (in which case no uncertainty is
    reported).  The error per Clifford is (1 - p) / 2.
    """
    lengths = tuple(int(v) for v in lengths)
    if len(set(lengths)) < 3:
        raise ParameterError("need at least 3 distinct sequence lengths")
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        mean = samples
        per_seed = None
    elif samples.ndim == 2:
        if samples.shape[0] != len(lengths):
            raise ParameterError("samples rows must match lengths")
        mean = samples.mean(axis=1)
        per_seed = samples
    else:
        raise ParameterError("samples must be 1-D or 2-D")

    a, p, b, rms = _fit_decay_mean(lengths, mean)
    uncertainty = None
    if per_seed is not None and per_seed.shape[1] > 1 and bootstrap > 0:
        rng = np.random.default_rng(seed)
        n_seeds = per_seed.shape[1]
        errors = []
        for _ in range(int(bootstrap)):
            pick = rng.integers(0, n_seeds, size=n_seeds)
            try:
                _, p_b, _, _ = _fit_decay_mean(lengths, per_seed[:, pick].mean(axis=1))
            except FitError:
                continue
            errors.append(0.5 * (1.0 - p_b))
        if len(errors) < max(10, bootstrap // 2):
            raise FitError(
                "bootstrap resampling failed to converge",
                {"resamples_ok": len(errors), "requested": int(bootstrap)},
            )
        uncertainty = float(np.std(errors))
    return RbFit(a, p, b, 0.5 * (1.0 - p), uncertainty, rms)


@dataclass(frozen=True)
class LeakageFit:
    """Rate-equation fit of the f-state population vs sequence length."""

    p_up: float
    p_down: float
    residual_rms: float


def fit_leakage(lengths, p_f):
    """Fit P_f(N) = p_up/(p_up+p_down) * (1 - exp(-(p_up+p_down) N))."""
    lengths = np.asarray(lengths, dtype=float)
    p_f = np.asarray(p_f, dtype=float)
    if lengths.ndim != 1 or lengths.shape != p_f.shape:
        raise ParameterError("lengths and p_f must be 1-D and equally long")
    if np.unique(lengths).size < 3:
        raise ParameterError("need at least 3 distinct sequence lengths")

    # fit (p_up, p_down) directly: the saturating-exponential form stays
    # well conditioned even when rate*N << 1 and P_f is essentially linear
    sat0 = min(max(float(np.max(p_f)), 1e-12), 1.0)
    pos = lengths > 0
    if np.any(pos):
        k = int(np.argmin(np.where(pos, lengths, np.inf)))
        frac = min(max(float(p_f[k]) / sat0, 1e-6), 0.95)
        rate0 = -math.log1p(-frac) / float(lengths[k])
    else:
        rate0 = 1e-3
    x0 = [max(sat0 * rate0, 1e-12), max((1.0 - sat0) * rate0, 1e-12)]

    def model(x):
        up, down = x
        rate = up + down
        return up / rate * -np.expm1(-rate * lengths)

    res = least_squares(
        lambda x: model(x) - p_f,
        x0,
        bounds=([1e-14, 1e-14], [10.0, 10.0]),
        method="trf",
        xtol=1e-14,
        ftol=1e-14,
        gtol=1e-14,
    )
    if not res.success:
        raise FitError(
            "leakage fit did not converge",
            {"status": res.status, "message": res.message, "x": res.x.tolist()},
        )
    up, down = (float(v) for v in res.x)
    rms = float(np.sqrt(np.mean(res.fun**2)))
    return LeakageFit(up, down, rms)


def run_rb(
    lengths,
    seeds_per_length,
    params=DEFAULT_TRANSMON,
    pulse=None,
    distortion=None,
    decomposition="single",
    seed=2026,
    dt=DEFAULT_DT_S,
    preselected=True,
    readout=None,
    readout_shots=3000,
    calibration=None,
    bootstrap=200,
):
    """Simulate randomized benchmarking and fit the decay.

    `distortion` is an optional list of ``(offset_hz, dbc)`` spurious
    tones riding on the drive, with power relative to the calibrated
    pi-pulse peak; they play continuously, idle slots included.  Each
    offset must be an integer multiple of 1/slot so every slot sees the
    same spur waveform and the per-slot propagators stay valid.

    `readout` may be any object with a ``simulate_assignment(probs,
    shots, rng)`` method (e.g. a fitted readout classifier); without it
    the exact projective populations are used.  Sequences are evaluated
    serially: once the slot propagators are built, each one costs a
    handful of 9x9 products.
    """
    lengths = tuple(int(v) for v in lengths)
    if not lengths or any(v < 0 for v in lengths):
        raise ParameterError("lengths must be nonempty and nonnegative")
    if seeds_per_length < 1:
        raise ParameterError("seeds_per_length must be >= 1")
    _check_dt(params, dt)
    if pulse is None:
        pulse = DragPulse()
    cal = calibration or calibrate_pulses(pulse, params, dt)

    tones = []
    for offset_hz, dbc in distortion or ():
        cycles = offset_hz * pulse.duration_s
        if abs(cycles - round(cycles)) > 1e-6 * max(1.0, abs(cycles)):
            raise ParameterError(
                "spur offset must be an integer multiple of 1/slot duration"
            )
        tones.append((float(offset_hz), 10.0 ** (dbc / 20.0) * cal.peak_pi_rad_s))
    cache = _SlotCache(pulse, cal, tuple(tones), params, dt)
    matrices = [cache.clifford_matrix(i, decomposition) for i in range(24)]

    rho0 = ground_state().rho if preselected else thermal_state(params).rho
    v0 = rho0.reshape(9)
    rng = np.random.default_rng(seed)
    child = rng.integers(0, 2**63, size=(len(lengths), seeds_per_length))

    samples_g = np.empty((len(lengths), seeds_per_length))
    samples_f = np.empty_like(samples_g)
    for i, n in enumerate(lengths):
        for j in range(seeds_per_length):
            seq = clifford_sequence(n, int(child[i, j]), decomposition)
            v = v0
            for idx in seq.indices:
                v = matrices[idx] @ v
            v = matrices[seq.recovery] @ v
            pops = np.clip(np.real(v.reshape(3, 3).diagonal()), 0.0, 1.0)
            if readout is not None:
                shot_rng = np.random.default_rng([int(child[i, j]), 17])
                pops = readout.simulate_assignment(pops, readout_shots, shot_rng)
            samples_g[i, j] = pops[0]
            samples_f[i, j] = pops[2]

    fit = None
    if len(set(lengths)) >= 3:
        fit = fit_rb_decay(lengths, samples_g, bootstrap=bootstrap)
    return RbResult(
        lengths,
        samples_g.mean(axis=1),
        samples_f.mean(axis=1),
        samples_g,
        samples_f,
        fit,
        decomposition,
        preselected,
    )


def coherence_limit(params, clifford_duration_s=50e-9):
    """Decoherence-limited average error per Clifford of duration t.

    1 - (1/6) (3 + 2 exp(-t/T2e) + exp(-t/T1)): the average over the six
    cardinal qubit states of the idle-survival fidelity, which is what a
    benchmarking sequence of perfect pulses would measure.
    """
    if not clifford_duration_s > 0:
        raise ParameterError("clifford_duration_s must be positive")
    t = clifford_duration_s
    return 1.0 - (
        3.0 + 2.0 * math.exp(-t / params.t2_echo_s) + math.exp(-t / params.t1_s)
    ) / 6.0
