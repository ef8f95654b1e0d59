"""Three-state dispersive readout: shot simulation, GMM fits, assignment.

Integrated (u1, u2) quadrature pairs from the three transmon states form
three Gaussian blobs in the plane.  This module simulates such shots,
fits a trimodal Gaussian mixture with plain EM, classifies shots by
maximum responsibility, and derives the assignment matrix and
ground-state preselection masks used by the benchmarking pipeline.

The default blob layout is tuned so an ideal classifier reproduces the
assignment probabilities of the reference device: the pairwise center
distances follow from splitting each state's target error budget across
its two decision boundaries (half-distance normal quantiles), which the
tests then verify end to end.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import norm

from .errors import ConfigError, FitError, GridMismatchError, ParameterError

LABELS = ("g", "e", "f")

# integration window of one readout record
READOUT_WINDOW_S = 1.2e-6


# ---------------------------------------------------------------------------
# models and shots
# ---------------------------------------------------------------------------

def _check_spd(covariances, what):
    covariances = np.asarray(covariances, dtype=float)
    if covariances.shape[-2:] != (2, 2):
        raise ParameterError(f"{what} must be 2x2 matrices")
    for cov in covariances.reshape(-1, 2, 2):
        if not np.all(np.isfinite(cov)):
            raise ParameterError(f"{what} must be finite")
        if abs(cov[0, 1] - cov[1, 0]) > 1e-9 * (1.0 + abs(cov).max()):
            raise ParameterError(f"{what} must be symmetric")
        if np.linalg.eigvalsh(cov)[0] <= 0:
            raise ParameterError(f"{what} must be positive definite")
    return covariances


@dataclass(frozen=True)
class ReadoutModel:
    """Gaussian blob means/covariances plus the resonator operating point.

    The resonator parameters are carried for provenance (they set where
    the blobs come from on hardware) but the plane geometry alone drives
    the simulation.
    """

    means: np.ndarray
    covariances: np.ndarray
    resonator_freq_hz: float = 7.141e9
    dispersive_shift_hz: float = -2.4e6
    linewidth_hz: float = 10e6

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        if means.shape != (3, 2) or not np.all(np.isfinite(means)):
            raise ParameterError("means must be a finite (3, 2) array")
        covs = _check_spd(self.covariances, "covariances")
        if covs.shape != (3, 2, 2):
            raise ParameterError("covariances must have shape (3, 2, 2)")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)
        if not (self.resonator_freq_hz > 0 and self.linewidth_hz > 0):
            raise ParameterError("resonator_freq_hz and linewidth_hz must be positive")


def default_readout_model():
    """Blob layout reproducing the reference assignment probabilities.

    Each state's misassignment budget is split between its two decision
    boundaries; a boundary at half the center distance d eats Phi(-d/2)
    of a unit-variance blob, so d = 2 Phi^-1(1 - loss) per pair.
    """
    ge, gf, ef = 0.0025, 0.0005, 0.0395
    d_ge = 2.0 * norm.isf(ge)
    d_gf = 2.0 * norm.isf(gf)
    d_ef = 2.0 * norm.isf(ef)
    xf = (d_ge**2 + d_gf**2 - d_ef**2) / (2.0 * d_ge)
    yf = math.sqrt(d_gf**2 - xf**2)
    means = np.array([[0.0, 0.0], [d_ge, 0.0], [xf, yf]])
    return ReadoutModel(means, np.broadcast_to(np.eye(2), (3, 2, 2)).copy())


@dataclass(frozen=True)
class IqShot:
    """One integrated readout record in the (u1, u2) plane."""

    u1: float
    u2: float
    true_label: int | None = None


def integrate_readout(i_wave, q_wave, w1, w2, true_label=None):
    """Demodulate one record: u_i = Re( sum s(t) w_i(t) ) / fs.

    `i_wave`/`q_wave` are the digitized quadratures of the complex
    record s(t); `w1`/`w2` are complex weight samples on the same grid.
    The grid must cover the full readout window.
    """
    if not i_wave.same_grid(q_wave):
        raise GridMismatchError("i and q records must share a grid")
    w1 = np.asarray(w1, dtype=complex)
    w2 = np.asarray(w2, dtype=complex)
    if w1.shape != (i_wave.n,) or w2.shape != (i_wave.n,):
        raise GridMismatchError("weights must match the record grid")
    if i_wave.duration < READOUT_WINDOW_S * (1.0 - 1e-9):
        raise ParameterError("record shorter than the readout window")
    s = i_wave.samples + 1j * q_wave.samples
    dt = 1.0 / i_wave.sample_rate
    u1 = float(np.real(np.sum(s * w1)) * dt)
    u2 = float(np.real(np.sum(s * w2)) * dt)
    return IqShot(u1, u2, true_label)


def _sample_blob(model_means, model_covs, label, n, rng):
    chol = np.linalg.cholesky(model_covs[label])
    return rng.standard_normal((n, 2)) @ chol.T + model_means[label]


def simulate_shots(label, model, n, seed):
    """`n` shots of the prepared state `label` (0, 1, or 2)."""
    label = int(label)
    if not 0 <= label < 3:
        raise ParameterError("label must be 0 (g), 1 (e) or 2 (f)")
    if n < 1:
        raise ParameterError("n must be >= 1")
    rng = np.random.default_rng(seed)
    return _sample_blob(model.means, model.covariances, label, int(n), rng)


def simulate_thermal_shots(model, n, thermal_population, seed):
    """Nominal-ground shots with a thermal |e> admixture; returns labels too."""
    if not 0.0 <= thermal_population < 1.0:
        raise ParameterError("thermal_population must be in [0, 1)")
    rng = np.random.default_rng(seed)
    labels = (rng.random(int(n)) < thermal_population).astype(int)
    points = _sample_blob(model.means, model.covariances, 0, int(n), rng)
    hot = labels == 1
    if np.any(hot):
        points[hot] = _sample_blob(
            model.means, model.covariances, 1, int(np.sum(hot)), rng
        )
    return points, labels


# ---------------------------------------------------------------------------
# Gaussian mixture
# ---------------------------------------------------------------------------

def _log_gauss(points, mean, cov):
    # bivariate normal log-density via the Cholesky factor
    chol = np.linalg.cholesky(cov)
    diff = points - mean
    sol = np.linalg.solve(chol, diff.T)
    maha = np.sum(sol**2, axis=0)
    logdet = 2.0 * math.log(chol[0, 0] * chol[1, 1])
    return -math.log(2.0 * math.pi) - 0.5 * (logdet + maha)


@dataclass(frozen=True)
class GmmModel:
    """Fitted mixture with components in (g, e, f) label order."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    overlapping: bool = False

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        m = np.asarray(self.means, dtype=float)
        c = _check_spd(self.covariances, "covariances")
        k = w.shape[0]
        if w.ndim != 1 or m.shape != (k, 2) or c.shape != (k, 2, 2):
            raise ParameterError("weights, means and covariances disagree in shape")
        if np.any(w <= 0) or np.any(w >= 1) or abs(np.sum(w) - 1.0) > 1e-9:
            raise ParameterError("weights must lie in (0, 1) and sum to 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "covariances", c)

    @property
    def n_components(self):
        return self.weights.shape[0]

    def log_responsibilities(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        logr = np.stack(
            [
                math.log(w) + _log_gauss(points, m, c)
                for w, m, c in zip(self.weights, self.means, self.covariances)
            ],
            axis=1,
        )
        norm_ = np.logaddexp.reduce(logr, axis=1, keepdims=True)
        return logr - norm_, float(np.sum(norm_))

    def responsibilities(self, points):
        logr, _ = self.log_responsibilities(points)
        return np.exp(logr)

    def log_likelihood(self, points):
        _, ll = self.log_responsibilities(points)
        return ll

    def classify(self, points):
        """Max-responsibility labels; argmax breaks ties toward lower energy."""
        logr, _ = self.log_responsibilities(points)
        return np.argmax(logr, axis=1)

    def simulate_assignment(self, populations, shots, rng):
        """Assignment fractions for `shots` draws from mixed populations.

        Duck-typed readout hook for the benchmarking runner: samples true
        states from `populations`, draws blob points, classifies them.
        """
        p = np.clip(np.asarray(populations, dtype=float), 0.0, None)
        total = float(np.sum(p))
        if total <= 0:
            raise ParameterError("populations must not all vanish")
        counts = rng.multinomial(int(shots), p / total)
        assigned = np.zeros(self.n_components)
        for label, count in enumerate(counts):
            if count == 0:
                continue
            pts = _sample_blob(self.means, self.covariances, label, int(count), rng)
            assigned += np.bincount(self.classify(pts), minlength=self.n_components)
        return assigned / float(shots)


def _kmeanspp(points, k, rng):
    centers = [points[rng.integers(points.shape[0])]]
    for _ in range(k - 1):
        d2 = np.min(
            [np.sum((points - c) ** 2, axis=1) for c in centers], axis=0
        )
        total = float(np.sum(d2))
        if total <= 0:
            # all remaining mass on existing centers: degenerate cloud
            centers.append(points[rng.integers(points.shape[0])])
            continue
        centers.append(points[rng.choice(points.shape[0], p=d2 / total)])
    return np.array(centers)


def _em_once(points, k, rng, max_iter):
    n = points.shape[0]
    means = _kmeanspp(points, k, rng)
    global_cov = np.cov(points.T) + 1e-12 * np.eye(2)
    covs = np.repeat(global_cov[None], k, axis=0)
    weights = np.full(k, 1.0 / k)
    floor = 1e-12 * (np.trace(global_cov) + 1.0)

    ll_prev = -np.inf
    for it in range(max_iter):
        model = GmmModel(weights, means, covs)
        logr, ll = model.log_responsibilities(points)
        if ll < ll_prev - 1e-8 * (abs(ll_prev) + 1.0):
            raise FitError(
                "EM log-likelihood decreased",
                {"iteration": it, "ll": ll, "ll_prev": ll_prev},
            )
        r = np.exp(logr)
        nk = np.sum(r, axis=0)
        if np.min(nk) < 2.0:
            return None, {"reason": "component starved", "iteration": it, "ll": ll}
        weights = nk / n
        means = (r.T @ points) / nk[:, None]
        new_covs = np.empty_like(covs)
        for j in range(k):
            diff = points - means[j]
            new_covs[j] = (r[:, j, None] * diff).T @ diff / nk[j]
            if np.linalg.eigvalsh(new_covs[j])[0] < floor:
                return None, {"reason": "covariance collapsed", "iteration": it, "ll": ll}
        covs = new_covs
        if abs(ll - ll_prev) <= 1e-10 * (abs(ll) + 1.0):
            return (weights, means, covs, ll, it + 1), None
        ll_prev = ll
    return (weights, means, covs, ll_prev, max_iter), None


def _match_to_references(means, refs):
    cost = np.sum((refs[:, None, :] - means[None, :, :]) ** 2, axis=2)
    _, perm = linear_sum_assignment(cost)
    return perm


def fit_gmm(points, k=3, seed=0, restarts=5, labels=None, reference_means=None,
            max_iter=300):
    """EM fit of a k-component bivariate mixture with k-means++ restarts.

    Components are reordered to the (g, e, f) convention by matching
    fitted centers to per-state centroids of `labels` (if shots are
    labeled), else to `reference_means`, else by coordinate order.  All
    restarts collapsing raises with per-restart diagnostics; fits whose
    components overlap within one standard deviation are flagged.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ParameterError("points must be an (n, 2) array")
    if points.shape[0] < 10 * k:
        raise ParameterError("need at least 10 points per component")

    best = None
    failures = []
    for r in range(int(restarts)):
        rng = np.random.default_rng([seed, r])
        result, failure = _em_once(points, int(k), rng, int(max_iter))
        if result is None:
            failures.append({"restart": r, **failure})
            continue
        if best is None or result[3] > best[3]:
            best = result
    if best is None:
        raise FitError("all EM restarts collapsed", {"restarts": failures})
    weights, means, covs, _, _ = best

    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (points.shape[0],):
            raise ParameterError("labels must match points in length")
        if set(np.unique(labels)) != set(range(k)):
            raise ParameterError("labels must cover every component index")
        refs = np.array([points[labels == j].mean(axis=0) for j in range(k)])
        perm = _match_to_references(means, refs)
    elif reference_means is not None:
        refs = np.asarray(reference_means, dtype=float)
        if refs.shape != (k, 2):
            raise ParameterError("reference_means must have shape (k, 2)")
        perm = _match_to_references(means, refs)
    else:
        perm = np.lexsort((means[:, 1], means[:, 0]))

    weights, means, covs = weights[perm], means[perm], covs[perm]
    overlapping = False
    for i in range(k):
        for j in range(i + 1, k):
            d = float(np.linalg.norm(means[i] - means[j]))
            spread = math.sqrt(
                np.linalg.eigvalsh(covs[i])[-1] + np.linalg.eigvalsh(covs[j])[-1]
            )
            if d < spread:
                overlapping = True
    return GmmModel(weights, means, covs, overlapping)


# ---------------------------------------------------------------------------
# assignment and preselection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AssignmentResult:
    """Assignment matrix (rows: prepared, columns: assigned) and summary."""

    matrix: np.ndarray
    average: float
    shots_per_state: tuple

    @property
    def average_error(self):
        return 1.0 - self.average


def assignment_matrix(gmm, points, labels):
    """Per-state assignment probabilities from labeled shots."""
    points = np.asarray(points, dtype=float)
    labels = np.asarray(labels)
    if points.ndim != 2 or points.shape[1] != 2 or labels.shape != (points.shape[0],):
        raise ParameterError("points must be (n, 2) with matching labels")
    k = gmm.n_components
    assigned = gmm.classify(points)
    matrix = np.empty((k, k))
    counts = []
    for i in range(k):
        sel = labels == i
        n_i = int(np.sum(sel))
        if n_i == 0:
            raise ParameterError(f"no shots labeled {i}")
        counts.append(n_i)
        matrix[i] = np.bincount(assigned[sel], minlength=k) / n_i
    return AssignmentResult(matrix, float(np.mean(np.diag(matrix))), tuple(counts))


@dataclass(frozen=True)
class PreselectResult:
    """Shots surviving the ground-state preselection gate."""

    points: np.ndarray
    labels: np.ndarray | None
    discard_fraction: float


def preselect(pre_points, main_points, gmm, main_labels=None):
    """Keep main shots whose paired pre-shot is assigned to the ground state."""
    pre_points = np.asarray(pre_points, dtype=float)
    main_points = np.asarray(main_points, dtype=float)
    if pre_points.shape != main_points.shape or pre_points.ndim != 2:
        raise ParameterError("pre and main shots must be equal-length (n, 2) arrays")
    keep = gmm.classify(pre_points) == 0
    kept_labels = None
    if main_labels is not None:
        main_labels = np.asarray(main_labels)
        if main_labels.shape != (main_points.shape[0],):
            raise ParameterError("main_labels must match main_points in length")
        kept_labels = main_labels[keep]
    return PreselectResult(
        main_points[keep], kept_labels, 1.0 - float(np.mean(keep))
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def gmm_to_dict(gmm):
    return {
        "weights": gmm.weights.tolist(),
        "means": gmm.means.tolist(),
        "covariances": gmm.covariances.tolist(),
        "labels": list(LABELS[: gmm.n_components]),
        "overlapping": bool(gmm.overlapping),
    }


def gmm_from_dict(data):
    try:
        return GmmModel(
            np.asarray(data["weights"], dtype=float),
            np.asarray(data["means"], dtype=float),
            np.asarray(data["covariances"], dtype=float),
            bool(data.get("overlapping", False)),
        )
    except (KeyError, TypeError, ValueError, ParameterError) as exc:
        raise ConfigError(f"bad mixture model record: {exc}") from exc


def write_gmm_json(path, gmm):
    with open(path, "w", encoding="ascii") as fh:
        json.dump(gmm_to_dict(gmm), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_gmm_json(path):
    with open(path, encoding="ascii") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad mixture model file: {exc}") from exc
    return gmm_from_dict(data)


def write_shots_csv(path, points, labels=None):
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ParameterError("points must be an (n, 2) array")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("u1,u2,label\n")
        for i, (u1, u2) in enumerate(points):
            name = "" if labels is None else LABELS[int(labels[i])]
            fh.write(f"{u1:.17g},{u2:.17g},{name}\n")


def read_shots_csv(path):
    """Read a shots table; returns (points, labels or None)."""
    points = []
    labels = []
    with open(path, encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != "u1,u2,label":
            raise ConfigError("expected a u1,u2,label header")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ConfigError(f"malformed shot row: {line!r}")
            try:
                points.append((float(parts[0]), float(parts[1])))
            except ValueError as exc:
                raise ConfigError(f"malformed shot row: {line!r}") from exc
            labels.append(parts[2])
    if not points:
        raise ConfigError("shots file holds no rows")
    points = np.array(points)
    if all(name == "" for name in labels):
        return points, None
    try:
        idx = np.array([LABELS.index(name) for name in labels])
    except ValueError:
        bad = sorted(set(labels) - set(LABELS))
        raise ConfigError(f"unknown state labels: {bad}") from None
    return points, idx
