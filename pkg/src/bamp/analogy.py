"""Statistical analogy: new-class statistics calibrated against base classes.

A few-shot class is represented by its shot mean plus the individual shot
embeddings. Each of those prototypes gets a mean blended toward similar base
classes and a covariance averaged with theirs, after which scoring uses the
Mahalanobis distance under a shrunk, correlation-normalized covariance. Base
classes keep their own statistics untouched and always serve as the
calibration targets.
"""

import warnings
from dataclasses import dataclass

import numpy as np


class AnalogyError(Exception):
    pass


@dataclass(frozen=True)
class CalibrationParams:
    beta: float = 0.9        # mean calibration strength (1 = no calibration)
    eta: float = 1.0         # covariance scale
    gamma: float = 500.0     # shrinkage added to the covariance diagonal
    tau_cal: float = 16.0    # sharpness of the analogy weight softmax

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise AnalogyError(f"beta must be in [0, 1], got {self.beta}")
        if self.eta <= 0:
            raise AnalogyError(f"eta must be > 0, got {self.eta}")
        if self.gamma <= 0:
            raise AnalogyError(f"gamma must be > 0, got {self.gamma}")
        if self.tau_cal <= 0:
            raise AnalogyError(f"tau_cal must be > 0, got {self.tau_cal}")


def build_new_class_prototypes(shots: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Shot mean plus each shot as prototypes, with the shots' shared covariance.

    For ``n`` shots the result is ``n + 1`` prototypes (row 0 is the mean) and
    one unbiased covariance estimate reused by every prototype of the class.
    """
    shots = np.asarray(shots, dtype=np.float64)
    if shots.ndim != 2 or shots.shape[0] < 1:
        raise AnalogyError("need a nonempty (n, d) shot matrix")
    mean = shots.mean(axis=0)
    prototypes = np.vstack([mean[None, :], shots])
    if shots.shape[0] == 1:
        cov = np.zeros((shots.shape[1], shots.shape[1]))
    else:
        centered = shots - mean
        cov = centered.T @ centered / (shots.shape[0] - 1)
        cov = (cov + cov.T) / 2.0
    return prototypes, cov


def similarity(base_mean: np.ndarray, prototype: np.ndarray, tau_cal: float) -> float:
    """Cosine similarity scaled by the calibration sharpness."""
    base_mean = np.asarray(base_mean, dtype=np.float64)
    prototype = np.asarray(prototype, dtype=np.float64)
    nb = np.linalg.norm(base_mean)
    np_ = np.linalg.norm(prototype)
    if nb == 0.0 or np_ == 0.0:
        raise AnalogyError("cosine similarity needs nonzero vectors")
    return float(np.dot(base_mean, prototype) / (nb * np_) * tau_cal)


def analogy_weights(similarities: np.ndarray) -> np.ndarray:
    """Softmax over base-class similarities; sums to 1."""
    s = np.asarray(similarities, dtype=np.float64)
    if s.ndim != 1 or s.size < 1:
        raise AnalogyError("need at least one base-class similarity")
    e = np.exp(s - s.max())
    return e / e.sum()


def calibrate_mean(prototype, base_means, weights, beta: float) -> np.ndarray:
    """Blend a prototype toward the weighted combination of base means."""
    if not 0.0 <= beta <= 1.0:
        raise AnalogyError(f"beta must be in [0, 1], got {beta}")
    prototype = np.asarray(prototype, dtype=np.float64)
    base_means = np.asarray(base_means, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    return beta * prototype + (1.0 - beta) * (weights @ base_means)


def calibrate_covariance(cov, base_covs, weights, eta: float) -> np.ndarray:
    """Scale the sum of the shot covariance and the weighted base covariances."""
    if eta <= 0:
        raise AnalogyError(f"eta must be > 0, got {eta}")
    cov = np.asarray(cov, dtype=np.float64)
    base_covs = np.asarray(base_covs, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if base_covs.shape[1:] != cov.shape:
        raise AnalogyError(
            f"covariance shapes disagree: {cov.shape} vs {base_covs.shape[1:]}"
        )
    blended = eta * (cov + np.tensordot(weights, base_covs, axes=1))
    return (blended + blended.T) / 2.0


def shrink_and_normalize(cov: np.ndarray, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Shrunk correlation matrix of ``cov + gamma*I`` and its inverse."""
    if gamma <= 0:
        raise AnalogyError(f"gamma must be > 0, got {gamma}")
    cov = np.asarray(cov, dtype=np.float64)
    if not np.all(np.isfinite(cov)):
        raise AnalogyError("covariance has non-finite entries")
    shrunk = cov + gamma * np.eye(cov.shape[0])
    scale = np.sqrt(np.diag(shrunk))
    corr = shrunk / np.outer(scale, scale)
    np.fill_diagonal(corr, 1.0)
    return corr, np.linalg.inv(corr)


def mahalanobis(x: np.ndarray, center: np.ndarray, inv_corr: np.ndarray) -> float:
    """Quadratic form of ``x - center`` under the normalized inverse."""
    delta = np.asarray(x, dtype=np.float64) - np.asarray(center, dtype=np.float64)
    return float(delta @ inv_corr @ delta)


def min_max_normalize(values: np.ndarray) -> tuple[np.ndarray, bool]:
    """Scale to [0, 1]; an all-equal vector maps to zeros with a degeneracy flag."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return np.zeros_like(v), True
    return (v - lo) / (hi - lo), False


@dataclass
class _ClassEntry:
    centers: np.ndarray      # (K, d) calibrated prototype means
    inv_corrs: np.ndarray    # (K, d, d) inverses of the shrunk correlations
    is_base: bool


class ClassStatistics:
    """Scoring registry over all seen classes.

    Base classes are registered with their own mean and covariance. Few-shot
    classes are added per session, either through the full calibrated
    multi-prototype path or as a plain shot-mean prototype with the raw shot
    covariance (used by the ablation presets). Scoring is read-only.
    """

    def __init__(self, base_means: dict[int, np.ndarray], base_covs: dict[int, np.ndarray],
                 params: CalibrationParams):
        if set(base_means) != set(base_covs):
            raise AnalogyError("base means and covariances must cover the same classes")
        if not base_means:
            raise AnalogyError("need at least one base class")
        self.params = params
        self.base_class_ids = sorted(base_means)
        self._base_mean_matrix = np.stack(
            [np.asarray(base_means[c], dtype=np.float64) for c in self.base_class_ids]
        )
        self._base_cov_stack = np.stack(
            [np.asarray(base_covs[c], dtype=np.float64) for c in self.base_class_ids]
        )
        self.class_order: list[int] = []
        self._entries: dict[int, _ClassEntry] = {}
        for c in self.base_class_ids:
            corr_inv = shrink_and_normalize(base_covs[c], params.gamma)[1]
            self._register(c, np.asarray(base_means[c])[None, :], corr_inv[None, :, :], True)

    @property
    def dim(self) -> int:
        return self._base_mean_matrix.shape[1]

    def _register(self, class_id, centers, inv_corrs, is_base):
        if class_id in self._entries:
            raise AnalogyError(f"class {class_id} already registered")
        self._entries[class_id] = _ClassEntry(centers, inv_corrs, is_base)
        self.class_order.append(class_id)

    def prototype_weights(self, prototype: np.ndarray) -> np.ndarray:
        """Analogy weights of one prototype over the base classes."""
        sims = np.array(
            [similarity(bm, prototype, self.params.tau_cal) for bm in self._base_mean_matrix]
        )
        return analogy_weights(sims)

    def add_new_class(self, class_id: int, shots: np.ndarray) -> np.ndarray:
        """Register a few-shot class through the calibrated multi-prototype path.

        Returns the shift applied to the shot-mean prototype (calibrated minus
        raw), which the voting scorer reuses to move its own inputs.
        """
        prototypes, shot_cov = build_new_class_prototypes(shots)
        centers = np.zeros_like(prototypes)
        inv_corrs = np.zeros((prototypes.shape[0], self.dim, self.dim))
        mean_shift = np.zeros(self.dim)
        for k, proto in enumerate(prototypes):
            weights = self.prototype_weights(proto)
            centers[k] = calibrate_mean(proto, self._base_mean_matrix, weights, self.params.beta)
            cov_hat = calibrate_covariance(shot_cov, self._base_cov_stack, weights, self.params.eta)
            inv_corrs[k] = shrink_and_normalize(cov_hat, self.params.gamma)[1]
            if k == 0:
                mean_shift = centers[0] - proto
        self._register(class_id, centers, inv_corrs, False)
        return mean_shift

    def add_new_class_plain(self, class_id: int, shots: np.ndarray) -> None:
        """Register a few-shot class as one mean prototype, no calibration."""
        prototypes, shot_cov = build_new_class_prototypes(shots)
        corr_inv = shrink_and_normalize(shot_cov, self.params.gamma)[1]
        self._register(class_id, prototypes[:1], corr_inv[None, :, :], False)

    def sa_score(self, x: np.ndarray, class_id: int) -> float:
        """Best prototype score of one class: exp(-distance), in (0, 1]."""
        entry = self._entries[class_id]
        best = min(
            mahalanobis(x, entry.centers[k], entry.inv_corrs[k])
            for k in range(entry.centers.shape[0])
        )
        return float(np.exp(-best))

    def raw_scores(self, x: np.ndarray) -> np.ndarray:
        return np.array([self.sa_score(x, c) for c in self.class_order])

    def sa_score_vector(self, x: np.ndarray) -> tuple[np.ndarray, bool]:
        """Min-max normalized score vector over all seen classes."""
        if len(self.class_order) < 2:
            raise AnalogyError("score normalization needs at least 2 classes")
        return min_max_normalize(self.raw_scores(x))

    def raw_score_matrix(self, x_batch: np.ndarray) -> np.ndarray:
        """Raw scores for a batch, shape (batch, seen classes)."""
        x_batch = np.asarray(x_batch, dtype=np.float64)
        out = np.zeros((x_batch.shape[0], len(self.class_order)))
        for j, c in enumerate(self.class_order):
            entry = self._entries[c]
            dists = np.empty((x_batch.shape[0], entry.centers.shape[0]))
            for k in range(entry.centers.shape[0]):
                delta = x_batch - entry.centers[k]
                dists[:, k] = np.einsum("td,de,te->t", delta, entry.inv_corrs[k], delta)
            out[:, j] = np.exp(-dists.min(axis=1))
        return out

    def score_matrix(self, x_batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-row min-max normalized scores and per-row degeneracy flags."""
        raw = self.raw_score_matrix(x_batch)
        if raw.shape[1] < 2:
            raise AnalogyError("score normalization needs at least 2 classes")
        lo = raw.min(axis=1, keepdims=True)
        hi = raw.max(axis=1, keepdims=True)
        degenerate = (hi == lo).ravel()
        if degenerate.any():
            warnings.warn(
                f"{int(degenerate.sum())} test sample(s) scored identically across classes",
                stacklevel=2,
            )
        span = np.where(hi > lo, hi - lo, 1.0)
        normalized = np.where(hi > lo, (raw - lo) / span, 0.0)
        return normalized, degenerate
