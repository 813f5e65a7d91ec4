"""Hyperspherical embedding math: normalization, directional log-densities,
mixture posteriors, and sample-to-prototype assignment weights.

Log-densities are unnormalized: every consumer here uses ratios in which the
directional normalization constant cancels, so it is never evaluated.
"""

from dataclasses import dataclass

import numpy as np

UNIT_ATOL = 1e-6


class HypersphereError(Exception):
    pass


@dataclass(frozen=True)
class VmfParams:
    """Mean direction and concentration of one directional component."""

    mean: np.ndarray
    concentration: float

    def __post_init__(self):
        if self.concentration < 0:
            raise HypersphereError(f"concentration must be >= 0, got {self.concentration}")
        _check_unit(self.mean, "mean")

    @property
    def temperature(self) -> float:
        """Softmax temperature equivalent, 1/concentration."""
        if self.concentration == 0:
            return float("inf")
        return 1.0 / self.concentration


def normalize(v: np.ndarray) -> np.ndarray:
    """Project a nonzero finite vector onto the unit sphere."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise HypersphereError("cannot normalize a non-finite vector")
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise HypersphereError("cannot normalize the zero vector")
    return v / norm


def normalize_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise ``normalize`` for a batch matrix."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise HypersphereError("cannot normalize non-finite rows")
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise HypersphereError("cannot normalize zero rows")
    return x / norms


def vmf_log_density_unnorm(z: np.ndarray, mean: np.ndarray, concentration: float) -> float:
    """Directional log-density up to its additive normalization constant."""
    if concentration < 0:
        raise HypersphereError(f"concentration must be >= 0, got {concentration}")
    z = _check_unit(z, "z")
    mean = _check_unit(mean, "mean")
    return float(concentration * np.dot(mean, z))


def assignment_weights(z: np.ndarray, prototypes: np.ndarray, tau_a: float) -> np.ndarray:
    """Softmax over cosine similarities of ``z`` to one class's prototypes."""
    z = _check_unit(z, "z")
    return assignment_weights_batch(z[None, :], prototypes, tau_a)[0]


def assignment_weights_batch(z_batch: np.ndarray, prototypes: np.ndarray, tau_a: float) -> np.ndarray:
    """Per-row assignment weights, shape (batch, prototype count)."""
    if tau_a <= 0:
        raise HypersphereError(f"assignment temperature must be > 0, got {tau_a}")
    prototypes = np.asarray(prototypes, dtype=np.float64)
    if prototypes.ndim != 2 or prototypes.shape[0] < 1:
        raise HypersphereError("prototypes must be a nonempty (K, d) matrix")
    scores = np.asarray(z_batch, dtype=np.float64) @ prototypes.T / tau_a
    scores -= scores.max(axis=1, keepdims=True)
    weights = np.exp(scores)
    return weights / weights.sum(axis=1, keepdims=True)


def mixture_class_posterior(z, prototypes_per_class, weights_per_class, tau: float) -> np.ndarray:
    """Class posterior of ``z`` under per-class prototype mixtures.

    Entry ``c`` is the weighted sum of ``exp(<p, z>/tau)`` over class ``c``'s
    prototypes, normalized over every class. Weight vectors must be
    nonnegative and sum to 1 within each class.
    """
    if tau <= 0:
        raise HypersphereError(f"temperature must be > 0, got {tau}")
    if len(prototypes_per_class) == 0:
        raise HypersphereError("need at least one class")
    if len(prototypes_per_class) != len(weights_per_class):
        raise HypersphereError("prototypes and weights must pair up per class")
    z = _check_unit(z, "z")

    scores = []
    log_weights = []
    for prototypes, weights in zip(prototypes_per_class, weights_per_class):
        prototypes = np.asarray(prototypes, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        if prototypes.ndim != 2 or prototypes.shape[0] < 1:
            raise HypersphereError("each class needs a nonempty (K, d) prototype matrix")
        if weights.shape != (prototypes.shape[0],):
            raise HypersphereError("weight vector length must match prototype count")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise HypersphereError("class weights must be nonnegative and sum to 1")
        scores.append(prototypes @ z / tau)
        with np.errstate(divide="ignore"):
            log_weights.append(np.log(weights))

    # One global shift keeps the per-class mass ratios exact.
    shift = max(float(np.max(lw + s)) for lw, s in zip(log_weights, scores) if np.any(np.isfinite(lw + s)))
    masses = np.array(
        [float(np.sum(np.exp(lw + s - shift))) for lw, s in zip(log_weights, scores)]
    )
    return masses / masses.sum()


def _check_unit(v: np.ndarray, label: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise HypersphereError(f"{label} must be a vector")
    norm = np.linalg.norm(v)
    if not np.isfinite(norm) or abs(norm - 1.0) > UNIT_ATOL:
        raise HypersphereError(f"{label} must be unit-norm, got norm {norm!r}")
    return v
