"""Synthetic embedding datasets: Gaussian clusters around directions on a sphere.

Class centers are grouped into a small number of families so that related
classes share direction and noise shape, and an optional nuisance subspace
carries class-independent high-variance noise. Families give the calibration
stages something real to transfer at desk scale, and the nuisance subspace
gives base-session adaptation something real to suppress, while everything
stays fully seeded.
"""

import numpy as np

from .store import SPLIT_TEST, SPLIT_TRAIN, EmbeddingDataset


def make_synthetic_dataset(
    classes: int = 20,
    dim: int = 16,
    train_per_class: int = 100,
    test_per_class: int = 40,
    separation: float = 6.0,
    families: int = 5,
    family_spread: float = 0.2,
    modes_per_class: int = 2,
    mode_spread: float = 2.5,
    noise: float = 0.5,
    nuisance_dims: int = 6,
    nuisance_scale: float = 4.0,
    seed: int = 0,
) -> EmbeddingDataset:
    """Generate raw (unnormalized) embeddings for ``classes`` separable clusters.

    ``separation`` scales the cluster-center radius relative to the per-axis
    ``noise``; ``families`` groups classes around shared directions with
    shared anisotropic noise scales; ``family_spread`` controls how far class
    centers wander from their family direction. Each class is a mixture of
    ``modes_per_class`` sub-clusters offset by ``mode_spread``, so classes can
    carry internal structure. Class centers live in the first
    ``dim - nuisance_dims`` coordinates; the remaining coordinates carry
    zero-mean noise with standard deviation ``nuisance_scale`` for every
    class.
    """
    if classes < 2 or dim < 2:
        raise ValueError("need at least 2 classes and 2 dimensions")
    if families < 1 or families > classes:
        raise ValueError(f"families must be in [1, {classes}], got {families}")
    if separation <= 0 or train_per_class < 1 or test_per_class < 1:
        raise ValueError("separation and per-class counts must be positive")
    if modes_per_class < 1 or mode_spread < 0 or noise <= 0:
        raise ValueError("modes_per_class must be >= 1, mode_spread >= 0, noise > 0")
    if not 0 <= nuisance_dims < dim:
        raise ValueError(f"nuisance_dims must be in [0, {dim}), got {nuisance_dims}")
    if nuisance_scale < 0:
        raise ValueError(f"nuisance_scale must be >= 0, got {nuisance_scale}")

    signal_dim = dim - nuisance_dims
    rng = np.random.default_rng(seed)
    family_dirs = rng.normal(size=(families, signal_dim))
    family_dirs /= np.linalg.norm(family_dirs, axis=1, keepdims=True)
    # Per-family anisotropic noise scales on the signal coordinates, shared
    # by member classes.
    family_scales = noise * rng.uniform(0.5, 1.5, size=(families, signal_dim))

    vectors = []
    class_ids = []
    splits = []
    for c in range(classes):
        fam = c % families
        center = family_dirs[fam] + family_spread * rng.normal(size=signal_dim)
        center *= separation / np.linalg.norm(center)
        mode_offsets = mode_spread * rng.normal(size=(modes_per_class, signal_dim))
        mode_offsets -= mode_offsets.mean(axis=0)  # keep the class mean at the center
        n = train_per_class + test_per_class
        picks = rng.integers(0, modes_per_class, size=n)
        signal = center + mode_offsets[picks] + family_scales[fam] * rng.normal(size=(n, signal_dim))
        if nuisance_dims:
            nuisance = nuisance_scale * rng.normal(size=(n, nuisance_dims))
            samples = np.hstack([signal, nuisance])
        else:
            samples = signal
        vectors.append(samples.astype(np.float32))
        class_ids.append(np.full(n, c, dtype=np.uint32))
        splits.append(
            np.concatenate(
                [
                    np.full(train_per_class, SPLIT_TRAIN, dtype=np.uint8),
                    np.full(test_per_class, SPLIT_TEST, dtype=np.uint8),
                ]
            )
        )
    return EmbeddingDataset(
        np.concatenate(vectors), np.concatenate(class_ids), np.concatenate(splits)
    )
