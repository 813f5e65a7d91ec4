"""Incremental protocol harness: soft voting, the pluggable second scorer,
session execution, and accuracy metrics.

Each run adapts (or skips adapting) the embedding head on session 0, freezes
it, then walks the remaining sessions: sample the shots, register the new
classes' statistics, score the cumulative test set, and record accuracy over
all classes seen so far. Component toggles reproduce the ablation presets.
"""

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import adaptation, analogy, store
from .hypersphere import normalize_rows


class ProtocolError(Exception):
    pass


class OtsScorer(Protocol):
    """Second-opinion scorer joining the soft vote."""

    def fit_base(self, z: np.ndarray, y: np.ndarray) -> None: ...
    def fit_increment(self, z: np.ndarray, y: np.ndarray) -> None: ...
    def score_matrix(self, z: np.ndarray) -> np.ndarray: ...
    @property
    def seen_classes(self) -> list[int]: ...


class RandomProjectionScorer:
    """Ridge readout over a frozen random projection with ReLU features.

    Fitting accumulates a Gram matrix and per-class targets, so batch order
    does not matter; the readout is re-solved on demand.
    """

    def __init__(self, dim_in: int, dim_proj: int = 2048, ridge: float = 1.0, seed: int = 0):
        if dim_proj < dim_in:
            raise ProtocolError(f"projection dim {dim_proj} must be >= input dim {dim_in}")
        if ridge < 0:
            raise ProtocolError(f"ridge must be >= 0, got {ridge}")
        rng = np.random.default_rng([seed, 404])
        self.projection = rng.normal(size=(dim_in, dim_proj))
        self.ridge = ridge
        self.gram = np.zeros((dim_proj, dim_proj))
        self.targets = np.zeros((dim_proj, 0))
        self._class_ids: list[int] = []
        self._readout: np.ndarray | None = None

    @property
    def seen_classes(self) -> list[int]:
        return list(self._class_ids)

    def _features(self, z: np.ndarray) -> np.ndarray:
        return np.maximum(np.asarray(z, dtype=np.float64) @ self.projection, 0.0)

    def _ensure_classes(self, y: np.ndarray):
        for c in sorted(int(v) for v in np.unique(y)):
            if c not in self._class_ids:
                self._class_ids.append(c)
                self.targets = np.hstack([self.targets, np.zeros((self.targets.shape[0], 1))])

    def _fit(self, z: np.ndarray, y: np.ndarray):
        self._ensure_classes(y)
        h = self._features(z)
        self.gram += h.T @ h
        col = {c: j for j, c in enumerate(self._class_ids)}
        onehot = np.zeros((h.shape[0], len(self._class_ids)))
        for i, label in enumerate(np.asarray(y)):
            onehot[i, col[int(label)]] = 1.0
        self.targets += h.T @ onehot
        self._readout = None

    fit_base = _fit
    fit_increment = _fit

    def readout(self) -> np.ndarray:
        if self._readout is None:
            system = self.gram + self.ridge * np.eye(self.gram.shape[0])
            try:
                self._readout = np.linalg.solve(system, self.targets)
            except np.linalg.LinAlgError as exc:
                raise ProtocolError(f"singular ridge system (ridge={self.ridge}): {exc}") from exc
        return self._readout

    def score_matrix(self, z: np.ndarray) -> np.ndarray:
        """Per-row min-max normalized class scores in [0, 1]."""
        logits = self._features(z) @ self.readout()
        lo = logits.min(axis=1, keepdims=True)
        hi = logits.max(axis=1, keepdims=True)
        span = np.where(hi > lo, hi - lo, 1.0)
        return np.where(hi > lo, (logits - lo) / span, 0.0)


def soft_vote(s_sa: np.ndarray, s_ots: np.ndarray, weight: float = 1.0) -> np.ndarray:
    """Elementwise sum of the two normalized score vectors."""
    s_sa = np.asarray(s_sa, dtype=np.float64)
    s_ots = np.asarray(s_ots, dtype=np.float64)
    if s_sa.shape != s_ots.shape:
        raise ProtocolError(f"score shapes disagree: {s_sa.shape} vs {s_ots.shape}")
    return s_sa + weight * s_ots

def predict(scores: np.ndarray) -> int:
    """Index of the highest score; ties break toward the lowest index."""
    scores = np.asarray(scores)
    if scores.size == 0:
        raise ProtocolError("cannot predict from an empty score vector")
    return int(np.argmax(scores))


@dataclass
class SessionResult:
    """Per-session accuracies plus everything needed to recompute them."""

    session_accuracies: list[float]            # percent, cumulative test set
    seen_class_lists: list[list[int]]
    true_labels: list[np.ndarray]              # per session, cumulative test set
    predicted_labels: list[np.ndarray]
    confusions: list[dict[tuple[int, int], int]] = field(default_factory=list)

    @property
    def a_last(self) -> float:
        return self.session_accuracies[-1]

    @property
    def a_inc(self) -> float:
        return float(np.mean(self.session_accuracies))


def macro_metrics(results) -> tuple[float, float]:
    """Arithmetic means of (A_last, A_inc) pairs across datasets."""
    pairs = [
        (r.a_last, r.a_inc) if isinstance(r, SessionResult) else (float(r[0]), float(r[1]))
        for r in results
    ]
    if not pairs:
        raise ProtocolError("need at least one result")
    arr = np.asarray(pairs, dtype=np.float64)
    return float(arr[:, 0].mean()), float(arr[:, 1].mean())


@dataclass
class ProtocolConfig:
    """Everything run_protocol needs besides the data and the plan."""

    train: adaptation.TrainConfig
    calibration: analogy.CalibrationParams
    mop_training: bool = True       # adapt the head with the mixture losses
    calibrated_mop: bool = True     # multi-prototype + calibrated statistics
    soft_voting: bool = True        # add the projection scorer's vote
    vote_weight: float = 1.0
    projection_dim: int = 2048
    ridge: float = 1.0
    seed: int = 0


PRESETS = {
    "B1": dict(mop_training=False, calibrated_mop=False, soft_voting=False),
    "B2": dict(mop_training=True, calibrated_mop=False, soft_voting=False),
    "B3": dict(mop_training=True, calibrated_mop=True, soft_voting=False),
    "B4": dict(mop_training=True, calibrated_mop=True, soft_voting=True),
}


def run_protocol(
    dataset: store.EmbeddingDataset,
    plan: store.SessionPlan,
    config: ProtocolConfig,
    trained: tuple[adaptation.BottleneckHead, adaptation.PrototypeBank] | None = None,
    on_session=None,
) -> SessionResult:
    """Execute the full incremental protocol and return per-session results.

    ``trained`` short-circuits base-session training with a prior checkpoint
    (only meaningful when ``mop_training`` is on). ``on_session`` is called
    with ``(session_index, seen_class_count, accuracy_pct)`` after each
    session, letting callers persist partial results.
    """
    plan_classes = plan.all_classes()
    data_classes = {int(c) for c in np.unique(dataset.class_ids)}
    if not plan_classes <= data_classes:
        raise ProtocolError(f"plan references unknown classes: {sorted(plan_classes - data_classes)[:8]}")

    base = store.sample_session_data(plan, 0, dataset, config.seed)
    if config.mop_training:
        if trained is None:
            head, _bank = adaptation.train_base_session(base.vectors, base.class_ids, config.train)
        else:
            head, _bank = trained
        embed = head.embed
    else:
        embed = normalize_rows

    # The head is frozen from here on; embed everything once.
    z_all = embed(dataset.vectors)
    test_mask = dataset.split_mask(store.SPLIT_TEST)

    base_z = z_all[_indices_of(dataset, plan.sessions[0], train=True)]
    base_y = dataset.class_ids[_indices_of(dataset, plan.sessions[0], train=True)]
    means = adaptation.extract_base_prototypes(base_z, base_y, plan.sessions[0])
    covs = adaptation.extract_base_covariances(base_z, base_y, plan.sessions[0])
    stats = analogy.ClassStatistics(
        {c: m.raw for c, m in means.items()}, covs, config.calibration
    )

    voter = None
    if config.soft_voting:
        voter = RandomProjectionScorer(
            dataset.dim, config.projection_dim, config.ridge, config.seed
        )
        voter.fit_base(base_z, base_y)

    accuracies: list[float] = []
    seen_lists: list[list[int]] = []
    trues: list[np.ndarray] = []
    preds: list[np.ndarray] = []
    confusions: list[dict[tuple[int, int], int]] = []

    for t in range(plan.session_count):
        if t > 0:
            shots_set = store.sample_session_data(plan, t, dataset, config.seed)
            shot_z = embed(shots_set.vectors)
            for c in plan.sessions[t]:
                rows = shot_z[shots_set.class_ids == c]
                if config.calibrated_mop:
                    shift = stats.add_new_class(c, rows)
                    if voter is not None:
                        voter.fit_increment(rows + shift, np.full(rows.shape[0], c))
                else:
                    stats.add_new_class_plain(c, rows)
                    if voter is not None:
                        voter.fit_increment(rows, np.full(rows.shape[0], c))

        seen = plan.seen_classes(t)
        cum_idx = np.flatnonzero(
            test_mask & np.isin(dataset.class_ids, np.asarray(seen, dtype=np.uint32))
        )
        zt = z_all[cum_idx]
        yt = dataset.class_ids[cum_idx].astype(np.int64)

        s_sa, _degenerate = stats.score_matrix(zt)
        if voter is not None:
            s_total = soft_vote(s_sa, voter.score_matrix(zt), config.vote_weight)
        else:
            s_total = s_sa
        order = np.asarray(stats.class_order)
        yp = order[np.argmax(s_total, axis=1)]

        accuracies.append(float(np.mean(yp == yt) * 100.0))
        seen_lists.append(list(seen))
        trues.append(yt)
        preds.append(yp)
        confusion: dict[tuple[int, int], int] = {}
        for a, b in zip(yt, yp):
            confusion[(int(a), int(b))] = confusion.get((int(a), int(b)), 0) + 1
        confusions.append(confusion)
        if on_session is not None:
            on_session(t, len(seen), accuracies[-1])

    return SessionResult(accuracies, seen_lists, trues, preds, confusions)


def _indices_of(dataset: store.EmbeddingDataset, classes, train: bool) -> np.ndarray:
    mask = dataset.split_mask(store.SPLIT_TRAIN if train else store.SPLIT_TEST)
    mask &= np.isin(dataset.class_ids, np.asarray(tuple(classes), dtype=np.uint32))
    return np.flatnonzero(mask)
