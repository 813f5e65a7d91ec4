"""Base-session adaptation of a bottleneck head over frozen features.

The head is a residual down/up projection pair plus a linear classifier,
trained by seeded mini-batch SGD on a three-part objective: cross-entropy on
the classifier logits, a compactness term tying each embedding to its class's
prototype mixture, and a contrastive term separating prototypes across
classes. Per-class prototype banks are maintained by exponential moving
average inside each step; gradients flow through that update into the batch
embeddings, while the assignment weights themselves are treated as constants.

All gradients are computed analytically (no autodiff); the test suite checks
them against central finite differences.
"""

import json
import math
import struct
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .hypersphere import assignment_weights_batch, normalize, normalize_rows


class AdaptationError(Exception):
    pass


class TrainingDiverged(AdaptationError):
    """Raised when the training loss stops being finite."""


def balance_weights(nbase: int) -> tuple[float, float]:
    """Loss-balance weights from the base-session class count."""
    if nbase < 1:
        raise AdaptationError(f"nbase must be >= 1, got {nbase}")
    w = min(1.0, math.exp(-(20.0 / nbase - 1.0)))
    return w, w


@dataclass
class BottleneckHead:
    """Residual bottleneck adapter plus linear classifier over unit embeddings."""

    w_down: np.ndarray  # (d, r)
    w_up: np.ndarray    # (r, d)
    w_cls: np.ndarray   # (d, n_classes), columns follow class_ids order
    class_ids: tuple[int, ...]
    residual: bool = True
    activation: str = "relu"

    @classmethod
    def initialize(cls, dim: int, class_ids, bottleneck: int | None = None, seed: int = 0):
        class_ids = tuple(sorted(int(c) for c in class_ids))
        r = max(1, dim // 4) if bottleneck is None else int(bottleneck)
        if not 1 <= r < dim:
            raise AdaptationError(f"bottleneck width must be in [1, {dim}), got {r}")
        rng = np.random.default_rng([seed, 101])
        w_down = rng.normal(0.0, math.sqrt(2.0 / dim), size=(dim, r))
        # Zero up-projection makes the initial adapter the identity path.
        w_up = np.zeros((r, dim))
        w_cls = rng.normal(0.0, 0.01, size=(dim, len(class_ids)))
        return cls(w_down, w_up, w_cls, class_ids)

    @property
    def dim(self) -> int:
        return self.w_down.shape[0]

    @property
    def frozen(self) -> bool:
        return not self.w_down.flags.writeable

    def embed(self, x: np.ndarray) -> np.ndarray:
        """Unit-norm embeddings for a batch of raw feature rows."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        pre = self._pre_normalized(x)
        z = normalize_rows(pre)
        return z[0] if squeeze else z

    def logits(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) @ self.w_cls

    def class_positions(self, y) -> np.ndarray:
        """Map raw class ids onto classifier column positions."""
        ids = np.asarray(self.class_ids)
        pos = np.searchsorted(ids, y)
        bad = (pos >= len(ids)) | (ids[np.minimum(pos, len(ids) - 1)] != y)
        if np.any(bad):
            raise AdaptationError(f"labels outside the head's classes: {np.unique(np.asarray(y)[bad])[:8]}")
        return pos

    def freeze(self):
        for a in (self.w_down, self.w_up, self.w_cls):
            a.setflags(write=False)

    def _pre_normalized(self, x: np.ndarray) -> np.ndarray:
        h = _relu(x @ self.w_down)
        up = h @ self.w_up
        return x + up if self.residual else up


def forward_embed(head: BottleneckHead, x: np.ndarray) -> np.ndarray:
    """Embed one raw feature vector onto the unit sphere."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise AdaptationError("forward_embed expects a single vector")
    return head.embed(x)


def _relu(u: np.ndarray) -> np.ndarray:
    return np.maximum(u, 0.0)


@dataclass
class PrototypeBank:
    """Per-class unit-norm prototypes with cumulative assignment mass."""

    class_ids: tuple[int, ...]
    prototypes: list[np.ndarray]  # per class, (K_c, d) unit rows
    masses: list[np.ndarray]      # per class, (K_c,)
    momentum: float = 0.99

    def __post_init__(self):
        if len(self.class_ids) != len(self.prototypes) or len(self.class_ids) != len(self.masses):
            raise AdaptationError("class_ids, prototypes and masses must align")
        for p in self.prototypes:
            norms = np.linalg.norm(p, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise AdaptationError("prototypes must be unit-norm")

    @property
    def counts(self) -> list[int]:
        return [p.shape[0] for p in self.prototypes]

    def stacked(self) -> tuple[np.ndarray, np.ndarray, list[slice]]:
        """Stack prototypes into (M, d) with per-row class positions and class slices."""
        slices = []
        start = 0
        for p in self.prototypes:
            slices.append(slice(start, start + p.shape[0]))
            start += p.shape[0]
        stacked = np.concatenate(self.prototypes, axis=0) if self.prototypes else np.zeros((0, 0))
        class_index = np.concatenate(
            [np.full(p.shape[0], i) for i, p in enumerate(self.prototypes)]
        ) if self.prototypes else np.zeros(0, dtype=int)
        return stacked, class_index, slices

    def class_positions(self, y) -> np.ndarray:
        ids = np.asarray(self.class_ids)
        pos = np.searchsorted(ids, y)
        bad = (pos >= len(ids)) | (ids[np.minimum(pos, len(ids) - 1)] != y)
        if np.any(bad):
            raise AdaptationError(f"labels outside the bank's classes: {np.unique(np.asarray(y)[bad])[:8]}")
        return pos

    def with_prototypes(self, stacked: np.ndarray, new_masses: np.ndarray | None = None) -> "PrototypeBank":
        """Rebuild the bank from a stacked prototype matrix (same layout)."""
        protos = []
        masses = []
        start = 0
        for i, p in enumerate(self.prototypes):
            k = p.shape[0]
            protos.append(stacked[start : start + k].copy())
            masses.append(
                self.masses[i].copy() if new_masses is None else new_masses[start : start + k].copy()
            )
            start += k
        return PrototypeBank(self.class_ids, protos, masses, self.momentum)


def init_prototype_bank(
    z: np.ndarray, y, class_ids, k: int, noise: float = 0.05, seed: int = 0, momentum: float = 0.99
) -> PrototypeBank:
    """Warm-start ``k`` prototypes per class as perturbed normalized class means."""
    if k < 1:
        raise AdaptationError(f"prototypes per class must be >= 1, got {k}")
    class_ids = tuple(sorted(int(c) for c in class_ids))
    y = np.asarray(y)
    rng = np.random.default_rng([seed, 202])
    prototypes = []
    for c in class_ids:
        rows = z[y == c]
        if rows.shape[0] == 0:
            raise AdaptationError(f"class {c} has no embeddings to initialize from")
        center = normalize(rows.mean(axis=0))
        perturbed = center[None, :] + noise * rng.normal(size=(k, z.shape[1]))
        prototypes.append(normalize_rows(perturbed))
    masses = [np.zeros(k) for _ in class_ids]
    return PrototypeBank(class_ids, prototypes, masses, momentum)


def compute_assignments(z: np.ndarray, bank: PrototypeBank, tau_a: float) -> np.ndarray:
    """Per-class softmax assignment weights, stacked to (batch, total prototypes).

    Treated as constants during backpropagation.
    """
    stacked, _, slices = bank.stacked()
    out = np.zeros((z.shape[0], stacked.shape[0]))
    for sl in slices:
        out[:, sl] = assignment_weights_batch(z, stacked[sl], tau_a)
    return out


# ---------------------------------------------------------------------------
# Loss terms. Each *_grad variant returns the value together with analytic
# gradients with respect to its direct inputs.
# ---------------------------------------------------------------------------

def loss_ce(logits: np.ndarray, y_pos) -> float:
    return _ce_grad(np.asarray(logits, dtype=np.float64), np.asarray(y_pos))[0]


def _ce_grad(logits: np.ndarray, y_pos: np.ndarray) -> tuple[float, np.ndarray]:
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    value = float(np.mean(log_norm - shifted[np.arange(n), y_pos]))
    probs = np.exp(shifted - log_norm[:, None])
    probs[np.arange(n), y_pos] -= 1.0
    return value, probs / n


def loss_compact(z: np.ndarray, y, bank: PrototypeBank, assignments: np.ndarray, tau: float) -> float:
    stacked, class_index, _ = bank.stacked()
    y_pos = bank.class_positions(y)
    return _compact_grad(np.asarray(z, dtype=np.float64), y_pos, stacked, class_index, assignments, tau)[0]


def _compact_grad(z, y_pos, protos, class_index, assignments, tau):
    """Negative log ratio of same-class to all-class weighted vMF mass.

    Returns ``(value, d/dz, d/dprotos)``. The stability shift cancels in the
    log ratio, so subtracting the per-row max is exact.
    """
    if tau <= 0:
        raise AdaptationError(f"temperature must be > 0, got {tau}")
    scores = z @ protos.T / tau
    shift = scores.max(axis=1, keepdims=True)
    mass = np.exp(scores - shift) * assignments
    total = mass.sum(axis=1)
    same = class_index[None, :] == y_pos[:, None]
    own = np.where(same, mass, 0.0).sum(axis=1)
    n = z.shape[0]
    value = float(np.mean(np.log(total) - np.log(own)))
    d_scores = (mass / total[:, None] - np.where(same, mass, 0.0) / own[:, None]) / n
    return value, d_scores @ protos / tau, d_scores.T @ z / tau


def loss_proto_contrastive(bank: PrototypeBank, tau: float) -> float:
    stacked, class_index, _ = bank.stacked()
    return _contra_grad(stacked, class_index, tau)[0]


def _contra_grad(protos, class_index, tau):
    """Prototype-level contrast: same-class mass over other-class mass per anchor.

    Anchors without a same-class sibling or without any other class are
    undefined under the ratio and contribute zero. Returns ``(value, d/dprotos)``.
    """
    if tau <= 0:
        raise AdaptationError(f"temperature must be > 0, got {tau}")
    m = protos.shape[0]
    sims = protos @ protos.T / tau
    same = class_index[:, None] == class_index[None, :]
    anchor_mask = np.eye(m, dtype=bool)
    num_mask = same & ~anchor_mask
    den_mask = ~same
    active = num_mask.any(axis=1) & den_mask.any(axis=1)
    if not np.any(active):
        warnings.warn(
            "prototype contrast needs >= 2 prototypes per class and >= 2 classes; "
            "contributing 0",
            stacklevel=3,
        )
        return 0.0, np.zeros_like(protos)

    shift = sims.max(axis=1, keepdims=True)
    mass = np.exp(sims - shift)
    num = np.where(num_mask, mass, 0.0).sum(axis=1)
    den = np.where(den_mask, mass, 0.0).sum(axis=1)
    per_anchor = np.zeros(m)
    per_anchor[active] = np.log(den[active]) - np.log(num[active])
    value = float(per_anchor.sum() / m)

    grad_sims = np.zeros((m, m))
    rows = np.flatnonzero(active)
    grad_sims[rows] = (
        np.where(den_mask[rows], mass[rows], 0.0) / den[rows, None]
        - np.where(num_mask[rows], mass[rows], 0.0) / num[rows, None]
    ) / m
    return value, (grad_sims + grad_sims.T) @ protos / tau


def loss_total(
    head: BottleneckHead,
    x: np.ndarray,
    y,
    bank: PrototypeBank,
    alpha: float,
    lam: float,
    tau: float,
    tau_a: float,
) -> float:
    """Full objective on a batch: cross-entropy + alpha*compact + lam*contrast."""
    z = head.embed(x)
    y_pos = head.class_positions(y)
    assignments = compute_assignments(z, bank, tau_a)
    stacked, class_index, _ = bank.stacked()
    ce = loss_ce(head.logits(z), y_pos)
    com = _compact_grad(z, bank.class_positions(y), stacked, class_index, assignments, tau)[0]
    contra = _contra_grad(stacked, class_index, tau)[0]
    return ce + alpha * com + lam * contra


# ---------------------------------------------------------------------------
# EMA prototype update, with a backward pass for the training step.
# ---------------------------------------------------------------------------

def _ema_candidate(protos, slices, z, y_pos, assignments, momentum):
    """Blend prototypes toward assignment-weighted batch means, renormalized.

    Prototypes of classes absent from the batch stay unchanged. Returns the
    updated stack, the per-prototype batch mass, and a cache for backward.
    """
    if not 0.0 <= momentum < 1.0:
        raise AdaptationError(f"EMA momentum must be in [0, 1), got {momentum}")
    updated = protos.copy()
    col_mass = np.zeros(protos.shape[0])
    cache = []
    for cpos, sl in enumerate(slices):
        rows = np.flatnonzero(y_pos == cpos)
        if rows.size == 0:
            continue
        block = assignments[np.ix_(rows, np.arange(sl.start, sl.stop))]
        weight_sum = block.sum(axis=0)
        col_mass[sl] = weight_sum
        mean = (block.T @ z[rows]) / weight_sum[:, None]
        blended = momentum * protos[sl] + (1.0 - momentum) * mean
        norms = np.linalg.norm(blended, axis=1)
        if np.any(norms == 0.0):
            raise AdaptationError("EMA update collapsed a prototype to zero")
        updated[sl] = blended / norms[:, None]
        cache.append((sl, rows, block, weight_sum, norms, updated[sl].copy()))
    return updated, col_mass, cache


def _ema_backward(cache, d_updated, momentum, z_shape):
    dz = np.zeros(z_shape)
    for sl, rows, block, weight_sum, norms, unit in cache:
        grad = d_updated[sl]
        dots = np.sum(unit * grad, axis=1, keepdims=True)
        d_blended = (grad - unit * dots) / norms[:, None]
        d_mean = (1.0 - momentum) * d_blended
        dz[rows] += (block / weight_sum[None, :]) @ d_mean
    return dz


def update_prototypes_ema(
    bank: PrototypeBank, z: np.ndarray, y, assignments: np.ndarray, momentum: float
) -> PrototypeBank:
    """One EMA step of the bank from a batch; accumulates assignment mass."""
    protos, _, slices = bank.stacked()
    y_pos = bank.class_positions(y)
    updated, col_mass, _ = _ema_candidate(
        protos, slices, np.asarray(z, dtype=np.float64), y_pos, assignments, momentum
    )
    old_mass = np.concatenate(bank.masses) if bank.masses else np.zeros(0)
    return bank.with_prototypes(updated, old_mass + col_mass)


def prune_prototypes(bank: PrototypeBank, mass_threshold: float) -> PrototypeBank:
    """Drop prototypes whose within-class mass fraction is below the threshold.

    The highest-mass prototype of each class always survives.
    """
    if mass_threshold < 0:
        raise AdaptationError(f"mass threshold must be >= 0, got {mass_threshold}")
    protos = []
    masses = []
    for p, mass in zip(bank.prototypes, bank.masses):
        total = mass.sum()
        if total <= 0:
            keep = np.arange(p.shape[0])
        else:
            keep = np.flatnonzero(mass / total >= mass_threshold)
            if keep.size == 0:
                keep = np.array([int(np.argmax(mass))])
        protos.append(p[keep].copy())
        masses.append(mass[keep].copy())
    return PrototypeBank(bank.class_ids, protos, masses, bank.momentum)


# ---------------------------------------------------------------------------
# Training.
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 0.01
    sgd_momentum: float = 0.9
    alpha: float | None = None  # None: derived from the base class count
    lam: float | None = None
    tau: float = 0.1
    tau_a: float = 0.1
    prototypes_per_class: int = 4
    ema_momentum: float = 0.99
    bottleneck: int | None = None
    proto_init_noise: float = 0.05
    prune_threshold: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise AdaptationError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise AdaptationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise AdaptationError(f"lr must be > 0, got {self.lr}")
        if not 0 <= self.sgd_momentum < 1:
            raise AdaptationError(f"sgd_momentum must be in [0, 1), got {self.sgd_momentum}")
        for name in ("alpha", "lam"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise AdaptationError(f"{name} must be >= 0, got {v}")
        if self.tau <= 0 or self.tau_a <= 0:
            raise AdaptationError("temperatures must be > 0")
        if self.prototypes_per_class < 1:
            raise AdaptationError("prototypes_per_class must be >= 1")
        if not 0 <= self.ema_momentum < 1:
            raise AdaptationError("ema_momentum must be in [0, 1)")
        if self.prune_threshold < 0:
            raise AdaptationError("prune_threshold must be >= 0")


def step_objective(head, x, y_pos, bank, assignments, alpha, lam, tau, momentum):
    """Loss and analytic parameter gradients for one training step.

    The compact and contrastive terms are evaluated on the EMA-updated
    prototype candidates so their gradients reach the head through the batch
    embeddings; ``assignments`` is held constant throughout.
    """
    x = np.asarray(x, dtype=np.float64)
    pre_act = x @ head.w_down
    hidden = _relu(pre_act)
    pre_norm = x + hidden @ head.w_up if head.residual else hidden @ head.w_up
    norms = np.linalg.norm(pre_norm, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise AdaptationError("zero pre-normalization embedding in batch")
    z = pre_norm / norms

    logits = z @ head.w_cls
    ce, d_logits = _ce_grad(logits, y_pos)

    protos, class_index, slices = bank.stacked()
    updated, col_mass, cache = _ema_candidate(protos, slices, z, y_pos, assignments, momentum)
    com, dz_com, dp_com = _compact_grad(z, y_pos, updated, class_index, assignments, tau)
    contra, dp_contra = _contra_grad(updated, class_index, tau)

    loss = ce + alpha * com + lam * contra
    d_updated = alpha * dp_com + lam * dp_contra
    dz = d_logits @ head.w_cls.T + alpha * dz_com
    dz += _ema_backward(cache, d_updated, momentum, z.shape)

    d_w_cls = z.T @ d_logits
    d_pre_norm = (dz - z * np.sum(z * dz, axis=1, keepdims=True)) / norms
    d_w_up = hidden.T @ d_pre_norm
    d_hidden = d_pre_norm @ head.w_up.T
    d_pre_act = d_hidden * (pre_act > 0)
    d_w_down = x.T @ d_pre_act

    grads = {"w_down": d_w_down, "w_up": d_w_up, "w_cls": d_w_cls}
    parts = {"ce": ce, "compact": com, "contrastive": contra}
    return loss, grads, parts, updated, col_mass


def train_base_session(x: np.ndarray, y, config: TrainConfig) -> tuple[BottleneckHead, PrototypeBank]:
    """Optimize the head on the base session; returns it frozen with its bank.

    Deterministic for a fixed seed: one generator drives initialization and
    the per-epoch shuffles, batches are processed in order, and the learning
    rate follows a per-epoch cosine decay from ``config.lr`` to 0.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or x.shape[0] == 0:
        raise AdaptationError("base session needs a nonempty (N, d) feature matrix")
    class_ids = tuple(sorted(int(c) for c in np.unique(y)))
    alpha, lam = config.alpha, config.lam
    if alpha is None or lam is None:
        auto_alpha, auto_lam = balance_weights(len(class_ids))
        alpha = auto_alpha if alpha is None else alpha
        lam = auto_lam if lam is None else lam

    head = BottleneckHead.initialize(x.shape[1], class_ids, config.bottleneck, config.seed)
    z0 = head.embed(x)
    bank = init_prototype_bank(
        z0, y, class_ids, config.prototypes_per_class,
        noise=config.proto_init_noise, seed=config.seed, momentum=config.ema_momentum,
    )
    if config.epochs == 0:
        head.freeze()
        return head, bank

    y_pos = head.class_positions(y)
    rng = np.random.default_rng([config.seed, 303])
    velocity = {name: np.zeros_like(getattr(head, name)) for name in ("w_down", "w_up", "w_cls")}
    n = x.shape[0]
    for epoch in range(config.epochs):
        lr = 0.5 * config.lr * (1.0 + math.cos(math.pi * epoch / config.epochs))
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = x[idx], y_pos[idx]
            zb = head.embed(xb)
            assignments = compute_assignments(zb, bank, config.tau_a)
            loss, grads, parts, updated, col_mass = step_objective(
                head, xb, yb, bank, assignments, alpha, lam, config.tau, config.ema_momentum
            )
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch offset {start}: {parts}"
                )
            for name in velocity:
                velocity[name] = config.sgd_momentum * velocity[name] - lr * grads[name]
                setattr(head, name, getattr(head, name) + velocity[name])
            old_mass = np.concatenate(bank.masses)
            bank = bank.with_prototypes(updated, old_mass + col_mass)

    if config.prune_threshold > 0:
        bank = prune_prototypes(bank, config.prune_threshold)
    head.freeze()
    return head, bank


# ---------------------------------------------------------------------------
# Post-training extraction.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeanPrototype:
    """Per-class mean embedding, kept both raw and renormalized."""

    raw: np.ndarray
    unit: np.ndarray


def extract_base_prototypes(z: np.ndarray, y, class_ids=None) -> dict[int, MeanPrototype]:
    """Per-class arithmetic mean of embeddings, raw and unit-normalized."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y)
    wanted = sorted(int(c) for c in np.unique(y)) if class_ids is None else sorted(class_ids)
    out = {}
    for c in wanted:
        rows = z[y == c]
        if rows.shape[0] == 0:
            raise AdaptationError(f"class {c} has no embeddings")
        mean = rows.mean(axis=0)
        out[c] = MeanPrototype(raw=mean, unit=normalize(mean))
    return out


def extract_base_covariances(z: np.ndarray, y, class_ids=None) -> dict[int, np.ndarray]:
    """Per-class unbiased covariance of embeddings; zero (with warning) for singletons."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y)
    wanted = sorted(int(c) for c in np.unique(y)) if class_ids is None else sorted(class_ids)
    out = {}
    for c in wanted:
        rows = z[y == c]
        if rows.shape[0] == 0:
            raise AdaptationError(f"class {c} has no embeddings")
        if rows.shape[0] == 1:
            warnings.warn(f"class {c} has a single sample; covariance set to zero", stacklevel=2)
            out[c] = np.zeros((z.shape[1], z.shape[1]))
            continue
        centered = rows - rows.mean(axis=0)
        cov = centered.T @ centered / (rows.shape[0] - 1)
        out[c] = (cov + cov.T) / 2.0
    return out


# ---------------------------------------------------------------------------
# Checkpoint format: magic + version + JSON metadata + raw float64 arrays.
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"BPCK"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sHI")


def save_checkpoint(path, head: BottleneckHead, bank: PrototypeBank, config_hash: str = "") -> None:
    meta = {
        "dim": head.dim,
        "bottleneck": head.w_down.shape[1],
        "class_ids": list(head.class_ids),
        "residual": head.residual,
        "activation": head.activation,
        "bank_class_ids": list(bank.class_ids),
        "bank_counts": bank.counts,
        "ema_momentum": bank.momentum,
        "config_hash": config_hash,
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    stacked, _, _ = bank.stacked()
    arrays = [head.w_down, head.w_up, head.w_cls, stacked, np.concatenate(bank.masses)]
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype=np.float64).tobytes())


def load_checkpoint(path) -> tuple[BottleneckHead, PrototypeBank, str]:
    with open(path, "rb") as fh:
        header = fh.read(_CKPT_HEADER.size)
        if len(header) < _CKPT_HEADER.size:
            raise AdaptationError(f"checkpoint too short: {path}")
        magic, version, meta_len = _CKPT_HEADER.unpack(header)
        if magic != CHECKPOINT_MAGIC:
            raise AdaptationError(f"bad checkpoint magic {magic!r}: {path}")
        if version != CHECKPOINT_VERSION:
            raise AdaptationError(f"unsupported checkpoint version {version}: {path}")
        meta = json.loads(fh.read(meta_len).decode())
        payload = fh.read()

    dim = meta["dim"]
    r = meta["bottleneck"]
    n_cls = len(meta["class_ids"])
    counts = meta["bank_counts"]
    total = sum(counts)
    sizes = [dim * r, r * dim, dim * n_cls, total * dim, total]
    if len(payload) != 8 * sum(sizes):
        raise AdaptationError(f"checkpoint payload size mismatch: {path}")
    flat = np.frombuffer(payload, dtype="<f8")
    chunks = np.split(flat, np.cumsum(sizes)[:-1])
    head = BottleneckHead(
        w_down=chunks[0].reshape(dim, r).copy(),
        w_up=chunks[1].reshape(r, dim).copy(),
        w_cls=chunks[2].reshape(dim, n_cls).copy(),
        class_ids=tuple(meta["class_ids"]),
        residual=meta["residual"],
        activation=meta["activation"],
    )
    head.freeze()
    stacked = chunks[3].reshape(total, dim)
    masses = chunks[4]
    protos, mass_list = [], []
    start = 0
    for k in counts:
        protos.append(stacked[start : start + k].copy())
        mass_list.append(masses[start : start + k].copy())
        start += k
    bank = PrototypeBank(tuple(meta["bank_class_ids"]), protos, mass_list, meta["ema_momentum"])
    return head, bank, meta.get("config_hash", "")
