"""Embedding file I/O, dataset manifests, and incremental session plans.

The on-disk format is a little-endian binary file: magic ``BAMP`` (4 bytes),
format version u16, feature dimension u32, record count u64, followed by one
record per embedding: class id u32, split u8 (0=train, 1=test), then the
feature vector as ``d`` float32 values. Vectors are stored raw (unnormalized);
normalization is the consumer's job.
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"BAMP"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIQ")

SPLIT_TRAIN = 0
SPLIT_TEST = 1


class StoreError(Exception):
    """Malformed embedding file or inconsistent record set."""


@dataclass(frozen=True)
class LabeledEmbedding:
    """One feature vector with its class id and train/test split tag."""

    vector: np.ndarray
    class_id: int
    split: int

    def __post_init__(self):
        if self.split not in (SPLIT_TRAIN, SPLIT_TEST):
            raise StoreError(f"split must be 0 (train) or 1 (test), got {self.split}")
        if self.class_id < 0:
            raise StoreError(f"class_id must be nonnegative, got {self.class_id}")


class EmbeddingDataset:
    """Column-oriented record set; iterates as ``LabeledEmbedding`` items."""

    def __init__(self, vectors: np.ndarray, class_ids: np.ndarray, splits: np.ndarray):
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise StoreError("vectors must be a 2-d array (records x dim)")
        n = vectors.shape[0]
        class_ids = np.asarray(class_ids, dtype=np.uint32)
        splits = np.asarray(splits, dtype=np.uint8)
        if class_ids.shape != (n,) or splits.shape != (n,):
            raise StoreError("class_ids and splits must match the record count")
        self.vectors = vectors
        self.class_ids = class_ids
        self.splits = splits

    @classmethod
    def from_records(cls, records) -> "EmbeddingDataset":
        records = list(records)
        if not records:
            return cls(np.zeros((0, 0), dtype=np.float32), np.zeros(0), np.zeros(0))
        dims = {np.asarray(r.vector).shape for r in records}
        if len(dims) != 1 or len(next(iter(dims))) != 1:
            raise StoreError(f"records must share one vector dimension, saw shapes {sorted(dims)}")
        vectors = np.stack([np.asarray(r.vector, dtype=np.float32) for r in records])
        class_ids = np.array([r.class_id for r in records], dtype=np.uint32)
        splits = np.array([r.split for r in records], dtype=np.uint8)
        return cls(vectors, class_ids, splits)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def __getitem__(self, i: int) -> LabeledEmbedding:
        return LabeledEmbedding(self.vectors[i], int(self.class_ids[i]), int(self.splits[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def subset(self, indices) -> "EmbeddingDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return EmbeddingDataset(self.vectors[idx], self.class_ids[idx], self.splits[idx])

    def split_mask(self, split: int) -> np.ndarray:
        return self.splits == split


@dataclass
class DatasetManifest:
    """Per-class record counts for one embedding file."""

    name: str
    dim: int
    class_count: int
    train_counts: dict[int, int]
    test_counts: dict[int, int]

    @classmethod
    def from_dataset(cls, dataset: EmbeddingDataset, name: str) -> "DatasetManifest":
        classes = sorted(int(c) for c in np.unique(dataset.class_ids))
        train_counts = {}
        test_counts = {}
        for c in classes:
            mask = dataset.class_ids == c
            train_counts[c] = int(np.sum(mask & (dataset.splits == SPLIT_TRAIN)))
            test_counts[c] = int(np.sum(mask & (dataset.splits == SPLIT_TEST)))
        return cls(name, dataset.dim, len(classes), train_counts, test_counts)

    @property
    def class_ids(self) -> list[int]:
        return sorted(self.train_counts)

    def validate(self):
        """Check the invariants required before a protocol run."""
        if self.class_count < 2:
            raise StoreError(f"need at least 2 classes, manifest has {self.class_count}")
        missing_test = [c for c in self.class_ids if self.test_counts.get(c, 0) < 1]
        if missing_test:
            raise StoreError(f"classes without test samples: {missing_test[:8]}")
        missing_train = [c for c in self.class_ids if self.train_counts.get(c, 0) < 1]
        if missing_train:
            raise StoreError(f"classes without train samples: {missing_train[:8]}")


def write_embeddings(records, path) -> None:
    """Write records to ``path`` in the binary embedding format."""
    dataset = records if isinstance(records, EmbeddingDataset) else EmbeddingDataset.from_records(records)
    if len(dataset) and not np.all(np.isfinite(dataset.vectors)):
        raise StoreError("refusing to write non-finite vector entries")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, dataset.dim, len(dataset)))
        if len(dataset):
            rec = np.empty(len(dataset), dtype=_record_dtype(dataset.dim))
            rec["class_id"] = dataset.class_ids
            rec["split"] = dataset.splits
            rec["vector"] = dataset.vectors
            fh.write(rec.tobytes())


def load_embeddings(path) -> tuple[DatasetManifest, EmbeddingDataset]:
    """Load an embedding file, validating the header and every record."""
    path = Path(path)
    if not path.is_file():
        raise StoreError(f"no such embedding file: {path}")
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise StoreError(f"file too short for header ({len(blob)} bytes): {path}")
    magic, version, dim, count = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise StoreError(f"bad magic {magic!r}, expected {MAGIC!r}: {path}")
    if version != FORMAT_VERSION:
        raise StoreError(f"unsupported format version {version}: {path}")
    payload = blob[_HEADER.size:]
    expected = count * (5 + 4 * dim)
    if len(payload) != expected:
        raise StoreError(
            f"truncated or oversized payload: declared {count} records "
            f"({expected} bytes), found {len(payload)} bytes"
        )
    if count == 0:
        dataset = EmbeddingDataset(np.zeros((0, dim), dtype=np.float32), np.zeros(0), np.zeros(0))
    else:
        rec = np.frombuffer(payload, dtype=_record_dtype(dim))
        vectors = np.ascontiguousarray(rec["vector"])
        if not np.all(np.isfinite(vectors)):
            raise StoreError(f"non-finite vector entries in {path}")
        dataset = EmbeddingDataset(vectors, rec["class_id"].copy(), rec["split"].copy())
    name = _read_sidecar_name(path) or path.stem
    return DatasetManifest.from_dataset(dataset, name), dataset


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype([("class_id", "<u4"), ("split", "u1"), ("vector", "<f4", (dim,))])


def sidecar_path(data_path) -> Path:
    return Path(str(data_path) + ".manifest.txt")


def write_sidecar(data_path, name: str, class_names=(), comments=()) -> None:
    """Write the optional plain-text sidecar: dataset name, then class names."""
    lines = [f"# {c}" for c in comments]
    lines.append(name)
    lines.extend(class_names)
    sidecar_path(data_path).write_text("\n".join(lines) + "\n")


def _read_sidecar_name(data_path) -> str | None:
    side = sidecar_path(data_path)
    if not side.is_file():
        return None
    for line in side.read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            return line
    return None


BIG_START = "big_start"
SMALL_START = "small_start"
_DEFAULT_SESSIONS = {BIG_START: 6, SMALL_START: 5}


@dataclass(frozen=True)
class SessionPlan:
    """Ordered class partition of one incremental protocol."""

    sessions: tuple[tuple[int, ...], ...]
    shots_per_class: int
    mode: str
    seed: int = 0
    dataset_name: str = ""
    dim: int = 0

    def __post_init__(self):
        seen: set[int] = set()
        for classes in self.sessions:
            overlap = seen.intersection(classes)
            if overlap:
                raise StoreError(f"session class sets overlap: {sorted(overlap)[:8]}")
            seen.update(classes)

    @property
    def session_count(self) -> int:
        return len(self.sessions)

    def all_classes(self) -> set[int]:
        return {c for classes in self.sessions for c in classes}

    def seen_classes(self, session_index: int) -> list[int]:
        """Classes available after session ``session_index``, in arrival order."""
        out: list[int] = []
        for classes in self.sessions[: session_index + 1]:
            out.extend(classes)
        return out

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "shots_per_class": self.shots_per_class,
            "seed": self.seed,
            "dataset_name": self.dataset_name,
            "dim": self.dim,
            "sessions": [list(c) for c in self.sessions],
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "SessionPlan":
        return cls(
            sessions=tuple(tuple(int(c) for c in s) for s in payload["sessions"]),
            shots_per_class=int(payload["shots_per_class"]),
            mode=str(payload["mode"]),
            seed=int(payload.get("seed", 0)),
            dataset_name=str(payload.get("dataset_name", "")),
            dim=int(payload.get("dim", 0)),
        )


def build_session_plan(
    manifest: DatasetManifest,
    mode: str,
    shots: int,
    seed: int = 0,
    sessions: int | None = None,
) -> SessionPlan:
    """Partition the manifest's classes into base + incremental sessions.

    ``big_start`` puts roughly half of the classes into session 0 and splits
    the other half equally over the incremental sessions; ``small_start``
    splits all classes equally. When counts do not divide evenly the base
    session absorbs the remainder. Class order is ascending class id, shuffled
    when ``seed`` is nonzero. ``sessions`` is the total session count
    (defaults: 6 for big start, 5 for small start).
    """
    if mode not in (BIG_START, SMALL_START):
        raise StoreError(f"mode must be {BIG_START!r} or {SMALL_START!r}, got {mode!r}")
    if shots < 1:
        raise StoreError(f"shots must be >= 1, got {shots}")
    manifest.validate()
    total_sessions = _DEFAULT_SESSIONS[mode] if sessions is None else int(sessions)
    if total_sessions < 2:
        raise StoreError(f"need at least 2 sessions, got {total_sessions}")

    class_ids = list(manifest.class_ids)
    if seed != 0:
        order = np.random.default_rng(seed).permutation(len(class_ids))
        class_ids = [class_ids[i] for i in order]

    n_classes = len(class_ids)
    n_inc = total_sessions - 1
    if mode == BIG_START:
        inc_pool = n_classes // 2
        inc_per = inc_pool // n_inc
    else:
        inc_per = n_classes // total_sessions
    if inc_per < 1:
        raise StoreError(
            f"too few classes ({n_classes}) for {total_sessions} {mode} sessions"
        )
    base_count = n_classes - inc_per * n_inc

    groups = [tuple(class_ids[:base_count])]
    for t in range(n_inc):
        start = base_count + t * inc_per
        groups.append(tuple(class_ids[start : start + inc_per]))
    return SessionPlan(
        sessions=tuple(groups),
        shots_per_class=shots,
        mode=mode,
        seed=seed,
        dataset_name=manifest.name,
        dim=manifest.dim,
    )


def sample_session_data(
    plan: SessionPlan, session_index: int, dataset: EmbeddingDataset, seed: int = 0
) -> EmbeddingDataset:
    """Select the training subset for one session.

    Session 0 returns every training record of its classes; later sessions
    draw exactly ``plan.shots_per_class`` records per class without
    replacement. Pure function of its arguments: the generator is keyed on
    ``(seed, session_index)`` only.
    """
    if not 0 <= session_index < plan.session_count:
        raise StoreError(
            f"session_index {session_index} out of range for {plan.session_count} sessions"
        )
    classes = plan.sessions[session_index]
    train_mask = dataset.split_mask(SPLIT_TRAIN)
    if session_index == 0:
        keep = train_mask & np.isin(dataset.class_ids, np.asarray(classes, dtype=np.uint32))
        return dataset.subset(np.flatnonzero(keep))

    rng = np.random.default_rng([seed, session_index])
    picked: list[np.ndarray] = []
    for c in classes:
        idx = np.flatnonzero(train_mask & (dataset.class_ids == c))
        if idx.size < plan.shots_per_class:
            raise StoreError(
                f"class {c} has {idx.size} training records, "
                f"need {plan.shots_per_class} shots"
            )
        chosen = rng.choice(idx, size=plan.shots_per_class, replace=False)
        picked.append(np.sort(chosen))
    return dataset.subset(np.concatenate(picked))
