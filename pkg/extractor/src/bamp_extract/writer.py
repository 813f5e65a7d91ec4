"""Writer for the binary embedding file format and its plain-text sidecar.

Little-endian layout: magic ``BAMP``, format version u16 = 1, feature
dimension u32, record count u64, then per record a class id u32, a split tag
u8 (0 = train, 1 = test), and the vector as float32 values. This mirrors the
wire format the incremental-learning CLI consumes; the two packages share the
format, not code.
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"BAMP"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIQ")

SPLIT_TRAIN = 0
SPLIT_TEST = 1


def write_embedding_file(path, vectors: np.ndarray, class_ids, splits) -> None:
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    if vectors.ndim != 2:
        raise ValueError("vectors must be (records, dim)")
    if not np.all(np.isfinite(vectors)):
        raise ValueError("refusing to write non-finite features")
    n, dim = vectors.shape
    class_ids = np.asarray(class_ids, dtype=np.uint32)
    splits = np.asarray(splits, dtype=np.uint8)
    if class_ids.shape != (n,) or splits.shape != (n,):
        raise ValueError("class_ids and splits must match the record count")
    record = np.dtype([("class_id", "<u4"), ("split", "u1"), ("vector", "<f4", (dim,))])
    rows = np.empty(n, dtype=record)
    rows["class_id"] = class_ids
    rows["split"] = splits
    rows["vector"] = vectors
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, dim, n))
        fh.write(rows.tobytes())


def write_sidecar(data_path, name: str, class_names, comments=()) -> None:
    """Dataset name then one class name per line; '#' lines carry metadata."""
    lines = [f"# {c}" for c in comments]
    lines.append(name)
    lines.extend(class_names)
    Path(str(data_path) + ".manifest.txt").write_text("\n".join(lines) + "\n")
