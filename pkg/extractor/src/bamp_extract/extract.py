"""Batch feature extraction from a frozen backbone into the embedding format."""

import logging
from dataclasses import dataclass

import numpy as np
import torch

from .backbones import build_preprocess, load_backbone
from .datasets import ImageSource, open_source
from .writer import write_embedding_file, write_sidecar

log = logging.getLogger(__name__)


@dataclass
class ExtractionJob:
    dataset: str                 # folder | cifar100 | fgvcaircraft
    root: str                    # dataset directory
    output: str                  # embedding file to write
    backbone: str = "vit_b16"
    weights: str = "pretrained"  # pretrained | random | path to a state_dict
    resolution: int | None = None  # None: the backbone's native input size
    batch_size: int = 32
    device: str = "cpu"
    seed: int = 0                # backbone init seed (random weights) and class subset seed
    download: bool = False


def extract(job: ExtractionJob) -> tuple[int, int]:
    """Run the job; returns (records written, corrupt images skipped)."""
    source = open_source(job.dataset, job.root, subset_seed=job.seed, download=job.download)
    model, feature_width, native_resolution = load_backbone(
        job.backbone, weights=job.weights, seed=job.seed
    )
    resolution = native_resolution if job.resolution is None else job.resolution
    if resolution != native_resolution:
        raise ValueError(
            f"backbone {job.backbone} expects {native_resolution}px input, got {resolution}"
        )
    preprocess, preprocess_desc = build_preprocess(resolution)
    device = torch.device(job.device)
    model.to(device)

    features: list[np.ndarray] = []
    class_ids: list[int] = []
    splits: list[int] = []
    skipped = 0
    batch_tensors: list[torch.Tensor] = []
    batch_meta: list[tuple[int, int]] = []

    def flush():
        if not batch_tensors:
            return
        with torch.no_grad():
            out = model(torch.stack(batch_tensors).to(device))
        features.append(out.cpu().numpy().astype(np.float32))
        for cid, split in batch_meta:
            class_ids.append(cid)
            splits.append(split)
        batch_tensors.clear()
        batch_meta.clear()

    for loader, cid, split in source.items:
        try:
            image = loader()
        except Exception as exc:
            skipped += 1
            log.warning("skipping unreadable image (%s)", exc)
            continue
        batch_tensors.append(preprocess(image))
        batch_meta.append((cid, split))
        if len(batch_tensors) >= job.batch_size:
            flush()
    flush()

    if not features:
        raise ValueError("no readable images; nothing to write")
    vectors = np.concatenate(features, axis=0)
    assert vectors.shape[1] == feature_width
    write_embedding_file(job.output, vectors, class_ids, splits)
    write_sidecar(
        job.output,
        source.name,
        source.class_names,
        comments=(
            f"backbone={job.backbone} weights={job.weights} seed={job.seed}",
            f"preprocess: {preprocess_desc}",
            f"feature_width={feature_width} skipped_images={skipped}",
            *source.comments,
        ),
    )
    if skipped:
        log.warning("skipped %d unreadable image(s)", skipped)
    log.info("wrote %d records (d=%d) to %s", vectors.shape[0], feature_width, job.output)
    return vectors.shape[0], skipped
