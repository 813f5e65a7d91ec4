"""Image sources with canonical train/test splits.

Every source yields lazily loaded PIL images tagged with a class id and a
split, in deterministic order (train block then test block). Dataset
downloads are the user's task; these loaders only read what is already on
disk, except where torchvision's ``download`` flag is explicitly passed.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .writer import SPLIT_TEST, SPLIT_TRAIN

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}


class DatasetError(Exception):
    pass


@dataclass
class ImageSource:
    name: str
    class_names: list[str]
    items: list  # (loader, class_id, split); loader() -> PIL.Image (RGB)
    comments: tuple[str, ...] = ()


def folder_source(root) -> ImageSource:
    """``root/train/<class>/*`` and ``root/test/<class>/*`` image folders.

    Class ids follow the sorted union of class directory names across both
    splits, so the mapping is stable regardless of which split a class first
    appears in.
    """
    root = Path(root)
    split_dirs = {SPLIT_TRAIN: root / "train", SPLIT_TEST: root / "test"}
    for split_dir in split_dirs.values():
        if not split_dir.is_dir():
            raise DatasetError(f"missing split directory: {split_dir}")
    names = sorted(
        {d.name for split_dir in split_dirs.values() for d in split_dir.iterdir() if d.is_dir()}
    )
    if not names:
        raise DatasetError(f"no class directories under {root}")
    index = {name: i for i, name in enumerate(names)}

    def loader(path):
        return lambda: Image.open(path).convert("RGB")

    items = []
    for split in (SPLIT_TRAIN, SPLIT_TEST):
        for class_dir in sorted(d for d in split_dirs[split].iterdir() if d.is_dir()):
            for path in sorted(class_dir.iterdir()):
                if path.suffix.lower() in IMAGE_EXTENSIONS:
                    items.append((loader(path), index[class_dir.name], split))
    if not items:
        raise DatasetError(f"no images found under {root}")
    return ImageSource(name=root.name, class_names=names, items=items)


def cifar100_source(root, download: bool = False) -> ImageSource:
    from torchvision.datasets import CIFAR100

    train = CIFAR100(root, train=True, download=download)
    test = CIFAR100(root, train=False, download=download)

    def loader(dataset, i):
        return lambda: dataset[i][0].convert("RGB")

    items = [(loader(train, i), int(train.targets[i]), SPLIT_TRAIN) for i in range(len(train))]
    items += [(loader(test, i), int(test.targets[i]), SPLIT_TEST) for i in range(len(test))]
    return ImageSource(name="cifar100", class_names=list(train.classes), items=items)


def aircraft_source(root, subset_seed: int = 0, subset_size: int = 100,
                    download: bool = False) -> ImageSource:
    """Aircraft variants, restricted to a seeded random subset of classes."""
    from torchvision.datasets import FGVCAircraft

    train = FGVCAircraft(root, split="trainval", download=download)
    test = FGVCAircraft(root, split="test", download=download)
    all_names = list(train.classes)
    if subset_size > len(all_names):
        raise DatasetError(f"subset_size {subset_size} exceeds {len(all_names)} classes")
    rng = np.random.default_rng(subset_seed)
    chosen = sorted(rng.choice(len(all_names), size=subset_size, replace=False).tolist())
    remap = {orig: new for new, orig in enumerate(chosen)}
    names = [all_names[i] for i in chosen]

    def loader(dataset, i):
        return lambda: dataset[i][0].convert("RGB")

    items = []
    for dataset, split in ((train, SPLIT_TRAIN), (test, SPLIT_TEST)):
        for i in range(len(dataset)):
            label = int(dataset._labels[i])
            if label in remap:
                items.append((loader(dataset, i), remap[label], split))
    return ImageSource(
        name="fgvcaircraft100",
        class_names=names,
        items=items,
        comments=(f"class_subset_seed={subset_seed} subset_size={subset_size}",),
    )


def open_source(dataset: str, root, subset_seed: int = 0, download: bool = False) -> ImageSource:
    if dataset == "folder":
        return folder_source(root)
    if dataset == "cifar100":
        return cifar100_source(root, download=download)
    if dataset == "fgvcaircraft":
        return aircraft_source(root, subset_seed=subset_seed, download=download)
    raise DatasetError(
        f"unknown dataset {dataset!r} (have: folder, cifar100, fgvcaircraft)"
    )
