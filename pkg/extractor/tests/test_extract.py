"""Extraction pipeline: format bytes, fixtures, determinism, and the handoff
to the consumer CLI (exercised strictly through subprocess and file formats).
"""

import struct
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from bamp_extract.datasets import DatasetError, folder_source
from bamp_extract.extract import ExtractionJob, extract
from bamp_extract.writer import write_embedding_file

HEADER = struct.Struct("<4sHIQ")


def parse_embedding_file(path):
    blob = path.read_bytes()
    magic, version, dim, count = HEADER.unpack_from(blob)
    assert magic == b"BAMP" and version == 1
    record = np.dtype([("class_id", "<u4"), ("split", "u1"), ("vector", "<f4", (dim,))])
    rows = np.frombuffer(blob[HEADER.size:], dtype=record)
    assert rows.shape[0] == count
    return dim, rows


def make_image_folder(root, classes=("cat", "dog"), train=3, test=2, size=64, seed=0):
    rng = np.random.default_rng(seed)
    for split, count in (("train", train), ("test", test)):
        for name in classes:
            folder = root / split / name
            folder.mkdir(parents=True, exist_ok=True)
            for i in range(count):
                pixels = rng.integers(0, 255, size=(size, size, 3), dtype=np.uint8)
                Image.fromarray(pixels).save(folder / f"{name}_{i}.png")
    return root


class TestWriter:
    def test_exact_byte_layout(self, tmp_path):
        path = tmp_path / "w.bamp"
        vectors = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
        write_embedding_file(path, vectors, [7, 8], [0, 1])
        blob = path.read_bytes()
        assert blob[:4] == b"BAMP"
        assert len(blob) == HEADER.size + 2 * (4 + 1 + 8)
        dim, rows = parse_embedding_file(path)
        assert dim == 2
        assert rows["class_id"].tolist() == [7, 8]
        assert rows["split"].tolist() == [0, 1]
        np.testing.assert_array_equal(rows["vector"], vectors)

    def test_non_finite_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_embedding_file(tmp_path / "x.bamp", np.array([[np.nan]]), [0], [0])


class TestFolderSource:
    def test_classes_sorted_and_splits_tagged(self, tmp_path):
        make_image_folder(tmp_path, classes=("zebu", "ant"))
        source = folder_source(tmp_path)
        assert source.class_names == ["ant", "zebu"]
        train_items = [it for it in source.items if it[2] == 0]
        test_items = [it for it in source.items if it[2] == 1]
        assert len(train_items) == 6 and len(test_items) == 4

    def test_missing_split_rejected(self, tmp_path):
        (tmp_path / "train" / "a").mkdir(parents=True)
        with pytest.raises(DatasetError, match="missing split"):
            folder_source(tmp_path)


class TestExtraction:
    def test_ten_image_fixture_with_full_backbone(self, tmp_path):
        make_image_folder(tmp_path / "imgs")
        out = tmp_path / "tiny.bamp"
        job = ExtractionJob(
            dataset="folder", root=str(tmp_path / "imgs"), output=str(out),
            backbone="vit_b16", weights="random", batch_size=4, seed=1,
        )
        written, skipped = extract(job)
        assert (written, skipped) == (10, 0)
        dim, rows = parse_embedding_file(out)
        assert dim == 768
        assert rows["split"].tolist() == [0] * 6 + [1] * 4
        assert sorted(set(rows["class_id"].tolist())) == [0, 1]
        sidecar = (tmp_path / "tiny.bamp.manifest.txt").read_text().splitlines()
        assert "cat" in sidecar and "dog" in sidecar
        assert any("preprocess" in line for line in sidecar)

    def test_deterministic_given_fixed_weights(self, tmp_path):
        make_image_folder(tmp_path / "imgs", size=64)
        outputs = []
        for tag in ("a", "b"):
            out = tmp_path / f"{tag}.bamp"
            job = ExtractionJob(
                dataset="folder", root=str(tmp_path / "imgs"), output=str(out),
                backbone="vit_tiny_test", weights="random", batch_size=3, seed=5,
            )
            extract(job)
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1]

    def test_corrupt_image_skipped_with_count(self, tmp_path, caplog):
        root = make_image_folder(tmp_path / "imgs")
        (root / "train" / "cat" / "broken.png").write_bytes(b"not an image at all")
        out = tmp_path / "skip.bamp"
        job = ExtractionJob(
            dataset="folder", root=str(root), output=str(out),
            backbone="vit_tiny_test", weights="random", batch_size=4, seed=0,
        )
        written, skipped = extract(job)
        assert (written, skipped) == (10, 1)

    def test_wrong_resolution_rejected(self, tmp_path):
        make_image_folder(tmp_path / "imgs")
        job = ExtractionJob(
            dataset="folder", root=str(tmp_path / "imgs"), output=str(tmp_path / "x.bamp"),
            backbone="vit_tiny_test", weights="random", resolution=224,
        )
        with pytest.raises(ValueError, match="expects"):
            extract(job)


class TestConsumerHandoff:
    def test_extracted_file_drives_consumer_cli(self, tmp_path):
        """The consumer loads the file and builds a plan from it, via its CLI."""
        make_image_folder(tmp_path / "imgs", classes=("a", "b", "c", "d"), train=6, test=2)
        out = tmp_path / "hand.bamp"
        job = ExtractionJob(
            dataset="folder", root=str(tmp_path / "imgs"), output=str(out),
            backbone="vit_tiny_test", weights="random", batch_size=8, seed=2,
        )
        extract(job)
        plan = tmp_path / "hand.plan.json"
        proc = subprocess.run(
            [sys.executable, "-m", "bamp.cli", "prepare", "--data", str(out),
             "--mode", "small_start", "--shots", "2", "--sessions", "2",
             "--out", str(plan)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert "2 sessions, base 2, inc 2" in proc.stdout
        run_out = tmp_path / "hand_run"
        proc = subprocess.run(
            [sys.executable, "-m", "bamp.cli", "run", "--data", str(out),
             "--plan", str(plan), "--out", str(run_out), "--preset", "B4",
             "--epochs", "2", "--batch-size", "8", "--proj-dim", "128",
             "--k", "2", "--seed", "1"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        csv_lines = (tmp_path / "hand_run.csv").read_text().splitlines()
        assert csv_lines[0] == "session,seen_classes,accuracy_pct,a_last,a_inc"
        assert len(csv_lines) == 1 + 2 + 1  # header, two sessions, summary
