"""Command-line surface: argument handling, file outputs, exit codes."""

import json

import numpy as np
import pytest

from bamp.cli import main, read_results_csv
from bamp.store import LabeledEmbedding, load_embeddings, write_embeddings


def run_cli(*argv):
    return main(list(argv))


def write_tiny_dataset(path, classes=100, dim=4, train=1, test=1):
    rng = np.random.default_rng(0)
    records = []
    for c in range(classes):
        for _ in range(train):
            records.append(LabeledEmbedding(rng.normal(size=dim).astype(np.float32), c, 0))
        for _ in range(test):
            records.append(LabeledEmbedding(rng.normal(size=dim).astype(np.float32), c, 1))
    write_embeddings(records, path)


@pytest.fixture
def synth_run(tmp_path):
    """A small synthetic dataset with its plan, ready for `run`."""
    data = tmp_path / "tiny.bamp"
    plan = tmp_path / "tiny.plan.json"
    assert run_cli("synth", "--out", str(data), "--classes", "10", "--dim", "8",
                   "--train-per-class", "30", "--test-per-class", "8",
                   "--nuisance-dims", "2", "--seed", "5") == 0
    assert run_cli("prepare", "--data", str(data), "--mode", "small_start",
                   "--shots", "5", "--out", str(plan)) == 0
    return data, plan


FAST = ["--epochs", "4", "--batch-size", "32", "--proj-dim", "64", "--seed", "3"]


class TestSynthAndPrepare:
    def test_synth_writes_loadable_file(self, tmp_path):
        out = tmp_path / "s.bamp"
        assert run_cli("synth", "--out", str(out), "--classes", "6", "--dim", "8",
                       "--train-per-class", "10", "--test-per-class", "4") == 0
        manifest, dataset = load_embeddings(out)
        assert manifest.class_count == 6
        assert len(dataset) == 6 * 14
        assert manifest.name == "synthetic"

    def test_prepare_big_start_summary(self, tmp_path, capsys):
        data = tmp_path / "c.bamp"
        write_tiny_dataset(data, classes=100)
        out = tmp_path / "plan.json"
        assert run_cli("prepare", "--data", str(data), "--mode", "big_start",
                       "--shots", "5", "--out", str(out)) == 0
        assert "6 sessions, base 50, inc 10" in capsys.readouterr().out
        plan = json.loads(out.read_text())
        assert [len(s) for s in plan["sessions"]] == [50, 10, 10, 10, 10, 10]

    def test_prepare_small_start_summary(self, tmp_path, capsys):
        data = tmp_path / "e.bamp"
        write_tiny_dataset(data, classes=10)
        out = tmp_path / "plan.json"
        assert run_cli("prepare", "--data", str(data), "--mode", "small_start",
                       "--shots", "5", "--out", str(out)) == 0
        assert "5 sessions, base 2, inc 2" in capsys.readouterr().out

    def test_prepare_missing_data_exits_2(self, tmp_path, capsys):
        assert run_cli("prepare", "--data", str(tmp_path / "nope.bamp"),
                       "--out", str(tmp_path / "p.json")) == 2
        assert "error" in capsys.readouterr().err

    def test_unknown_flag_rejected(self):
        with pytest.raises(SystemExit) as exc:
            run_cli("synth", "--out", "x.bamp", "--frobnicate", "1")
        assert exc.value.code == 2


class TestRun:
    def test_run_writes_csv_and_manifest(self, synth_run, tmp_path):
        data, plan = synth_run
        out = tmp_path / "result"
        assert run_cli("run", "--data", str(data), "--plan", str(plan),
                       "--out", str(out), "--preset", "B4", *FAST) == 0
        parsed = read_results_csv(str(out) + ".csv")
        assert len(parsed["sessions"]) == 5
        assert parsed["a_last"] is not None
        manifest = json.loads((tmp_path / "result.manifest.json").read_text())
        assert manifest["status"] == "ok"
        assert manifest["config"]["soft_voting"] is True
        assert manifest["config"]["seed"] == 3

    def test_preset_toggles_recorded(self, synth_run, tmp_path):
        data, plan = synth_run
        for preset, voting in (("B1", False), ("B4", True)):
            out = tmp_path / f"r{preset}"
            assert run_cli("run", "--data", str(data), "--plan", str(plan),
                           "--out", str(out), "--preset", preset, *FAST) == 0
            manifest = json.loads((tmp_path / f"r{preset}.manifest.json").read_text())
            assert manifest["config"]["soft_voting"] is voting
            assert manifest["config"]["mop_training"] is (preset != "B1")

    def test_explicit_toggle_overrides_preset(self, synth_run, tmp_path):
        data, plan = synth_run
        out = tmp_path / "override"
        assert run_cli("run", "--data", str(data), "--plan", str(plan),
                       "--out", str(out), "--preset", "B4", "--no-soft-voting", *FAST) == 0
        manifest = json.loads((tmp_path / "override.manifest.json").read_text())
        assert manifest["config"]["soft_voting"] is False

    def test_config_file_with_flag_precedence(self, synth_run, tmp_path):
        data, plan = synth_run
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "# demo config\n"
            f"data = {data}\n"
            f"plan = {plan}\n"
            "epochs = 4\n"
            "batch_size = 32\n"
            "proj_dim = 64\n"
            "seed = 9\n"
            "beta = 0.75\n"
        )
        out = tmp_path / "cfgrun"
        assert run_cli("run", "--config", str(cfg), "--out", str(out), "--seed", "4") == 0
        manifest = json.loads((tmp_path / "cfgrun.manifest.json").read_text())
        assert manifest["config"]["seed"] == 4          # flag wins
        assert manifest["config"]["beta"] == 0.75       # file wins over default

    def test_unknown_config_key_rejected(self, synth_run, tmp_path, capsys):
        data, plan = synth_run
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("frobnicate = 1\n")
        assert run_cli("run", "--config", str(cfg), "--data", str(data),
                       "--plan", str(plan), "--out", str(tmp_path / "x")) == 2
        assert "unknown config key" in capsys.readouterr().err

    def test_failure_preserves_partial_results(self, tmp_path, capsys):
        # Classes have fewer training records than the requested shot count,
        # so session 1 sampling fails after session 0 was already scored.
        data = tmp_path / "short.bamp"
        write_tiny_dataset(data, classes=10, dim=4, train=3, test=2)
        plan = tmp_path / "short.plan.json"
        assert run_cli("prepare", "--data", str(data), "--mode", "small_start",
                       "--shots", "5", "--out", str(plan)) == 0
        out = tmp_path / "partial"
        code = run_cli("run", "--data", str(data), "--plan", str(plan),
                       "--out", str(out), "--preset", "B1", *FAST)
        assert code == 1
        parsed = read_results_csv(str(out) + ".csv")
        assert parsed["failed"]
        assert len(parsed["sessions"]) == 1
        manifest = json.loads((tmp_path / "partial.manifest.json").read_text())
        assert manifest["status"].startswith("failed:")

    def test_checkpoint_reuse(self, synth_run, tmp_path):
        data, plan = synth_run
        ckpt = tmp_path / "head.bpck"
        assert run_cli("train-base", "--data", str(data), "--plan", str(plan),
                       "--out", str(ckpt), *FAST) == 0
        out_a = tmp_path / "fresh"
        out_b = tmp_path / "reused"
        assert run_cli("run", "--data", str(data), "--plan", str(plan),
                       "--out", str(out_a), *FAST) == 0
        assert run_cli("run", "--data", str(data), "--plan", str(plan),
                       "--out", str(out_b), "--checkpoint", str(ckpt), *FAST) == 0
        a = read_results_csv(str(out_a) + ".csv")
        b = read_results_csv(str(out_b) + ".csv")
        assert a["sessions"] == b["sessions"]


class TestReport:
    def test_single_run_echoes_metrics(self, synth_run, tmp_path, capsys):
        data, plan = synth_run
        out = tmp_path / "one"
        assert run_cli("run", "--data", str(data), "--plan", str(plan),
                       "--out", str(out), *FAST) == 0
        capsys.readouterr()
        assert run_cli("report", str(out) + ".csv") == 0
        printed = capsys.readouterr().out
        assert "A_last" in printed and "A_inc" in printed

    def test_macro_over_multiple_runs_and_curves(self, synth_run, tmp_path, capsys):
        data, plan = synth_run
        paths = []
        for seed in ("3", "4"):
            out = tmp_path / f"m{seed}"
            assert run_cli("run", "--data", str(data), "--plan", str(plan),
                           "--out", str(out), "--epochs", "4", "--batch-size", "32",
                           "--proj-dim", "64", "--seed", seed) == 0
            paths.append(str(out) + ".csv")
        capsys.readouterr()
        curve = tmp_path / "curves.csv"
        assert run_cli("report", *paths, "--curve-out", str(curve)) == 0
        printed = capsys.readouterr().out
        assert "macro (2 runs)" in printed
        lines = curve.read_text().splitlines()
        assert lines[0] == "run,session,seen_classes,accuracy_pct"
        assert len(lines) == 1 + 2 * 5

    def test_malformed_results_rejected(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("not,a,results,file\n1,2,3,4\n")
        assert run_cli("report", str(bad)) == 2
        assert "error" in capsys.readouterr().err

    def test_six_dataset_fixture_macro(self, tmp_path, capsys):
        pairs = [(85.04, 89.32), (86.30, 89.46), (87.26, 89.70),
                 (58.30, 66.93), (81.02, 88.46), (70.63, 79.18)]
        paths = []
        for i, (last, inc) in enumerate(pairs):
            path = tmp_path / f"ds{i}.csv"
            path.write_text(
                "session,seen_classes,accuracy_pct,a_last,a_inc\n"
                f"0,10,{inc},,\n"
                f"summary,,,{last},{inc}\n"
            )
            paths.append(str(path))
        assert run_cli("report", *paths) == 0
        printed = capsys.readouterr().out
        assert "mA_last 78.09" in printed
        assert "mA_inc 83.84" in printed
