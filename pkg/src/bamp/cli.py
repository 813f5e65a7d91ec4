"""Command-line front end: synth, prepare, train-base, run, report.

Exit codes: 0 success, 1 computation error, 2 usage or input error. Results
are written as a per-session CSV plus a JSON manifest that pins the full
configuration, so a run is reproducible from its manifest alone.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

from . import __version__
from .adaptation import AdaptationError, load_checkpoint, save_checkpoint, train_base_session
from .analogy import AnalogyError
from .config import ConfigError, RunConfig, build_run_config
from .hypersphere import HypersphereError
from .protocol import PRESETS, ProtocolError, macro_metrics, run_protocol
from .store import (
    BIG_START,
    SMALL_START,
    SessionPlan,
    StoreError,
    build_session_plan,
    load_embeddings,
    sample_session_data,
    write_embeddings,
    write_sidecar,
)
from .synth import make_synthetic_dataset

INPUT_ERRORS = (StoreError, ConfigError, FileNotFoundError, ValueError)
COMPUTE_ERRORS = (AdaptationError, AnalogyError, ProtocolError, HypersphereError, ArithmeticError)

CSV_HEADER = ["session", "seen_classes", "accuracy_pct", "a_last", "a_inc"]


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except COMPUTE_ERRORS as exc:
        print(f"computation failed: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bamp",
        description="Few-shot class-incremental learning over embedding files.",
    )
    parser.add_argument("--version", action="version", version=f"bamp {__version__}")
    sub = parser.add_subparsers(required=True, metavar="command")

    p = sub.add_parser("synth", help="generate a seeded synthetic embedding dataset")
    p.add_argument("--out", required=True, help="output embedding file")
    p.add_argument("--classes", type=int, default=20)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--train-per-class", type=int, default=100)
    p.add_argument("--test-per-class", type=int, default=40)
    p.add_argument("--separation", type=float, default=6.0)
    p.add_argument("--families", type=int, default=5)
    p.add_argument("--family-spread", type=float, default=0.2)
    p.add_argument("--modes-per-class", type=int, default=2)
    p.add_argument("--mode-spread", type=float, default=2.5)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--nuisance-dims", type=int, default=6)
    p.add_argument("--nuisance-scale", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", default="synthetic")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="build a session plan for an embedding file")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=[BIG_START, SMALL_START], default=BIG_START)
    p.add_argument("--shots", type=int, default=5)
    p.add_argument("--sessions", type=int, default=None, help="total session count")
    p.add_argument("--seed", type=int, default=0, help="nonzero shuffles class order")
    p.add_argument("--out", required=True, help="output plan JSON")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train-base", help="train the base-session head and save a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--out", required=True, help="output checkpoint file")
    _add_run_options(p, include_toggles=False)
    p.set_defaults(func=cmd_train_base)

    p = sub.add_parser("run", help="execute the incremental protocol")
    p.add_argument("--data")
    p.add_argument("--plan")
    p.add_argument("--out", help="output prefix for <prefix>.csv and <prefix>.manifest.json")
    p.add_argument("--checkpoint", help="reuse a train-base checkpoint")
    p.add_argument("--preset", choices=sorted(PRESETS), help="component toggle preset")
    _add_run_options(p, include_toggles=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="summarize one or more results CSVs")
    p.add_argument("results", nargs="+", help="results CSV files from `bamp run`")
    p.add_argument("--curve-out", help="write per-session curve data CSV")
    p.set_defaults(func=cmd_report)

    return parser


def _add_run_options(p: argparse.ArgumentParser, include_toggles: bool) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--sgd-momentum", dest="sgd_momentum", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--k", type=int, help="prototypes per class during training")
    p.add_argument("--tau", type=float)
    p.add_argument("--tau-a", dest="tau_a", type=float)
    p.add_argument("--ema-momentum", dest="ema_momentum", type=float)
    p.add_argument("--bottleneck", type=int)
    p.add_argument("--proto-init-noise", dest="proto_init_noise", type=float)
    p.add_argument("--prune-threshold", dest="prune_threshold", type=float)
    p.add_argument("--tau-cal", dest="tau_cal", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--proj-dim", dest="proj_dim", type=int)
    p.add_argument("--ridge", type=float)
    p.add_argument("--vote-weight", dest="vote_weight", type=float)
    if include_toggles:
        for name in ("mop-training", "calibrated-mop", "soft-voting"):
            p.add_argument(
                f"--{name}",
                dest=name.replace("-", "_"),
                action=argparse.BooleanOptionalAction,
                default=None,
            )


_CONFIG_KEYS = [
    "seed", "epochs", "batch_size", "lr", "sgd_momentum", "alpha", "lam", "k",
    "tau", "tau_a", "ema_momentum", "bottleneck", "proto_init_noise",
    "prune_threshold", "tau_cal", "beta", "eta", "gamma", "proj_dim", "ridge",
    "vote_weight", "mop_training", "calibrated_mop", "soft_voting",
    "data", "plan", "out", "checkpoint",
]


def _config_from_args(args) -> RunConfig:
    overrides = {k: getattr(args, k) for k in _CONFIG_KEYS if hasattr(args, k)}
    return build_run_config(
        file_path=args.config, preset=getattr(args, "preset", None), overrides=overrides
    )


def cmd_synth(args) -> int:
    dataset = make_synthetic_dataset(
        classes=args.classes,
        dim=args.dim,
        train_per_class=args.train_per_class,
        test_per_class=args.test_per_class,
        separation=args.separation,
        families=args.families,
        family_spread=args.family_spread,
        modes_per_class=args.modes_per_class,
        mode_spread=args.mode_spread,
        noise=args.noise,
        nuisance_dims=args.nuisance_dims,
        nuisance_scale=args.nuisance_scale,
        seed=args.seed,
    )
    write_embeddings(dataset, args.out)
    write_sidecar(
        args.out,
        args.name,
        class_names=[f"class_{c:03d}" for c in range(args.classes)],
        comments=[
            f"synthetic: classes={args.classes} dim={args.dim} "
            f"separation={args.separation} families={args.families} "
            f"modes={args.modes_per_class}x{args.mode_spread} noise={args.noise} "
            f"nuisance={args.nuisance_dims}x{args.nuisance_scale} seed={args.seed}"
        ],
    )
    print(
        f"wrote {len(dataset)} records ({args.classes} classes, d={args.dim}) to {args.out}"
    )
    return 0


def cmd_prepare(args) -> int:
    manifest, _ = load_embeddings(args.data)
    plan = build_session_plan(manifest, args.mode, args.shots, args.seed, args.sessions)
    Path(args.out).write_text(json.dumps(plan.to_json_dict(), indent=2) + "\n")
    base = len(plan.sessions[0])
    inc = len(plan.sessions[1])
    print(f"{plan.session_count} sessions, base {base}, inc {inc}")
    print(f"plan written to {args.out}")
    return 0


def _load_plan(path) -> SessionPlan:
    path = Path(path)
    if not path.is_file():
        raise StoreError(f"no such plan file: {path}")
    try:
        return SessionPlan.from_json_dict(json.loads(path.read_text()))
    except (KeyError, json.JSONDecodeError) as exc:
        raise StoreError(f"malformed plan file {path}: {exc}") from exc


def cmd_train_base(args) -> int:
    cfg = _config_from_args(args)
    _manifest, dataset = load_embeddings(args.data)
    plan = _load_plan(args.plan)
    base = sample_session_data(plan, 0, dataset, cfg.seed)
    head, bank = train_base_session(base.vectors, base.class_ids, cfg.train_config())
    save_checkpoint(args.out, head, bank, cfg.config_hash())
    print(f"trained on {len(base)} base records ({len(head.class_ids)} classes); "
          f"checkpoint written to {args.out}")
    return 0


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    if not cfg.data or not cfg.plan:
        raise ConfigError("run needs --data and --plan (flags or config file)")
    if not cfg.out:
        raise ConfigError("run needs --out (flags or config file)")
    _manifest, dataset = load_embeddings(cfg.data)
    plan = _load_plan(cfg.plan)
    trained = None
    if cfg.checkpoint:
        head, bank, _ckpt_hash = load_checkpoint(cfg.checkpoint)
        trained = (head, bank)

    csv_path = Path(cfg.out + ".csv")
    manifest_path = Path(cfg.out + ".manifest.json")
    rows: list[list[str]] = []

    def on_session(t, seen_count, accuracy):
        rows.append([str(t), str(seen_count), repr(accuracy), "", ""])

    status = "ok"
    exit_code = 0
    result = None
    try:
        result = run_protocol(dataset, plan, cfg.protocol_config(), trained, on_session)
        rows.append(["summary", "", "", repr(result.a_last), repr(result.a_inc)])
    except Exception as exc:  # inputs were validated above; this is a component failure
        status = f"failed: {exc}"
        rows.append(["failed", "", "", "", ""])
        exit_code = 1

    _write_csv(csv_path, rows)
    manifest_path.write_text(
        json.dumps(
            {
                "package_version": __version__,
                "config": cfg.to_flat_dict(),
                "config_hash": cfg.config_hash(),
                "results_csv": csv_path.name,
                "status": status,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    if result is not None:
        print(f"A_last {result.a_last:.2f}  A_inc {result.a_inc:.2f}  ({csv_path})")
    else:
        print(f"run failed, partial results in {csv_path}", file=sys.stderr)
    return exit_code


def _write_csv(path: Path, rows: list[list[str]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        writer.writerows(rows)


def read_results_csv(path) -> dict:
    """Parse a results CSV back into per-session rows and summary metrics."""
    path = Path(path)
    if not path.is_file():
        raise StoreError(f"no such results file: {path}")
    sessions = []
    a_last = a_inc = None
    failed = False
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise StoreError(f"malformed results file {path}: unexpected header {header}")
        for row in reader:
            if len(row) != len(CSV_HEADER):
                raise StoreError(f"malformed results file {path}: bad row {row}")
            if row[0] == "summary":
                a_last, a_inc = float(row[3]), float(row[4])
            elif row[0] == "failed":
                failed = True
            else:
                sessions.append((int(row[0]), int(row[1]), float(row[2])))
    if not failed and (a_last is None or not sessions):
        raise StoreError(f"malformed results file {path}: missing summary or sessions")
    return {"sessions": sessions, "a_last": a_last, "a_inc": a_inc, "failed": failed}


def cmd_report(args) -> int:
    summaries = []
    curve_rows = []
    for path in args.results:
        parsed = read_results_csv(path)
        name = Path(path).stem
        if parsed["failed"]:
            print(f"{name}: FAILED (partial, {len(parsed['sessions'])} sessions)")
            continue
        summaries.append((name, parsed["a_last"], parsed["a_inc"]))
        for t, seen, acc in parsed["sessions"]:
            curve_rows.append([name, str(t), str(seen), repr(acc)])
        print(f"{name}: A_last {parsed['a_last']:.2f}  A_inc {parsed['a_inc']:.2f}")
    if len(summaries) > 1:
        m_last, m_inc = macro_metrics([(a, b) for _, a, b in summaries])
        print(f"macro ({len(summaries)} runs): mA_last {m_last:.2f}  mA_inc {m_inc:.2f}")
    if args.curve_out:
        with open(args.curve_out, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["run", "session", "seen_classes", "accuracy_pct"])
            writer.writerows(curve_rows)
        print(f"curve data written to {args.curve_out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
