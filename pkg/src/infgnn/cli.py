"""Command-line entry point: ``infgnn generate | train | evaluate``.

Exit codes: 0 success, 2 invalid input (config, dataset, checkpoint),
3 numerical failure, 1 anything else (e.g. unwritable output path).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .evaluation import evaluate_transition, summary_table, write_metrics_csv
from .experiments import BASELINES, run_baseline, sweep_configs
from .graph import GraphValidationError
from .io import DatasetFormatError, load_dataset, write_dataset
from .surrogate import CheckpointError, NumericalError, load_checkpoint, save_checkpoint
from .synthetic import SynthConfig, SynthConfigError, generate_synthetic_drift
from .trainer import ABLATIONS, ConfigError, RunResult, TrainConfig, apply_ablation, run_continual
from .windows import Scaler

log = logging.getLogger("infgnn")

EXIT_OK, EXIT_OTHER, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2, 3
INVALID = (ConfigError, SynthConfigError, DatasetFormatError, GraphValidationError, CheckpointError,
           json.JSONDecodeError)


def dataset_hash(root) -> str:
    """SHA-256 over every file below ``root`` (relative path and bytes, sorted by path)."""
    root = Path(root)
    h = hashlib.sha256()
    for p in sorted(q for q in root.rglob("*") if q.is_file()):
        h.update(str(p.relative_to(root)).encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def write_manifest(out: Path, record: dict) -> Path:
    """Write ``<out>/manifest.json``; an existing manifest is first moved to ``<out>/manifests/``."""
    path = out / "manifest.json"
    if path.exists():
        archive = out / "manifests"
        archive.mkdir(exist_ok=True)
        n = len(list(archive.glob("manifest-*.json")))
        path.rename(archive / f"manifest-{n:04d}.json")
    path.write_text(json.dumps(record, indent=1, sort_keys=True))
    return path


def _manifest(command: str, argv, config: dict, seed, started: float, outputs: dict,
              dataset: Path | None = None) -> dict:
    rec = {
        "command": command,
        "argv": list(argv),
        "config": config,
        "seed": seed,
        "code_version": __version__,
        "outputs": {k: str(v) for k, v in outputs.items()},
        "started_utc": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "wall_clock_s": round(time.time() - started, 3),
    }
    if dataset is not None:
        rec["dataset"] = str(dataset)
        rec["dataset_sha256"] = dataset_hash(dataset)
    return rec


# -- generate ------------------------------------------------------------------

def cmd_generate(args, argv) -> int:
    started = time.time()
    data = json.loads(Path(args.config).read_text()) if args.config else {}
    cfg = SynthConfig.from_dict(data)
    seq, truth = generate_synthetic_drift(cfg, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = out / "dataset"
    write_dataset(seq, dataset, extra={"generator": {"seed": args.seed, "config": cfg.to_dict()}})
    truth_path = out / "ground_truth.json"
    truth_path.write_text(json.dumps(truth, indent=1, sort_keys=True))
    write_manifest(out, _manifest("generate", argv, cfg.to_dict(), args.seed, started,
                                  {"dataset": dataset, "ground_truth": truth_path}))
    print(f"wrote {len(seq)} intervals to {dataset}")
    return EXIT_OK


# -- train ---------------------------------------------------------------------

def _load_train_config(args) -> TrainConfig:
    data = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        data = TrainConfig.from_json(path).to_dict()
    if args.seed is not None:
        data["seed"] = args.seed
    return TrainConfig.from_dict(data)


def _parse_sweep(text: str):
    if "=" not in text:
        raise ConfigError(f"--sweep expects <param>=<v1,v2,...>, got {text!r}")
    name, values = text.split("=", 1)
    vals = [v for v in values.split(",") if v]
    if not vals:
        raise ConfigError("--sweep needs at least one value")
    return name.strip(), [json.loads(v) for v in vals]


def _write_run(result: RunResult, out: Path, tag: str, cfg: TrainConfig, seq) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    ckdir = out / "checkpoints"
    ckdir.mkdir(exist_ok=True)
    paths = {}
    for iv, state in zip(seq, result.states):
        p = ckdir / f"t{iv.index}.ckpt"
        save_checkpoint(state, p, extra={"interval": iv.index, "scaler": result.scaler.to_dict(),
                                         "config": cfg.to_dict(), "model_tag": tag})
        paths[f"checkpoint_t{iv.index}"] = p
    write_metrics_csv(result.records, out / "metrics.csv", append=True)
    paths["metrics"] = out / "metrics.csv"
    with open(out / "buffer_history.csv", "w") as fh:
        fh.write("epoch,timestamp,score\n")
        for lg in result.logs:
            for epoch, ts, score in lg.buffer_history:
                fh.write(f"{epoch},{ts},{score!r}\n")
    paths["buffer_history"] = out / "buffer_history.csv"
    for iv, table in zip(seq, result.ri_tables):
        if table is not None:
            p = out / f"ri_scores_t{iv.index}.csv"
            table.to_csv(p)
            paths[f"ri_scores_t{iv.index}"] = p
    return paths


def cmd_train(args, argv) -> int:
    started = time.time()
    cfg = _load_train_config(args)
    if not args.config:
        print("no --config given; using defaults:")
    print(json.dumps(cfg.to_dict(), indent=1, sort_keys=True))
    seq = load_dataset(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    arms: list[tuple[str, TrainConfig]] = []
    if args.baseline:
        arms.append((args.baseline, cfg))
    else:
        tag = args.ablation or "full"
        base = apply_ablation(cfg, tag)
        if args.sweep:
            name, values = _parse_sweep(args.sweep)
            arms += sweep_configs(base, name, values)
        else:
            arms.append((tag, base))

    outputs, records = {}, []
    for tag, arm in arms:
        log.info("training arm %s", tag)
        if args.baseline:
            result = run_baseline(tag, seq, arm)
        else:
            result = run_continual(seq, arm, model_tag=tag)
        arm_dir = out if len(arms) == 1 else out / "arms" / tag
        for key, p in _write_run(result, arm_dir, tag, arm, seq).items():
            outputs[key if len(arms) == 1 else f"{tag}/{key}"] = p
        records += result.records
    if len(arms) > 1:
        write_metrics_csv(records, out / "metrics.csv", append=True)
        outputs["metrics"] = out / "metrics.csv"
    table = summary_table(records)
    (out / "summary.txt").write_text(table + "\n")
    outputs["summary"] = out / "summary.txt"
    print(table)

    config = cfg.to_dict()
    config.update({"ablation": args.ablation, "sweep": args.sweep, "baseline": args.baseline,
                   "toggles": ABLATIONS.get(args.ablation or "full", {})})
    write_manifest(out, _manifest("train", argv, config, cfg.seed, started, outputs, Path(args.dataset)))
    return EXIT_OK


# -- evaluate ------------------------------------------------------------------

def cmd_evaluate(args, argv) -> int:
    started = time.time()
    state, extra = load_checkpoint(args.checkpoint)
    seq = load_dataset(args.dataset)
    spec = state.spec
    if spec.n_features != seq.n_features:
        raise CheckpointError(f"checkpoint expects {spec.n_features} features, dataset has {seq.n_features}")
    index = {iv.index: i for i, iv in enumerate(seq)}
    if args.interval not in index or index[args.interval] + 1 >= len(seq):
        raise ConfigError(f"interval {args.interval} has no successor in the dataset "
                          f"(indices {sorted(index)})")
    pos = index[args.interval]
    scaler = Scaler.from_dict(extra["scaler"]) if "scaler" in extra else Scaler.fit(seq[0].features)
    cfg = extra.get("config", {})
    records = evaluate_transition(state, seq[pos], seq[pos + 1], scaler, args.tag or extra.get("model_tag", "model"),
                                  int(cfg.get("seed", 0)), cfg.get("adjacency_mode", "sym"),
                                  float(cfg.get("mape_floor", 1.0)))
    print("interval,group,horizon,mae,rmse,mape,model_tag,seed")
    for r in records:
        print(",".join("" if v is None else str(v) for v in
                       (r.interval, r.group, r.horizon, r.mae, r.rmse, r.mape, r.model_tag, r.seed)))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = write_metrics_csv(records, out / "metrics.csv", append=True)
        write_manifest(out, _manifest("evaluate", argv, {"checkpoint": str(args.checkpoint),
                                                          "interval": args.interval},
                                      int(cfg.get("seed", 0)), started, {"metrics": path},
                                      Path(args.dataset)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="infgnn", description="Continual spatio-temporal forecasting on growing graphs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic drifting dataset")
    g.add_argument("--config", help="JSON file with generator settings")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="continual training with train-on-t / test-on-t+1 evaluation")
    t.add_argument("--dataset", required=True)
    t.add_argument("--config", help="JSON file mirroring the training config")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.add_argument("--ablation", choices=sorted(ABLATIONS))
    t.add_argument("--sweep", help="<param>=<v1,v2,...>, e.g. buffer_capacity=800,1000,1200")
    t.add_argument("--baseline", choices=BASELINES)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint on the interval after --interval")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--interval", type=int, required=True)
    e.add_argument("--out")
    e.add_argument("--tag")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "baseline", None) and (args.ablation or args.sweep):
        print("error: --baseline cannot be combined with --ablation or --sweep", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args, argv)
    except INVALID as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
