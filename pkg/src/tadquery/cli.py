"""Command-line entry point.

Exit codes: 0 success, 2 configuration or usage error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .config import ConfigError, RunConfig, config_from_dict, load_config
from .data import DatasetError, generate_dataset, load_dataset, save_dataset
from .evaluation import evaluate_map, load_report, save_report
from .inference import read_detections, write_detections
from .ndgrad import CheckpointError, DomainError
from .training import FINAL_CHECKPOINT, NumericError, load_model, train
from .training import infer as run_inference

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="override the seed of this stage")
    parser.add_argument("--out", type=Path, default=Path("run"), help="output directory (default: ./run)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tadquery", description="Query-based temporal action detection.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-data", help="generate the synthetic dataset into OUT/data")
    _common(p)

    p = sub.add_parser("train", help="train a detector; logs and checkpoints go to OUT")
    _common(p)
    p.add_argument("--data", type=Path, help="dataset directory (default: generate from the config)")

    p = sub.add_parser("infer", help="write OUT/detections.tsv for one split")
    _common(p)
    p.add_argument("--checkpoint", type=Path, help=f"checkpoint path (default: OUT/checkpoints/{FINAL_CHECKPOINT})")
    p.add_argument("--data", type=Path)
    p.add_argument("--split", choices=("train", "val", "all"), default="val")

    p = sub.add_parser("eval", help="score a detection file; writes OUT/report.json")
    _common(p)
    p.add_argument("--detections", type=Path, help="detection file (default: OUT/detections.tsv)")
    p.add_argument("--data", type=Path)
    p.add_argument("--split", choices=("train", "val", "all"), default="val")

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite at the tiny config")
    _common(p)
    p.add_argument("--primitives-only", action="store_true", help="skip the full-loss check")

    p = sub.add_parser("report", help="render an evaluation report as a table")
    _common(p)
    p.add_argument("--report", type=Path, help="report JSON (default: OUT/report.json)")
    return parser


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is None:
        return cfg
    data = cfg.to_dict()
    if args.command == "gen-data":
        data["data"]["seed"] = args.seed
    else:
        data["train"]["seed"] = args.seed
    return config_from_dict(data)


def _dataset(args, cfg: RunConfig):
    return load_dataset(args.data) if getattr(args, "data", None) else generate_dataset(cfg.data)


def _videos(dataset, split: str):
    return dataset.videos if split == "all" else dataset.split(split)


def _gen_data(args) -> int:
    cfg = _config(args)
    path = save_dataset(args.out / "data", generate_dataset(cfg.data))
    print(f"wrote {path}")
    return EXIT_OK


def _train(args) -> int:
    cfg = _config(args)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "config.json").write_text(cfg.to_json() + "\n")
    with open(args.out / "train.log", "w") as log:
        result = train(cfg, _dataset(args, cfg), args.out, log)
    print(f"steps={result.steps} seconds={result.seconds:.1f} final={result.checkpoints[-1]}")
    return EXIT_OK


def _infer(args) -> int:
    ckpt = args.checkpoint or args.out / "checkpoints" / FINAL_CHECKPOINT
    model = load_model(ckpt, _config(args) if args.config else None)
    dataset = _dataset(args, model.config)
    records = run_inference(model, _videos(dataset, args.split))
    args.out.mkdir(parents=True, exist_ok=True)
    write_detections(args.out / "detections.tsv", records)
    print(f"wrote {len(records)} detections to {args.out / 'detections.tsv'}")
    return EXIT_OK


def _eval(args) -> int:
    cfg = _config(args)
    dataset = _dataset(args, cfg)
    detections = read_detections(args.detections or args.out / "detections.tsv")
    gts = dataset.ground_truths(None if args.split == "all" else args.split)
    report = evaluate_map(detections, gts)
    args.out.mkdir(parents=True, exist_ok=True)
    save_report(args.out / "report.json", report)
    print(report.table())
    return EXIT_OK


def _gradcheck(args) -> int:
    from .diagnostics import FIXTURE_SEED, run_gradcheck

    report = run_gradcheck(seed=FIXTURE_SEED if args.seed is None else args.seed,
                           include_loss=not args.primitives_only)
    for line in report.lines():
        print(line)
    results = list(report.primitives.values()) + ([report.total_loss] if report.total_loss else [])
    print(f"max_rel_error={max(r.max_rel_error for r in results):.3e}")
    return EXIT_OK if report.passed else EXIT_NUMERIC


def _report(args) -> int:
    print(load_report(args.report or args.out / "report.json").table())
    return EXIT_OK


COMMANDS = {"gen-data": _gen_data, "train": _train, "infer": _infer, "eval": _eval,
            "gradcheck": _gradcheck, "report": _report}


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (NumericError, FloatingPointError, DomainError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DatasetError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
