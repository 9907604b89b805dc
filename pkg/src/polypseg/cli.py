"""Command-line entry point: prepare, train, evaluate, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from polypseg import datapipe, evaluator
from polypseg.errors import ConfigError, DomainError, LoadError, NonFiniteLossError, ShapeError
from polypseg.models import ARCHS, PRESETS, ModelConfig, build_model
from polypseg.trainer import TrainConfig, load_checkpoint, train

log = logging.getLogger("polypseg")

EXIT_OK, EXIT_USAGE, EXIT_NONFINITE = 0, 2, 3
DEFAULT_SIZE = 256
DEFAULT_TRAIN_FRACTION = 0.8


def _fail(message: str, code: int = EXIT_USAGE) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _augment_list(text: str) -> list[str]:
    names = [t.strip() for t in text.split(",") if t.strip()]
    bad = [n for n in names if n not in ("rotation", "zoom")]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown augmentation(s) {bad}; choose from rotation, zoom")
    return names


def cmd_prepare(args) -> int:
    samples = datapipe.load_dataset(args.input)
    if not samples:
        return _fail("no image/mask pairs")
    prepared = datapipe.prepare(
        samples, crop=args.crop, margin=args.margin, augment_ops=args.augment, seed=args.seed
    )
    n = datapipe.save_dataset(prepared, args.output)
    print(n)
    return EXIT_OK


def _read_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return doc


def _model_config(args, doc: dict) -> ModelConfig:
    fields = dict(doc.get("model", {}))
    if args.preset:
        fields.update(PRESETS[args.preset])
    if args.arch:
        fields["arch"] = args.arch
    if args.seed is not None:
        fields.setdefault("seed", args.seed)
    if "arch" not in fields:
        raise ConfigError(f"no architecture given; use --arch ({', '.join(ARCHS)}) or --preset")
    return ModelConfig.from_dict(fields)


def cmd_train(args) -> int:
    doc = _read_config(args.config)
    train_fields = {k: v for k, v in doc.items() if k not in ("model", "image_size", "train_fraction")}
    for flag, key in (("epochs", "epochs"), ("batch_size", "batch_size"), ("lr", "learning_rate"), ("seed", "seed")):
        if getattr(args, flag) is not None:
            train_fields[key] = getattr(args, flag)
    train_fields["checkpoint_path"] = args.out
    tcfg = TrainConfig.from_dict(train_fields)
    mcfg = _model_config(args, doc)
    size = args.size or doc.get("image_size", DEFAULT_SIZE)
    fraction = doc.get("train_fraction", DEFAULT_TRAIN_FRACTION)

    samples = datapipe.load_dataset(args.data)
    if len(samples) < 2:
        return _fail(f"need at least 2 image/mask pairs in {args.data}, found {len(samples)}")
    samples = [datapipe.resize(s, size, size) for s in samples]
    train_set, val_set = datapipe.split(samples, fraction, tcfg.seed)
    if not train_set or not val_set:
        return _fail(f"train_fraction {fraction} leaves an empty split for {len(samples)} samples")

    # output paths stay out of the checkpoint so identical runs give identical bytes
    recorded = {k: v for k, v in tcfg.to_dict().items() if k != "checkpoint_path"}
    meta = {"image_size": [size, size], "preset": args.preset, "train_config": recorded}
    model = build_model(mcfg)
    try:
        _, history = train(model, train_set, val_set, tcfg, meta=meta)
    except NonFiniteLossError as exc:
        return _fail(str(exc), EXIT_NONFINITE)
    history_path = Path(args.history or f"{args.out}.history.jsonl")
    history_path.write_text(history.to_jsonl(), encoding="utf-8")
    best = max(r.val_dice for r in history.records)
    print(f"trained {mcfg.arch} for {len(history)} epochs; best val_dice {best:.4f}; checkpoint {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if not 0.0 < args.threshold < 1.0:
        return _fail("threshold must be in (0,1)")
    model, meta = load_checkpoint(args.checkpoint)
    samples = datapipe.load_dataset(args.data)
    if not samples:
        return _fail(f"no image/mask pairs in {args.data}")
    size = [args.size, args.size] if args.size else meta.get("image_size")
    if size:
        samples = [datapipe.resize(s, size[0], size[1]) for s in samples]
    run_id = args.run_id or meta.get("preset") or Path(args.checkpoint).stem
    report = evaluator.evaluate(model, samples, args.threshold, run_id)
    Path(args.out).write_text(report.to_json(), encoding="utf-8")
    print(evaluator.format_table([report], "csv"), end="")
    return EXIT_OK


def cmd_report(args) -> int:
    reports = []
    for path in args.inputs:
        try:
            reports.append(evaluator.RunReport.load(path))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            return _fail(f"cannot read report {path}: {exc}")
    print(evaluator.format_table(reports, args.format), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polypseg", description=__doc__, allow_abbrev=False)
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="crop/augment a Kvasir-SEG style dataset", allow_abbrev=False)
    p.add_argument("--input", required=True, help="directory with images/ and masks/")
    p.add_argument("--output", required=True)
    p.add_argument("--crop", action="store_true", help="append a box-cropped copy of every sample")
    p.add_argument("--margin", type=float, default=datapipe.DEFAULT_MARGIN)
    p.add_argument("--augment", type=_augment_list, default=[], help="comma list: rotation,zoom")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train one architecture", allow_abbrev=False)
    p.add_argument("--config", help="JSON train config (optional 'model', 'image_size', 'train_fraction' keys)")
    p.add_argument("--arch", choices=ARCHS)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", help="JSON-lines history path (default: <out>.history.jsonl)")
    p.add_argument("--size", type=int, help=f"square training resolution (default {DEFAULT_SIZE})")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset", allow_abbrev=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--threshold", type=float, default=evaluator.DEFAULT_THRESHOLD)
    p.add_argument("--out", required=True, help="RunReport JSON path")
    p.add_argument("--run-id", dest="run_id")
    p.add_argument("--size", type=int, help="resize to this square size (default: training size)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render RunReports as a table", allow_abbrev=False)
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--format", choices=("csv", "markdown"), default="csv")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, DomainError, LoadError, ShapeError) as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
