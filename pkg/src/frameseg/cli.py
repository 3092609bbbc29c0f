"""Command-line entry points.

Subcommands: synth | train | predict | score | stats | prompt.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

Configuration precedence is command-line --set overrides, then the
--config file, then built-in defaults; every artifact written embeds the
resolved config hash and seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import RunConfig, config_hash, make_config
from .data import (DataError, SynthConfig, build_prompt, dataset_stats,
                   load_corpus, load_qvh_jsonl, save_corpus, synth_generate)
from .inference import load_predictions, predict_samples, write_predictions
from .metrics import full_report, per_query_report
from .model import NumericsError, restore_model
from .train import run_training

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on usage errors; we reserve 2 for
    data errors, so remap usage failures to 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return make_config(args.config, overrides)


def _load_gt(path: str):
    if os.path.isdir(path):
        return load_corpus(path)
    return load_qvh_jsonl(path)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    out = args.out
    if os.path.isdir(out) and os.listdir(out) and not args.force:
        logger.error("output dir %s exists and is not empty (use --force)", out)
        return EXIT_DATA
    synth_cfg = SynthConfig(
        n_samples=cfg.n_samples, f=cfg.f, duration=cfg.duration,
        feature_dim=cfg.feature_dim, n_fg_segments=(cfg.seg_min, cfg.seg_max),
        noise_std=cfg.noise_std, seed=cfg.seed)
    samples = synth_generate(synth_cfg)
    if not samples:
        logger.warning("n_samples=0: writing an empty corpus")
    save_corpus(samples, out, meta={
        "config_hash": config_hash(cfg), "seed": cfg.seed,
        "config": cfg.echo()})
    print(f"wrote {len(samples)} samples to {out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    result = run_training(cfg, args.corpus, args.out,
                          val_corpus_dir=args.val, resume=args.resume)
    print(f"training finished; artifacts in {result.run_dir}")
    if result.final_metrics:
        for key, value in result.final_metrics.items():
            print(f"  {key}: {value:.2f}")
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    model, meta = restore_model(args.checkpoint)
    if model.cfg.f != cfg.f:
        logger.error("checkpoint f=%d does not match configured f=%d",
                     model.cfg.f, cfg.f)
        return EXIT_DATA
    samples = load_corpus(args.corpus)
    missing = [s.qid for s in samples if s.features is None]
    if missing:
        logger.error("%d samples have no features (first: %s)",
                     len(missing), missing[:5])
        return EXIT_DATA
    records, _ = predict_samples(
        model, samples, n_beams=cfg.n_beams,
        constrained=cfg.constrained and not args.unconstrained,
        clip_len=cfg.clip_len, variation="middle")
    write_predictions(records, args.out)
    with open(args.out + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump({"config_hash": config_hash(cfg), "seed": cfg.seed,
                   "checkpoint": args.checkpoint,
                   "checkpoint_epoch": meta.get("epoch")}, fh, indent=1)
    print(f"wrote {len(records)} predictions to {args.out}")
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    records = load_predictions(args.predictions)
    gt = _load_gt(args.ground_truth)
    gt_qids = {s.qid for s in gt}
    pred_qids = {r.qid for r in records}
    if gt_qids != pred_qids:
        missing = sorted(gt_qids - pred_qids)[:10]
        extra = sorted(pred_qids - gt_qids)[:10]
        logger.error("qid sets differ: %d missing (e.g. %s), %d extra (e.g. %s)",
                     len(gt_qids - pred_qids), missing,
                     len(pred_qids - gt_qids), extra)
        return EXIT_DATA
    gt_spans = {s.qid: s.gt_spans for s in gt}
    gt_sal = {s.qid: s.gt_clip_saliency for s in gt
              if s.gt_clip_saliency is not None}
    report = full_report(records, gt_spans,
                         gt_sal if len(gt_sal) == len(gt) else None)
    width = max(len(k) for k in report)
    for key, value in report.items():
        print(f"{key:<{width}}  {value:7.2f}")
    payload = {"config_hash": config_hash(cfg), "seed": cfg.seed,
               "metrics": report}
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
    breakdown_path = os.path.splitext(args.out)[0] + "_per_query.jsonl"
    with open(breakdown_path, "w", encoding="utf-8") as fh:
        for row in per_query_report(records, gt_spans):
            fh.write(json.dumps(row) + "\n")
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    samples = _load_gt(args.corpus)
    if not samples:
        logger.error("no samples in %s", args.corpus)
        return EXIT_DATA
    stats = dataset_stats(samples, args.f)
    print(f"samples        {stats['n_samples']}")
    print(f"bg frames      {stats['bg_frames']}")
    print(f"fg frames      {stats['fg_frames']}")
    print(f"bg:fg ratio    {stats['bg_fg_ratio']:.4f}")
    print(f"bg fraction    {100.0 * stats['bg_fraction']:.2f}%")
    print("duration histogram (10 s buckets):")
    for bucket, count in stats["duration_histogram"].items():
        print(f"  [{bucket:4d},{bucket + 10:4d})  {count}")
    return EXIT_OK


def cmd_prompt(args: argparse.Namespace) -> int:
    sys.stdout.write(build_prompt(args.query, args.f) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# wiring
# ---------------------------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat KEY=VALUE config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="frameseg",
                     description="binary frame-mask moment retrieval and "
                                 "highlight detection at toy scale")
    parser.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    _add_config_flags(p)
    p.add_argument("out", help="output corpus directory")
    p.add_argument("--force", action="store_true",
                   help="overwrite a non-empty output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the toy decoder")
    _add_config_flags(p)
    p.add_argument("corpus", help="training corpus directory")
    p.add_argument("out", help="run output directory")
    p.add_argument("--val", help="validation corpus directory")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="decode a corpus with a checkpoint")
    _add_config_flags(p)
    p.add_argument("checkpoint")
    p.add_argument("corpus", help="corpus directory with features")
    p.add_argument("out", help="prediction JSONL path")
    p.add_argument("--unconstrained", action="store_true",
                   help="decode over the full vocabulary")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("score", help="score predictions against ground truth")
    _add_config_flags(p)
    p.add_argument("predictions", help="prediction JSONL")
    p.add_argument("ground_truth", help="ground-truth JSONL file or corpus dir")
    p.add_argument("--out", default="metrics.json")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("stats", help="dataset statistics")
    p.add_argument("corpus", help="JSONL file or corpus dir")
    p.add_argument("--f", type=int, default=25, help="frames per video")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("prompt", help="print the instruction prompt")
    p.add_argument("query")
    p.add_argument("--f", type=int, default=25, help="frames per video")
    p.set_defaults(func=cmd_prompt)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericsError as exc:
        logger.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (DataError, OSError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
