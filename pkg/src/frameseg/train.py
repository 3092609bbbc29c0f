"""Training driver: epochs, schedules, loss curves, validation, checkpoints.

One optimizer update consumes ``batch_size * grad_accum`` samples (the
accumulation window is collated into a single batch, which keeps the
global-soft-count segmentation losses defined over the whole effective
batch). The loss-curve CSV gets one row per update with all four
component losses, the total, the learning rate and the active loss
weights, at full float precision.

All shuffling and variant picking derives from (seed, epoch), never from
ambient RNG state, so resuming from an epoch checkpoint reproduces the
uninterrupted trajectory exactly.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from .config import RunConfig, config_hash
from .data import VideoSample, dataset_stats, load_corpus, variation_pick
from .inference import frame_accuracy, predict_samples
from .losses import LossParams, lr_schedule, weight_schedule
from .metrics import full_report
from .model import (NumericsError, ToyDecoder, collate, config_for_corpus,
                    encode_sample, load_checkpoint, make_optimizer,
                    save_checkpoint, train_step)

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ("epoch", "step", "lm", "bce", "tv", "gd", "total", "lr",
                 "w_lm", "w_bce", "w_tv", "w_gd")
VAL_COLUMNS = ("epoch", "R1@0.5", "R1@0.7", "mAP@0.5", "mAP@0.75", "mAP_avg",
               "HL_mAP", "HL_HIT@1", "frame_accuracy")


@dataclass
class TrainResult:
    run_dir: str
    epochs_run: int
    final_metrics: dict[str, float] = field(default_factory=dict)
    curve_path: str = ""
    val_path: str = ""


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def _epoch_rng(seed: int, epoch: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([seed, 2, epoch, stream])))


def _resolve_pos_weight(cfg: RunConfig, samples: Sequence[VideoSample]) -> float:
    if cfg.pos_weight_mode == "fixed":
        return cfg.bce_pos_weight
    stats = dataset_stats(samples, cfg.f)
    ratio = stats["bg_fg_ratio"]
    if not math.isfinite(ratio) or ratio <= 0:
        logger.warning("corpus bg:fg ratio %s unusable; keeping configured "
                       "pos_weight %g", ratio, cfg.bce_pos_weight)
        return cfg.bce_pos_weight
    logger.info("pos_weight recomputed from corpus: %.4f", ratio)
    return ratio


def _validate(model: ToyDecoder, val_samples: Sequence[VideoSample],
              cfg: RunConfig) -> dict[str, float]:
    records, masks = predict_samples(
        model, val_samples, n_beams=cfg.n_beams, constrained=cfg.constrained,
        clip_len=cfg.clip_len, variation="middle")
    gt_spans = {s.qid: s.gt_spans for s in val_samples}
    gt_sal = {s.qid: s.gt_clip_saliency for s in val_samples
              if s.gt_clip_saliency is not None}
    metrics = full_report(records, gt_spans,
                          gt_sal if len(gt_sal) == len(val_samples) else None)
    metrics["frame_accuracy"] = 100.0 * frame_accuracy(masks, val_samples, cfg.f)
    return metrics


def run_training(
    cfg: RunConfig,
    corpus_dir: str,
    out_dir: str,
    val_corpus_dir: Optional[str] = None,
    resume: Optional[str] = None,
) -> TrainResult:
    """Train on a corpus directory; returns paths and final metrics.

    Writes under ``out_dir``: run_config.json, loss_curve.csv,
    val_metrics.csv and checkpoints/epoch_NNN.npz (one per epoch).
    A non-finite loss saves checkpoints/abort.npz and re-raises.
    """
    samples = load_corpus(corpus_dir)
    if not samples:
        raise ValueError(f"no training samples in {corpus_dir}")
    if any(s.features is None for s in samples):
        raise ValueError("training corpus has samples without features")
    val_samples = load_corpus(val_corpus_dir) if val_corpus_dir else []

    os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
    chash = config_hash(cfg)
    provenance = {"config_hash": chash, "seed": cfg.seed,
                  "corpus_dir": corpus_dir, "val_corpus_dir": val_corpus_dir}
    with open(os.path.join(out_dir, "run_config.json"), "w", encoding="utf-8") as fh:
        json.dump({**provenance, "config": cfg.echo()}, fh, indent=1)

    pos_weight = _resolve_pos_weight(cfg, samples)
    params = LossParams(pos_weight=pos_weight, alpha=cfg.tversky_alpha,
                        beta=cfg.tversky_beta, epsilon=cfg.epsilon)

    torch.manual_seed(cfg.seed)
    model_cfg = config_for_corpus(
        samples, cfg.f, cfg.feature_dim, d_model=cfg.d_model,
        n_layers=cfg.n_layers, n_heads=cfg.n_heads)
    model = ToyDecoder(model_cfg)
    optimizer = make_optimizer(model, lr=cfg.lr, weight_decay=cfg.weight_decay)

    start_epoch = 1
    if resume:
        meta = load_checkpoint(resume, model, optimizer)
        start_epoch = int(meta["epoch"]) + 1
        logger.info("resumed from %s at epoch %d", resume, meta["epoch"])

    effective_batch = cfg.batch_size * cfg.grad_accum
    steps_per_epoch = math.ceil(len(samples) / effective_batch)
    total_steps = steps_per_epoch * cfg.epochs
    warmup_steps = steps_per_epoch * cfg.warmup_epochs

    curve_path = os.path.join(out_dir, "loss_curve.csv")
    val_path = os.path.join(out_dir, "val_metrics.csv")
    curve_mode = "a" if resume and os.path.exists(curve_path) else "w"
    curve = open(curve_path, curve_mode, encoding="utf-8")
    val_file = open(val_path, curve_mode, encoding="utf-8")
    if curve_mode == "w":
        curve.write(f"# config_hash={chash} seed={cfg.seed}\n")
        curve.write(",".join(CURVE_COLUMNS) + "\n")
        val_file.write(f"# config_hash={chash} seed={cfg.seed}\n")
        val_file.write(",".join(VAL_COLUMNS) + "\n")

    final_metrics: dict[str, float] = {}
    try:
        for epoch in range(start_epoch, cfg.epochs + 1):
            weights = weight_schedule(epoch, cfg.warmup_epochs,
                                      cfg.weights_start(), cfg.weights_end())
            order = _epoch_rng(cfg.seed, epoch, 0).permutation(len(samples))
            vrng = _epoch_rng(cfg.seed, epoch, 1)
            for step in range(steps_per_epoch):
                idx = order[step * effective_batch:(step + 1) * effective_batch]
                chosen = [samples[i] for i in idx]
                inputs = [
                    encode_sample(s, variation_pick(s, cfg.variation, vrng),
                                  model_cfg)
                    for s in chosen
                ]
                batch = collate(inputs, model_cfg.vocab.pad_id)
                global_step = (epoch - 1) * steps_per_epoch + step + 1
                lr = lr_schedule(global_step, total_steps, warmup_steps, cfg.lr)
                try:
                    stats = train_step(
                        model, optimizer, batch, weights, params, lr=lr,
                        context=f"(epoch {epoch}, step {step + 1})")
                except NumericsError:
                    abort_path = os.path.join(out_dir, "checkpoints", "abort.npz")
                    save_checkpoint(abort_path, model, optimizer, epoch=epoch,
                                    seed=cfg.seed,
                                    extra_meta={"config_hash": chash})
                    logger.error("non-finite loss; state saved to %s", abort_path)
                    raise
                row = [str(epoch), str(step + 1)]
                row += [_fmt(stats[k]) for k in ("lm", "bce", "tv", "gd", "total")]
                row += [_fmt(lr)]
                row += [_fmt(v) for v in weights.as_tuple()]
                curve.write(",".join(row) + "\n")
            curve.flush()

            ckpt = os.path.join(out_dir, "checkpoints", f"epoch_{epoch:03d}.npz")
            save_checkpoint(ckpt, model, optimizer, epoch=epoch, seed=cfg.seed,
                            extra_meta={"config_hash": chash})

            if val_samples and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
                metrics = _validate(model, val_samples, cfg)
                final_metrics = metrics
                vrow = [str(epoch)] + [_fmt(metrics.get(c, float("nan")))
                                       for c in VAL_COLUMNS[1:]]
                val_file.write(",".join(vrow) + "\n")
                val_file.flush()
                logger.info(
                    "epoch %d: mAP_avg=%.2f HIT@1=%.2f frame_acc=%.2f", epoch,
                    metrics.get("mAP_avg", float("nan")),
                    metrics.get("HL_HIT@1", float("nan")),
                    metrics.get("frame_accuracy", float("nan")))
    finally:
        curve.close()
        val_file.close()

    return TrainResult(run_dir=out_dir, epochs_run=cfg.epochs,
                       final_metrics=final_metrics, curve_path=curve_path,
                       val_path=val_path)
