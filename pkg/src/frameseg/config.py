"""Run configuration: one flat record of every training hyperparameter.

Values come from three layers with increasing precedence: built-in
defaults, a flat ``KEY=VALUE`` config file, and command-line overrides.
Every resolved override is logged. The full configuration (plus its
sha256 hash and the seed) is echoed into every artifact a command writes,
so any output can be traced back to the exact settings that produced it.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
from dataclasses import dataclass
from typing import Mapping, Optional

from .losses import LossWeights

logger = logging.getLogger(__name__)


@dataclass
class RunConfig:
    # optimization
    seed: int = 0
    epochs: int = 11
    warmup_epochs: int = 6
    batch_size: int = 16
    grad_accum: int = 4
    lr: float = 2e-5
    weight_decay: float = 0.005
    # loss shape
    tversky_alpha: float = 0.3
    tversky_beta: float = 0.7
    bce_pos_weight: float = 2.3378
    pos_weight_mode: str = "fixed"       # fixed | auto (recompute from corpus)
    epsilon: float = 1e-6
    # loss-weight ramp endpoints (epoch 1 -> epoch warmup_epochs + 1)
    w_lm_start: float = 1.0
    w_bce_start: float = 0.0
    w_tv_start: float = 0.0
    w_gd_start: float = 0.0
    w_lm_end: float = 0.2
    w_bce_end: float = 0.2667
    w_tv_end: float = 0.2667
    w_gd_end: float = 0.2667
    # sampling / decoding
    f: int = 25
    n_beams: int = 2
    constrained: bool = True
    clip_len: float = 2.0
    variation: str = "random"            # training-time feature variant policy
    eval_every: int = 1
    # toy model dimensions
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    feature_dim: int = 16
    # synthetic corpus
    n_samples: int = 100
    duration: float = 50.0
    noise_std: float = 0.05
    seg_min: int = 1
    seg_max: int = 3

    def __post_init__(self) -> None:
        for name in ("epochs", "warmup_epochs", "batch_size", "grad_accum",
                     "f", "n_beams", "d_model", "n_layers", "n_heads",
                     "feature_dim", "eval_every", "seg_min", "seg_max"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.pos_weight_mode not in ("fixed", "auto"):
            raise ValueError(f"bad pos_weight_mode {self.pos_weight_mode!r}")
        if self.variation not in ("random", "left", "middle", "right"):
            raise ValueError(f"bad variation {self.variation!r}")

    def weights_start(self) -> LossWeights:
        return LossWeights(self.w_lm_start, self.w_bce_start,
                           self.w_tv_start, self.w_gd_start)

    def weights_end(self) -> LossWeights:
        return LossWeights(self.w_lm_end, self.w_bce_end,
                           self.w_tv_end, self.w_gd_end)

    def echo(self) -> dict:
        return dataclasses.asdict(self)


def config_hash(cfg: RunConfig) -> str:
    """sha256 over the canonical sorted key=value rendering."""
    lines = sorted(f"{k}={v!r}" for k, v in cfg.echo().items())
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()[:16]


def parse_config_file(path: str) -> dict[str, str]:
    """Flat KEY=VALUE lines; '#' starts a comment; blank lines ignored."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{line_no}: expected KEY=VALUE, got {raw!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _coerce(field: dataclasses.Field, raw: str):
    if field.type in ("int", int):
        return int(raw)
    if field.type in ("float", float):
        return float(raw)
    if field.type in ("bool", bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"cannot parse boolean from {raw!r}")
    return raw


def make_config(config_file: Optional[str] = None,
                overrides: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Resolve defaults < config file < overrides, logging each layer."""
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    values: dict = {}
    if config_file:
        for key, raw in parse_config_file(config_file).items():
            if key not in fields:
                raise ValueError(f"unknown config key {key!r} in {config_file}")
            values[key] = _coerce(fields[key], raw)
            logger.info("config file: %s=%s", key, values[key])
    for key, raw in (overrides or {}).items():
        if key not in fields:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = _coerce(fields[key], str(raw))
        logger.info("config override: %s=%s", key, values[key])
    return RunConfig(**values)
