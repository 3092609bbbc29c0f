"""Training objectives over per-frame foreground probabilities.

Four terms are combined into one scalar: the causal LM loss on answer
tokens plus three segmentation losses (weighted BCE, Tversky, generalized
Dice) computed on the probabilities obtained from the two-logit softmax.
The segmentation losses use global soft counts over the whole batch, so a
batch mixing hard and easy samples is balanced as a unit rather than
per sample.

Also here: the linear loss-weight ramp and the warmup+cosine learning-rate
schedule used during training, and a finite-difference gradient checker.

All loss functions are differentiable torch expressions and preserve the
dtype of their inputs (use float64 inputs for gradient checking).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import torch

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

@dataclass
class SegBatch:
    """Foreground probabilities and binary labels, both (batch, frames).

    ``probs`` come from the two-logit softmax so they live in [0, 1];
    ``labels`` are the foreground plane of the one-hot targets (background
    is derived as 1 - fg where needed).
    """

    probs: torch.Tensor
    labels: torch.Tensor

    def __post_init__(self) -> None:
        if self.probs.shape != self.labels.shape:
            raise ValueError(
                f"probs shape {tuple(self.probs.shape)} != labels shape "
                f"{tuple(self.labels.shape)}")
        if self.probs.numel() == 0:
            raise ValueError("empty batch")
        with torch.no_grad():
            if self.probs.min() < 0 or self.probs.max() > 1:
                raise ValueError("probs outside [0, 1]")
            if not torch.all((self.labels == 0) | (self.labels == 1)):
                raise ValueError("labels must be binary")


@dataclass(frozen=True)
class LossWeights:
    """Scalar weights of the four loss components."""

    w_lm: float
    w_bce: float
    w_tv: float
    w_gd: float

    def __post_init__(self) -> None:
        for name, v in self.as_dict().items():
            if v < 0:
                raise ValueError(f"{name} must be >= 0, got {v}")

    def as_dict(self) -> dict[str, float]:
        return {"w_lm": self.w_lm, "w_bce": self.w_bce,
                "w_tv": self.w_tv, "w_gd": self.w_gd}

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w_lm, self.w_bce, self.w_tv, self.w_gd)


@dataclass(frozen=True)
class LossParams:
    """Shape parameters of the segmentation losses.

    alpha/beta trade false positives against false negatives in the
    Tversky index (beta > alpha favors recall); alpha + beta = 1 follows
    the usual convention, other combinations are allowed but logged.
    pos_weight up-weights foreground in the BCE to offset class imbalance.
    epsilon smooths denominators and clamps probabilities before logs.
    """

    pos_weight: float = 2.3378
    alpha: float = 0.3
    beta: float = 0.7
    epsilon: float = 1e-6

    def __post_init__(self) -> None:
        if not (self.pos_weight > 0):
            raise ValueError(f"pos_weight must be > 0, got {self.pos_weight}")
        if not (0 < self.alpha < 1 and 0 < self.beta < 1):
            raise ValueError(
                f"alpha/beta must lie in (0, 1), got {self.alpha}/{self.beta}")
        if not (self.epsilon > 0):
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if abs(self.alpha + self.beta - 1.0) > 1e-9:
            logger.warning(
                "alpha + beta = %g deviates from 1; allowed but unusual",
                self.alpha + self.beta)


# ---------------------------------------------------------------------------
# loss terms
# ---------------------------------------------------------------------------

def bce_loss(batch: SegBatch, pos_weight: float, epsilon: float = 1e-6) -> torch.Tensor:
    """Positive-weighted binary cross-entropy, mean over all elements.

    -[pos_weight * y * ln p + (1 - y) * ln(1 - p)] with p clamped to
    [epsilon, 1 - epsilon] before the logs.
    """
    p = batch.probs.clamp(epsilon, 1.0 - epsilon)
    y = batch.labels.to(p.dtype)
    per_elem = -(pos_weight * y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p))
    return per_elem.mean()


def tversky_loss(
    batch: SegBatch,
    alpha: float = 0.3,
    beta: float = 0.7,
    epsilon: float = 1e-6,
) -> torch.Tensor:
    """Soft Tversky loss over global batch counts.

    1 - (TP + eps) / (TP + alpha*FP + beta*FN + eps) with soft counts
    TP = sum(p*y), FP = sum(p*(1-y)), FN = sum((1-p)*y). At
    alpha = beta = 0.5 this reduces to the soft Dice loss.
    """
    p = batch.probs
    y = batch.labels.to(p.dtype)
    tp = (p * y).sum()
    fp = (p * (1.0 - y)).sum()
    fn = ((1.0 - p) * y).sum()
    return 1.0 - (tp + epsilon) / (tp + alpha * fp + beta * fn + epsilon)


def generalized_dice_loss(batch: SegBatch, epsilon: float = 1e-6) -> torch.Tensor:
    """Class-weighted two-plane Dice loss over global batch counts.

    With foreground plane (p, g) and derived background plane
    (1 - p, 1 - g), per-class soft overlap S_l = sum(p_l * g_l), class
    volume G_l = sum(g_l), and class weight w_l = 1 / (G_l + eps)^2:

        loss = 1 - (2 * sum_l w_l * S_l + eps) / (sum_l w_l * (G_l + S_l) + eps)

    The inverse-square volume weights balance scarce against abundant
    classes inside the batch; the eps guard keeps an absent class finite
    (its weight blows up but multiplies exact zeros).
    """
    p_fg = batch.probs
    g_fg = batch.labels.to(p_fg.dtype)
    num = torch.zeros((), dtype=p_fg.dtype)
    den = torch.zeros((), dtype=p_fg.dtype)
    for p, g in ((p_fg, g_fg), (1.0 - p_fg, 1.0 - g_fg)):
        overlap = (p * g).sum()
        volume = g.sum()
        w = 1.0 / (volume + epsilon) ** 2
        num = num + w * overlap
        den = den + w * (volume + overlap)
    return 1.0 - (2.0 * num + epsilon) / (den + epsilon)


def lm_loss(token_logits: torch.Tensor, target_ids: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood of targets under the token softmax.

    ``token_logits`` is (positions, vocab) restricted to supervised answer
    positions; prompt positions must already be excluded.
    """
    if token_logits.ndim != 2:
        raise ValueError(
            f"token_logits must be (positions, vocab), got shape "
            f"{tuple(token_logits.shape)}")
    if token_logits.shape[0] == 0:
        raise ValueError("no supervised positions")
    if target_ids.shape != token_logits.shape[:1]:
        raise ValueError(
            f"target_ids shape {tuple(target_ids.shape)} does not match "
            f"{token_logits.shape[0]} positions")
    logp = torch.log_softmax(token_logits, dim=-1)
    picked = logp.gather(1, target_ids.view(-1, 1)).squeeze(1)
    return -picked.mean()


def combined_loss(l_lm, l_bce, l_tv, l_gd, w: LossWeights):
    """Weighted sum of the four components (works on floats or tensors)."""
    return w.w_lm * l_lm + w.w_bce * l_bce + w.w_tv * l_tv + w.w_gd * l_gd


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------

def weight_schedule(
    epoch: int,
    warmup_epochs: int,
    start: LossWeights,
    end: LossWeights,
) -> LossWeights:
    """Linear ramp of loss weights from ``start`` at epoch 1 to ``end`` at
    epoch ``warmup_epochs + 1``; frozen at ``end`` afterwards.

    Epochs are 1-based.
    """
    if warmup_epochs < 1:
        raise ValueError(f"warmup_epochs must be >= 1, got {warmup_epochs}")
    if epoch < 1:
        raise ValueError(f"epoch must be >= 1, got {epoch}")
    t = min((epoch - 1) / warmup_epochs, 1.0)
    mix = lambda a, b: (1.0 - t) * a + t * b
    return LossWeights(
        w_lm=mix(start.w_lm, end.w_lm),
        w_bce=mix(start.w_bce, end.w_bce),
        w_tv=mix(start.w_tv, end.w_tv),
        w_gd=mix(start.w_gd, end.w_gd),
    )


def lr_schedule(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear warmup 0 -> base_lr, then cosine decay base_lr -> 0."""
    if not (0 <= step <= total_steps):
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    progress = (step - warmup_steps) / span
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def grad_check(
    loss_fn: Callable[[torch.Tensor], torch.Tensor],
    input_point: torch.Tensor,
    perturbation: float = 1e-6,
) -> float:
    """Max relative error between autograd and central finite differences.

    ``loss_fn`` maps a tensor to a scalar; it is evaluated 2*numel extra
    times for the two-sided differences. Relative error per element is
    |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-6). Use float64 inputs; at
    h = 1e-6 the difference quotient carries ~1e-10 absolute error.
    """
    x = input_point.detach().clone().double().requires_grad_(True)
    loss = loss_fn(x)
    if not torch.isfinite(loss):
        raise ValueError(f"loss_fn returned non-finite value {loss.item()}")
    (grad,) = torch.autograd.grad(loss, x)

    flat = x.detach().clone().view(-1)
    fd = torch.zeros_like(flat)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + perturbation
        hi = loss_fn(flat.view(x.shape)).item()
        flat[i] = orig - perturbation
        lo = loss_fn(flat.view(x.shape)).item()
        flat[i] = orig
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise ValueError(f"non-finite loss during perturbation of element {i}")
        fd[i] = (hi - lo) / (2.0 * perturbation)

    ga = grad.view(-1)
    denom = torch.maximum(torch.maximum(ga.abs(), fd.abs()),
                          torch.full_like(fd, 1e-6))
    return float(((ga - fd).abs() / denom).max())
