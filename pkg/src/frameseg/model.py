"""Toy interleaved causal decoder and its training/decoding machinery.

The decoder consumes the instruction prompt as word-level tokens with one
embedding slot per frame (the ``<image>`` placeholder positions are
replaced by a linear projection of that frame's feature vector) and is
supervised on the f + 1 answer tokens: f binary mask characters plus one
end-of-sequence token. '0' and '1' are guaranteed single tokens of the
vocabulary, so vocabulary logits at the answer positions double as
per-frame background/foreground scores via a two-logit softmax.

Training follows a fixed recipe per batch: forward, slice the answer
logits down to the two mask-token columns, softmax, compute the three
segmentation losses next to the causal LM loss, combine with the epoch's
weights, backprop, and apply one decoupled-weight-decay Adam update.

Inference uses (optionally constrained) beam search; the constrained mode
only ever proposes '0'/'1' for the first f steps and the end token after,
so its output always parses strictly.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .data import SYSTEM_PROMPT, VideoSample, build_prompt
from .losses import (LossParams, LossWeights, SegBatch, bce_loss,
                     combined_loss, generalized_dice_loss, lm_loss,
                     tversky_loss)
from .maskcodec import moments_to_mask
from .timeline import Timeline

logger = logging.getLogger(__name__)

PAD, UNK, EOS, IMG = "<pad>", "<unk>", "<eos>", "<image>"
_NOMINAL_FPS = 30.0


class NumericsError(RuntimeError):
    """Non-finite loss during training; message carries the context."""


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------

class Vocab:
    """Word-level vocabulary with character-level binary digits.

    Tokenization splits on whitespace; any word made purely of '0'/'1'
    characters is split into single characters, so a generated mask string
    is always exactly f discrete tokens. Unknown words map to <unk>.
    """

    def __init__(self, tokens: Sequence[str]):
        self.tokens = list(tokens)
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        for required in (PAD, UNK, EOS, IMG, "0", "1"):
            if required not in self.tokens:
                raise ValueError(f"vocabulary missing required token {required!r}")
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def unk_id(self) -> int:
        return self.index[UNK]

    @property
    def eos_id(self) -> int:
        return self.index[EOS]

    @property
    def img_id(self) -> int:
        return self.index[IMG]

    @property
    def id0(self) -> int:
        return self.index["0"]

    @property
    def id1(self) -> int:
        return self.index["1"]

    @staticmethod
    def tokenize(text: str) -> list[str]:
        out: list[str] = []
        for word in text.split():
            if word and all(c in "01" for c in word):
                out.extend(word)
            else:
                out.append(word)
        return out

    def encode_text(self, text: str) -> list[int]:
        unk = self.unk_id
        return [self.index.get(t, unk) for t in self.tokenize(text)]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocab":
        words = set()
        for text in texts:
            words.update(cls.tokenize(text))
        words -= {PAD, UNK, EOS, IMG, "0", "1"}
        return cls([PAD, UNK, EOS, IMG, "0", "1"] + sorted(words))


# ---------------------------------------------------------------------------
# configuration and encoded inputs
# ---------------------------------------------------------------------------

@dataclass
class ToyModelConfig:
    vocab: Vocab
    f: int
    frame_feature_dim: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_seq_len: int = 512

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.f < 1 or self.frame_feature_dim < 1:
            raise ValueError("f and frame_feature_dim must be >= 1")
        if self.max_seq_len < self.f + 2:
            raise ValueError("max_seq_len too small for any prompt")

    def echo(self) -> dict:
        """JSON-safe dump for checkpoint provenance."""
        return {
            "f": self.f, "frame_feature_dim": self.frame_feature_dim,
            "d_model": self.d_model, "n_layers": self.n_layers,
            "n_heads": self.n_heads, "max_seq_len": self.max_seq_len,
            "vocab": self.vocab.tokens,
        }


def config_for_corpus(samples: Sequence[VideoSample], f: int,
                      frame_feature_dim: int, *, d_model: int = 64,
                      n_layers: int = 2, n_heads: int = 4,
                      extra_texts: Iterable[str] = ()) -> ToyModelConfig:
    """Build vocab and sequence budget from the training corpus."""
    texts = [SYSTEM_PROMPT, build_prompt("placeholder", f)]
    texts += [s.query for s in samples]
    texts += list(extra_texts)
    vocab = Vocab.build(texts)
    longest = 0
    for s in samples:
        n = len(vocab.tokenize(SYSTEM_PROMPT)) \
            + len(vocab.tokenize(build_prompt(s.query, f)))
        longest = max(longest, n)
    return ToyModelConfig(vocab=vocab, f=f, frame_feature_dim=frame_feature_dim,
                          d_model=d_model, n_layers=n_layers, n_heads=n_heads,
                          max_seq_len=longest + f + 1 + 8)


@dataclass
class InterleavedInput:
    """One encoded sample: token ids with frame slots and answer positions.

    ``token_ids`` contains the full teacher-forced sequence when built
    with an answer (training), or just the prompt (decoding); in both
    cases ``answer_positions`` names the f + 1 positions where the answer
    tokens sit / will be generated, immediately after the prompt.
    """

    token_ids: list[int]
    frame_slots: list[int]
    frame_features: np.ndarray
    answer_positions: list[int]
    qid: int = -1

    def __post_init__(self) -> None:
        f = len(self.frame_slots)
        if self.frame_features.shape[0] != f:
            raise ValueError(
                f"{self.frame_features.shape[0]} feature rows for {f} frame slots")
        ap = self.answer_positions
        if len(ap) != f + 1:
            raise ValueError(f"need {f + 1} answer positions, got {len(ap)}")
        if any(b - a != 1 for a, b in zip(ap, ap[1:])):
            raise ValueError("answer positions must be contiguous")
        if ap[0] < 1:
            raise ValueError("answer cannot start at position 0")
        if len(self.token_ids) > ap[0] and len(self.token_ids) != ap[-1] + 1:
            raise ValueError("token_ids inconsistent with answer positions")

    @property
    def prompt_len(self) -> int:
        return self.answer_positions[0]


def encode_sample(sample: VideoSample, features: np.ndarray,
                  cfg: ToyModelConfig, *, with_answer: bool = True) -> InterleavedInput:
    """Tokenize system + user prompt, interleave frames, append the answer.

    ``features`` is the (f, feature_dim) plane chosen for this pass.
    Raises on sequence overflow of the configured budget.
    """
    vocab = cfg.vocab
    ids = vocab.encode_text(SYSTEM_PROMPT)
    ids += vocab.encode_text(build_prompt(sample.query, cfg.f))
    frame_slots = [i for i, t in enumerate(ids) if t == vocab.img_id]
    if len(frame_slots) != cfg.f:
        raise ValueError(
            f"prompt produced {len(frame_slots)} frame slots, expected {cfg.f}")
    answer_start = len(ids)
    if with_answer:
        tl = Timeline(duration=sample.duration, fps=_NOMINAL_FPS, f=cfg.f)
        bits = moments_to_mask(sample.gt_spans, tl)
        ids = ids + [vocab.id1 if b else vocab.id0 for b in bits] + [vocab.eos_id]
    total = answer_start + cfg.f + 1
    if total > cfg.max_seq_len:
        raise ValueError(
            f"sequence length {total} exceeds max_seq_len {cfg.max_seq_len}")
    if features.shape != (cfg.f, cfg.frame_feature_dim):
        raise ValueError(
            f"features shape {features.shape} != ({cfg.f}, {cfg.frame_feature_dim})")
    return InterleavedInput(
        token_ids=ids,
        frame_slots=frame_slots,
        frame_features=np.asarray(features, dtype=np.float32),
        answer_positions=list(range(answer_start, answer_start + cfg.f + 1)),
        qid=sample.qid,
    )


@dataclass
class Batch:
    """Right-padded tensor view of a list of :class:`InterleavedInput`."""

    token_ids: torch.Tensor        # (B, S) long
    real_mask: torch.Tensor        # (B, S) bool, True for non-pad
    frame_slots: torch.Tensor      # (B, f) long
    frame_features: torch.Tensor   # (B, f, D) float
    answer_positions: torch.Tensor  # (B, f+1) long
    qids: list[int]


def collate(inputs: Sequence[InterleavedInput], pad_id: int) -> Batch:
    if not inputs:
        raise ValueError("empty batch")
    lens = [len(ip.token_ids) for ip in inputs]
    S = max(lens)
    B = len(inputs)
    token_ids = torch.full((B, S), pad_id, dtype=torch.long)
    real = torch.zeros((B, S), dtype=torch.bool)
    for b, ip in enumerate(inputs):
        token_ids[b, :lens[b]] = torch.tensor(ip.token_ids, dtype=torch.long)
        real[b, :lens[b]] = True
    return Batch(
        token_ids=token_ids,
        real_mask=real,
        frame_slots=torch.tensor([ip.frame_slots for ip in inputs], dtype=torch.long),
        frame_features=torch.from_numpy(
            np.stack([ip.frame_features for ip in inputs])),
        answer_positions=torch.tensor(
            [ip.answer_positions for ip in inputs], dtype=torch.long),
        qids=[ip.qid for ip in inputs],
    )


# ---------------------------------------------------------------------------
# the decoder
# ---------------------------------------------------------------------------

class _Block(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.ln1 = nn.LayerNorm(d_model)
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)
        self.ln2 = nn.LayerNorm(d_model)
        self.mlp = nn.Sequential(
            nn.Linear(d_model, 4 * d_model),
            nn.GELU(),
            nn.Linear(4 * d_model, d_model),
        )

    def forward(self, x: torch.Tensor, allowed: torch.Tensor) -> torch.Tensor:
        B, S, D = x.shape
        q, k, v = self.qkv(self.ln1(x)).split(D, dim=-1)
        shape = (B, S, self.n_heads, self.head_dim)
        q = q.view(shape).transpose(1, 2)
        k = k.view(shape).transpose(1, 2)
        v = v.view(shape).transpose(1, 2)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        att = att.masked_fill(~allowed, float("-inf"))
        att = torch.softmax(att, dim=-1)
        y = (att @ v).transpose(1, 2).reshape(B, S, D)
        x = x + self.proj(y)
        x = x + self.mlp(self.ln2(x))
        return x


class ToyDecoder(nn.Module):
    """Pre-LN causal transformer over interleaved token/frame slots."""

    def __init__(self, cfg: ToyModelConfig):
        super().__init__()
        self.cfg = cfg
        V = len(cfg.vocab)
        self.tok_emb = nn.Embedding(V, cfg.d_model)
        self.pos_emb = nn.Embedding(cfg.max_seq_len, cfg.d_model)
        self.frame_proj = nn.Linear(cfg.frame_feature_dim, cfg.d_model)
        self.blocks = nn.ModuleList(
            [_Block(cfg.d_model, cfg.n_heads) for _ in range(cfg.n_layers)])
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.head = nn.Linear(cfg.d_model, V, bias=False)
        self.apply(self._init_weights)

    @staticmethod
    def _init_weights(module: nn.Module) -> None:
        if isinstance(module, (nn.Linear, nn.Embedding)):
            nn.init.normal_(module.weight, mean=0.0, std=0.02)
            if isinstance(module, nn.Linear) and module.bias is not None:
                nn.init.zeros_(module.bias)

    def forward(self, batch: Batch) -> torch.Tensor:
        """Logits (B, S, V); position i conditions on positions <= i only."""
        B, S = batch.token_ids.shape
        if S > self.cfg.max_seq_len:
            raise ValueError(
                f"sequence length {S} exceeds max_seq_len {self.cfg.max_seq_len}")
        x = self.tok_emb(batch.token_ids)
        proj = self.frame_proj(batch.frame_features)
        idx = batch.frame_slots.unsqueeze(-1).expand(-1, -1, x.shape[-1])
        x = x.scatter(1, idx, proj)
        x = x + self.pos_emb(torch.arange(S))
        causal = torch.tril(torch.ones(S, S, dtype=torch.bool))
        # a query may attend real keys at or before it; position 0 is always
        # real under right padding so no row ends up fully masked
        allowed = causal.unsqueeze(0) & batch.real_mask.unsqueeze(1)
        allowed = allowed.unsqueeze(1)
        for block in self.blocks:
            x = block(x, allowed)
        return self.head(self.ln_f(x))

    def forward_with_loss(self, batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
        """Forward pass plus the causal LM loss on answer positions only."""
        logits = self.forward(batch)
        return logits, lm_loss_on_answers(logits, batch)


def lm_loss_on_answers(logits: torch.Tensor, batch: Batch) -> torch.Tensor:
    """Mean NLL of the f+1 answer tokens; the logits predicting the token
    at position p live at p - 1."""
    V = logits.shape[-1]
    pred_pos = batch.answer_positions - 1
    picked = logits.gather(1, pred_pos.unsqueeze(-1).expand(-1, -1, V))
    targets = batch.token_ids.gather(1, batch.answer_positions)
    return lm_loss(picked.reshape(-1, V), targets.reshape(-1))


def extract_frame_probs(logits: torch.Tensor, answer_positions: torch.Tensor,
                        id0: int, id1: int) -> torch.Tensor:
    """Foreground probability per frame from the two mask-token logits.

    ``answer_positions`` holds the token positions of the f mask characters
    (an extra trailing end-token position is ignored); logits are read one
    position earlier, where those tokens are predicted. Output is
    softmax([logit_0, logit_1])[1], shape (B, f).
    """
    if id0 == id1:
        raise ValueError("id0 and id1 must differ")
    if answer_positions.shape[1] < 2:
        raise ValueError("answer_positions must cover f mask tokens plus EOS")
    S = logits.shape[1]
    pred_pos = answer_positions[:, :-1] - 1
    if pred_pos.min() < 0 or answer_positions.max() >= S:
        raise ValueError("answer positions out of logit range")
    rows = logits.gather(1, pred_pos.unsqueeze(-1).expand(-1, -1, logits.shape[-1]))
    two = torch.stack([rows[..., id0], rows[..., id1]], dim=-1)
    return torch.softmax(two, dim=-1)[..., 1]


def answer_labels(batch: Batch, id1: int) -> torch.Tensor:
    """Foreground plane of the teacher-forced targets, (B, f) in {0, 1}."""
    f = batch.answer_positions.shape[1] - 1
    targets = batch.token_ids.gather(1, batch.answer_positions[:, :f])
    return (targets == id1).to(torch.float32)


# ---------------------------------------------------------------------------
# training step
# ---------------------------------------------------------------------------

def make_optimizer(model: nn.Module, lr: float, weight_decay: float = 0.005) -> torch.optim.AdamW:
    return torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=weight_decay)


def train_step(
    model: ToyDecoder,
    optimizer: torch.optim.Optimizer,
    batch: Batch,
    weights: LossWeights,
    params: LossParams,
    *,
    lr: Optional[float] = None,
    context: str = "",
) -> dict[str, float]:
    """One batch: forward, slice, softmax, four losses, update.

    Returns the component losses plus the weighted total actually
    backpropagated. Aborts with :class:`NumericsError` (naming the
    offending component and the caller's context string) if anything goes
    non-finite.
    """
    vocab = model.cfg.vocab
    logits, l_lm = model.forward_with_loss(batch)
    p_fg = extract_frame_probs(logits, batch.answer_positions,
                               vocab.id0, vocab.id1)
    seg = SegBatch(probs=p_fg, labels=answer_labels(batch, vocab.id1))
    l_bce = bce_loss(seg, params.pos_weight, params.epsilon)
    l_tv = tversky_loss(seg, params.alpha, params.beta, params.epsilon)
    l_gd = generalized_dice_loss(seg, params.epsilon)
    # combine in float64 so the reported breakdown recombines to the
    # reported total at checker precision; gradients cast back through
    l_lm, l_bce, l_tv, l_gd = (x.double() for x in (l_lm, l_bce, l_tv, l_gd))
    total = combined_loss(l_lm, l_bce, l_tv, l_gd, weights)

    parts = {"lm": l_lm, "bce": l_bce, "tv": l_tv, "gd": l_gd, "total": total}
    for name, value in parts.items():
        if not torch.isfinite(value):
            raise NumericsError(f"non-finite {name} loss ({value.item()}) {context}")

    if lr is not None:
        for group in optimizer.param_groups:
            group["lr"] = lr
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    optimizer.step()
    return {name: float(value.detach()) for name, value in parts.items()}


# ---------------------------------------------------------------------------
# beam decoding
# ---------------------------------------------------------------------------

@dataclass
class DecodeResult:
    qid: int
    mask_text: str
    probs: list[float]
    score: float


@torch.no_grad()
def beam_decode_batch(
    model: ToyDecoder,
    inputs: Sequence[InterleavedInput],
    n_beams: int = 2,
    constrained: bool = True,
) -> list[DecodeResult]:
    """Beam search over the f+1 answer steps for a batch of prompts.

    Constrained mode restricts steps 1..f to {'0','1'} and the final step
    to the end token, so the winning text always parses strictly. The
    unconstrained mode searches the full vocabulary (its output may need
    lenient parsing; note that multi-character words keep their internal
    characters, so downstream stripping sees them). Scores are cumulative
    full-vocabulary log-probabilities, and per-frame probabilities come
    from the two-logit softmax along the winning beam.
    """
    if n_beams < 1:
        raise ValueError("n_beams must be >= 1")
    model.eval()
    cfg = model.cfg
    vocab = cfg.vocab
    f = cfg.f
    B = len(inputs)
    nb = n_beams
    R = B * nb
    prompt_lens = torch.tensor([ip.prompt_len for ip in inputs], dtype=torch.long)
    total_len = int(prompt_lens.max()) + f + 1
    if total_len > cfg.max_seq_len:
        raise ValueError(f"decode length {total_len} exceeds max_seq_len")

    token_ids = torch.full((R, total_len), vocab.pad_id, dtype=torch.long)
    real = torch.zeros((R, total_len), dtype=torch.bool)
    for b, ip in enumerate(inputs):
        ids = torch.tensor(ip.token_ids[:ip.prompt_len], dtype=torch.long)
        for j in range(nb):
            token_ids[b * nb + j, :len(ids)] = ids
            real[b * nb + j, :len(ids)] = True
    frame_slots = torch.stack(
        [torch.tensor(ip.frame_slots) for ip in inputs]
    ).repeat_interleave(nb, dim=0)
    frame_feats = torch.from_numpy(
        np.stack([ip.frame_features for ip in inputs])
    ).repeat_interleave(nb, dim=0)
    row_lens = prompt_lens.repeat_interleave(nb)

    scores = torch.zeros(R)
    scores.view(B, nb)[:, 1:] = float("-inf")  # beams start identical
    two_logits = torch.zeros(R, f, 2)
    generated = torch.full((R, f + 1), vocab.pad_id, dtype=torch.long)

    for t in range(f + 1):
        cur = int(row_lens.max()) + t
        batch = Batch(token_ids=token_ids[:, :cur], real_mask=real[:, :cur],
                      frame_slots=frame_slots, frame_features=frame_feats,
                      answer_positions=torch.zeros(R, f + 1, dtype=torch.long),
                      qids=[ip.qid for ip in inputs for _ in range(nb)])
        logits = model.forward(batch)
        step_pos = row_lens + t - 1
        step_logits = logits[torch.arange(R), step_pos]          # (R, V)
        logp = torch.log_softmax(step_logits, dim=-1)

        if constrained:
            allowed = [vocab.id0, vocab.id1] if t < f else [vocab.eos_id]
            cand = scores.view(B, nb, 1) + logp[:, allowed].view(B, nb, -1)
            flat = cand.view(B, -1)
            top_scores, top_idx = torch.topk(flat, nb, dim=1)
            origin = top_idx // len(allowed)
            tok = torch.tensor(allowed)[top_idx % len(allowed)]
        else:
            V = logp.shape[-1]
            cand = scores.view(B, nb, 1) + logp.view(B, nb, V)
            flat = cand.view(B, -1)
            top_scores, top_idx = torch.topk(flat, nb, dim=1)
            origin = top_idx // V
            tok = top_idx % V

        origin_rows = (torch.arange(B).unsqueeze(1) * nb + origin).view(-1)
        token_ids = token_ids[origin_rows]
        real = real[origin_rows]
        generated = generated[origin_rows]
        two_logits = two_logits[origin_rows]
        scores = top_scores.view(-1)

        write_pos = row_lens + t
        token_ids[torch.arange(R), write_pos] = tok.view(-1)
        real[torch.arange(R), write_pos] = True
        generated[:, t] = tok.view(-1)
        if t < f:
            step01 = torch.stack(
                [step_logits[:, vocab.id0], step_logits[:, vocab.id1]], dim=-1)
            two_logits[:, t] = step01[origin_rows]

    results = []
    winners = scores.view(B, nb).argmax(dim=1)
    for b, ip in enumerate(inputs):
        r = b * nb + int(winners[b])
        probs = torch.softmax(two_logits[r], dim=-1)[:, 1].tolist()
        toks = vocab.decode(generated[r].tolist())
        if constrained:
            text = "".join(toks[:f])
        else:
            kept = []
            for tk in toks:
                if tk == EOS:
                    break
                kept.append(tk)
            text = " ".join(kept)
        results.append(DecodeResult(qid=ip.qid, mask_text=text,
                                    probs=probs, score=float(scores[r])))
    return results


def beam_decode(model: ToyDecoder, input: InterleavedInput, n_beams: int = 2,
                constrained: bool = True) -> tuple[str, list[float], float]:
    """Single-sample convenience wrapper around :func:`beam_decode_batch`."""
    res = beam_decode_batch(model, [input], n_beams=n_beams,
                            constrained=constrained)[0]
    return res.mask_text, res.probs, res.score


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT_VERSION = 1


def save_checkpoint(path: str, model: ToyDecoder,
                    optimizer: Optional[torch.optim.Optimizer] = None, *,
                    epoch: int = 0, seed: int = 0,
                    extra_meta: Optional[dict] = None) -> None:
    """Write an npz container of named arrays plus a JSON metadata blob.

    Layout (stable across releases): ``param.<state_dict_key>`` arrays for
    the model, ``opt.<param_index>.<field>`` arrays for per-parameter
    optimizer state, and ``__meta__`` holding JSON with format_version,
    epoch, seed, the full model config echo (including the vocabulary) and
    the optimizer param-group hyperparameters.
    """
    arrays: dict[str, np.ndarray] = {}
    for name, tensor in model.state_dict().items():
        arrays[f"param.{name}"] = tensor.detach().cpu().numpy()
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "epoch": epoch,
        "seed": seed,
        "model_config": model.cfg.echo(),
    }
    if optimizer is not None:
        sd = optimizer.state_dict()
        for pid, state in sd["state"].items():
            for key, value in state.items():
                arr = value.detach().cpu().numpy() if torch.is_tensor(value) \
                    else np.asarray(value)
                arrays[f"opt.{pid}.{key}"] = arr
        meta["optimizer_param_groups"] = sd["param_groups"]
    if extra_meta:
        meta.update(extra_meta)
    np.savez(path, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path: str, model: ToyDecoder,
                    optimizer: Optional[torch.optim.Optimizer] = None) -> dict:
    """Restore model (and optimizer) state in place; returns the metadata.

    Refuses checkpoints whose recorded frame count or vocabulary size do
    not match the given model.
    """
    with np.load(path, allow_pickle=False) as npz:
        meta = json.loads(str(npz["__meta__"][()]))
        if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(
                f"unsupported checkpoint format {meta.get('format_version')}")
        saved_cfg = meta["model_config"]
        if saved_cfg["f"] != model.cfg.f:
            raise ValueError(
                f"checkpoint was trained with f={saved_cfg['f']}, "
                f"model has f={model.cfg.f}")
        if len(saved_cfg["vocab"]) != len(model.cfg.vocab):
            raise ValueError("checkpoint vocabulary does not match model")
        state = {}
        for key in npz.files:
            if key.startswith("param."):
                state[key[len("param."):]] = torch.from_numpy(npz[key].copy())
        model.load_state_dict(state, strict=True)
        if optimizer is not None and "optimizer_param_groups" in meta:
            opt_state: dict[int, dict] = {}
            for key in npz.files:
                if not key.startswith("opt."):
                    continue
                _, pid, field_name = key.split(".", 2)
                arr = npz[key].copy()
                value = torch.from_numpy(arr)
                opt_state.setdefault(int(pid), {})[field_name] = value
            optimizer.load_state_dict({
                "state": opt_state,
                "param_groups": meta["optimizer_param_groups"],
            })
    return meta


def restore_model(path: str) -> tuple[ToyDecoder, dict]:
    """Rebuild a decoder purely from a checkpoint file."""
    with np.load(path, allow_pickle=False) as npz:
        meta = json.loads(str(npz["__meta__"][()]))
    saved = meta["model_config"]
    cfg = ToyModelConfig(
        vocab=Vocab(saved["vocab"]), f=saved["f"],
        frame_feature_dim=saved["frame_feature_dim"],
        d_model=saved["d_model"], n_layers=saved["n_layers"],
        n_heads=saved["n_heads"], max_seq_len=saved["max_seq_len"])
    model = ToyDecoder(cfg)
    load_checkpoint(path, model)
    return model, meta
