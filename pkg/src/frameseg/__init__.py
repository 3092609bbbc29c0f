"""frameseg: moment retrieval and highlight detection via binary frame masks.

A small causal decoder is prompted to emit one '0'/'1' character per
sampled video frame; the two mask-token logits double as per-frame
foreground probabilities, trained jointly with segmentation losses and
decoded into moment spans and clip saliency scores.
"""

__version__ = "0.1.0"

from .config import RunConfig, config_hash, make_config
from .data import (SYSTEM_PROMPT, DataError, SynthConfig, VideoSample,
                   build_prompt, dataset_stats, load_corpus, load_qvh_jsonl,
                   save_corpus, synth_generate, variation_pick)
from .losses import (LossParams, LossWeights, SegBatch, bce_loss,
                     combined_loss, generalized_dice_loss, grad_check,
                     lm_loss, lr_schedule, tversky_loss, weight_schedule)
from .maskcodec import (FrameMask, MaskParseError, MomentSpan, mask_to_moments,
                        moments_to_mask, parse_mask, render_mask, score_spans)
from .metrics import (PredictionRecord, avg_map, full_report, hl_metrics,
                      iou_1d, map_at_iou, recall_at_1)
from .model import (InterleavedInput, NumericsError, ToyDecoder,
                    ToyModelConfig, Vocab, beam_decode, beam_decode_batch,
                    collate, config_for_corpus, encode_sample,
                    extract_frame_probs, load_checkpoint, make_optimizer,
                    restore_model, save_checkpoint, train_step)
from .timeline import (Timeline, clip_query_times, frame_windows,
                       interpolate_scores, neighbor_indices, sample_indices)
from .train import TrainResult, run_training
