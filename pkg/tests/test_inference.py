import math

import numpy as np
import pytest
import torch

import frameseg.inference as inference
from frameseg.data import VideoSample
from frameseg.inference import (frame_accuracy, load_predictions,
                                predict_samples, write_predictions)
from frameseg.maskcodec import MomentSpan
from frameseg.metrics import PredictionRecord
from frameseg.model import DecodeResult, ToyDecoder, config_for_corpus

APPENDIX_MASK = "0000000000001111111111010"


@pytest.fixture()
def zero_model(tiny_corpus):
    cfg, samples = tiny_corpus
    torch.manual_seed(0)
    mcfg = config_for_corpus(samples, cfg.f, cfg.feature_dim,
                             d_model=32, n_layers=1, n_heads=2)
    model = ToyDecoder(mcfg)
    with torch.no_grad():
        model.head.weight.zero_()
    return model, samples


def _stub_decoder(monkeypatch, f, mask_text, probs):
    """Route predict_samples through a fixed decode result so the
    mask -> spans -> clip-scores conversion is tested in isolation."""
    from types import SimpleNamespace

    class StubModel:
        cfg = SimpleNamespace(f=f, frame_feature_dim=8)

    monkeypatch.setattr(
        inference, "encode_sample",
        lambda s, feats, cfg, with_answer: SimpleNamespace(qid=s.qid))
    monkeypatch.setattr(
        inference, "beam_decode_batch",
        lambda model, inputs, n_beams=2, constrained=True: [
            DecodeResult(qid=ip.qid, mask_text=mask_text, probs=probs,
                         score=-1.0) for ip in inputs])
    return StubModel()


class TestPredictSamples:
    def test_all_zero_mask_emits_no_windows(self, monkeypatch):
        f = 10
        sample = VideoSample(qid=7, query="q", duration=50.0,
                             features=np.zeros((3, f, 8), dtype=np.float32))
        model = _stub_decoder(monkeypatch, f, "0" * f, [0.1] * f)
        (record,), (bits,) = predict_samples(model, [sample])
        assert bits == [0] * f
        assert record.pred_spans == []
        assert all(v == pytest.approx(0.1) for v in record.pred_clip_scores)
        assert len(record.pred_clip_scores) == math.ceil(sample.duration / 2)

    def test_appendix_mask_becomes_scored_windows(self, monkeypatch):
        sample = VideoSample(qid=42, query="q", duration=150.0,
                             features=np.zeros((3, 25, 8), dtype=np.float32))
        probs = [0.9 if c == "1" else 0.1 for c in APPENDIX_MASK]
        model = _stub_decoder(monkeypatch, 25, APPENDIX_MASK, probs)
        (record,), _ = predict_samples(model, [sample])
        windows = [(s.start, s.end) for s in record.ranked_spans()]
        assert windows == [(72.0, 132.0), (138.0, 144.0)]
        assert all(s.confidence == pytest.approx(0.9)
                   for s in record.pred_spans)
        assert len(record.pred_clip_scores) == 75

    def test_real_decode_path_produces_valid_records(self, zero_model):
        model, samples = zero_model
        records, masks = predict_samples(model, samples[:3])
        for sample, rec, bits in zip(samples, records, masks):
            assert len(bits) == model.cfg.f
            assert len(rec.pred_clip_scores) == math.ceil(sample.duration / 2)
            for span in rec.pred_spans:
                assert 0.0 <= span.start < span.end <= sample.duration

    def test_requires_features(self, zero_model):
        model, _ = zero_model
        bare = VideoSample(qid=1, query="x", duration=30.0)
        with pytest.raises(ValueError):
            predict_samples(model, [bare])


class TestPredictionIo:
    def test_round_trip(self, tmp_path):
        records = [
            PredictionRecord(qid=1,
                             pred_spans=[MomentSpan(0.0, 6.0, confidence=0.8)],
                             pred_clip_scores=[0.1, 0.9, 0.4]),
            PredictionRecord(qid=2, pred_spans=[], pred_clip_scores=[0.5]),
        ]
        path = str(tmp_path / "preds.jsonl")
        write_predictions(records, path)
        loaded = load_predictions(path)
        assert [r.qid for r in loaded] == [1, 2]
        assert loaded[0].pred_spans[0].confidence == 0.8
        assert loaded[0].pred_clip_scores == [0.1, 0.9, 0.4]
        assert loaded[1].pred_spans == []

    def test_bad_record_names_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"qid": 1}\n')
        with pytest.raises(ValueError, match="bad.jsonl:1"):
            load_predictions(str(path))


class TestFrameAccuracy:
    def test_hand_case(self):
        samples = [VideoSample(qid=1, query="a", duration=40.0,
                               gt_spans=[MomentSpan(0.0, 20.0)])]
        # gt mask at f=4 is [1,1,0,0]; prediction [1,0,0,0] gets 3/4
        assert frame_accuracy([[1, 0, 0, 0]], samples, f=4) == pytest.approx(0.75)
