import json
import math
import os

import pytest
import torch

from frameseg.cli import main
from frameseg.config import RunConfig, config_hash, make_config
from frameseg.data import load_corpus, save_corpus, save_jsonl
from frameseg.inference import load_predictions, write_predictions
from frameseg.losses import lr_schedule, weight_schedule
from frameseg.metrics import PredictionRecord
from frameseg.model import restore_model
from frameseg.train import run_training

MINI = dict(f="6", epochs="4", warmup_epochs="2", batch_size="8",
            grad_accum="1", lr="3e-3", eval_every="2", d_model="32",
            n_heads="2", feature_dim="8", n_samples="24", duration="30.0",
            noise_std="0.02", seg_max="2", seed="5")


@pytest.fixture(scope="module")
def mini_run(tmp_path_factory, tiny_corpus):
    """One small training run shared by the trainer/CLI assertions."""
    root = tmp_path_factory.mktemp("mini")
    _, samples = tiny_corpus
    train_dir = str(root / "train")
    val_dir = str(root / "val")
    save_corpus(samples[:16], train_dir)
    save_corpus(samples[16:], val_dir)
    cfg = make_config(overrides=MINI)
    out_dir = str(root / "run")
    result = run_training(cfg, train_dir, out_dir, val_corpus_dir=val_dir)
    return cfg, train_dir, val_dir, out_dir, result


def read_curve(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        columns = fh.readline().strip().split(",")
        rows = [dict(zip(columns, line.strip().split(",")))
                for line in fh if line.strip()]
    return header, rows


class TestTrainer:
    def test_curve_row_accounting(self, mini_run):
        cfg, _, _, _, result = mini_run
        header, rows = read_curve(result.curve_path)
        steps_per_epoch = math.ceil(16 / (cfg.batch_size * cfg.grad_accum))
        assert len(rows) == steps_per_epoch * cfg.epochs
        assert f"config_hash={config_hash(cfg)}" in header

    def test_weight_columns_follow_schedule(self, mini_run):
        cfg, _, _, _, result = mini_run
        _, rows = read_curve(result.curve_path)
        for row in rows:
            expected = weight_schedule(int(row["epoch"]), cfg.warmup_epochs,
                                       cfg.weights_start(), cfg.weights_end())
            assert float(row["w_lm"]) == pytest.approx(expected.w_lm)
            assert float(row["w_bce"]) == pytest.approx(expected.w_bce)

    def test_lr_column_follows_schedule(self, mini_run):
        cfg, _, _, _, result = mini_run
        _, rows = read_curve(result.curve_path)
        steps_per_epoch = math.ceil(16 / cfg.batch_size)
        total = steps_per_epoch * cfg.epochs
        warmup = steps_per_epoch * cfg.warmup_epochs
        for i, row in enumerate(rows, start=1):
            assert float(row["lr"]) == pytest.approx(
                lr_schedule(i, total, warmup, cfg.lr))

    def test_breakdown_recombines_every_step(self, mini_run):
        cfg, _, _, _, result = mini_run
        _, rows = read_curve(result.curve_path)
        for row in rows:
            recombined = (float(row["w_lm"]) * float(row["lm"])
                          + float(row["w_bce"]) * float(row["bce"])
                          + float(row["w_tv"]) * float(row["tv"])
                          + float(row["w_gd"]) * float(row["gd"]))
            assert abs(recombined - float(row["total"])) <= 1e-9

    def test_checkpoint_per_epoch(self, mini_run):
        cfg, _, _, out_dir, _ = mini_run
        for epoch in range(1, cfg.epochs + 1):
            assert os.path.exists(
                os.path.join(out_dir, "checkpoints", f"epoch_{epoch:03d}.npz"))

    def test_val_metrics_rows(self, mini_run):
        cfg, _, _, _, result = mini_run
        _, rows = read_curve(result.val_path)
        assert [int(r["epoch"]) for r in rows] == [2, 4]
        assert result.final_metrics  # final epoch was evaluated

    def test_run_config_echo(self, mini_run):
        cfg, _, _, out_dir, _ = mini_run
        with open(os.path.join(out_dir, "run_config.json")) as fh:
            echoed = json.load(fh)
        assert echoed["config_hash"] == config_hash(cfg)
        assert echoed["config"] == cfg.echo()

    def test_resume_reproduces_trajectory(self, mini_run, tmp_path):
        cfg, train_dir, val_dir, out_dir, result = mini_run
        resumed_dir = str(tmp_path / "resumed")
        resume_from = os.path.join(out_dir, "checkpoints", "epoch_002.npz")
        resumed = run_training(cfg, train_dir, resumed_dir,
                               val_corpus_dir=val_dir, resume=resume_from)
        _, full_rows = read_curve(result.curve_path)
        _, resumed_rows = read_curve(resumed.curve_path)
        tail = [r for r in full_rows if int(r["epoch"]) > 2]
        assert resumed_rows == tail
        m_full, _ = restore_model(
            os.path.join(out_dir, "checkpoints", "epoch_004.npz"))
        m_res, _ = restore_model(
            os.path.join(resumed_dir, "checkpoints", "epoch_004.npz"))
        for (k, a), (_, b) in zip(m_full.state_dict().items(),
                                  m_res.state_dict().items()):
            assert torch.equal(a, b), f"{k} diverged"

    def test_same_config_same_artifacts(self, mini_run, tmp_path):
        cfg, train_dir, val_dir, _, result = mini_run
        repeat_dir = str(tmp_path / "repeat")
        repeat = run_training(cfg, train_dir, repeat_dir, val_corpus_dir=val_dir)
        with open(result.curve_path, "rb") as fh:
            first = fh.read()
        with open(repeat.curve_path, "rb") as fh:
            second = fh.read()
        assert first == second


class TestCliSynth:
    def test_writes_corpus(self, tmp_path, capsys):
        out = str(tmp_path / "corpus")
        rc = main(["synth", out, "--set", "n_samples=4", "--set", "f=6",
                   "--set", "duration=30.0", "--set", "feature_dim=8"])
        assert rc == 0
        assert "wrote 4 samples" in capsys.readouterr().out
        samples = load_corpus(out)
        assert len(samples) == 4 and samples[0].features is not None
        manifest = json.load(open(os.path.join(out, "manifest.json")))
        assert "config_hash" in manifest and "seed" in manifest

    def test_refuses_existing_without_force(self, tmp_path):
        out = str(tmp_path / "corpus")
        assert main(["synth", out, "--set", "n_samples=2"]) == 0
        assert main(["synth", out, "--set", "n_samples=2"]) == 2
        assert main(["synth", out, "--set", "n_samples=2", "--force"]) == 0

    def test_same_seed_byte_identical(self, tmp_path):
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        args = ["--set", "n_samples=4", "--set", "seed=9"]
        assert main(["synth", a] + args) == 0
        assert main(["synth", b] + args) == 0
        for name in ("corpus.jsonl", "features.bin"):
            with open(os.path.join(a, name), "rb") as fa, \
                    open(os.path.join(b, name), "rb") as fb:
                assert fa.read() == fb.read()

    def test_zero_samples_ok(self, tmp_path):
        out = str(tmp_path / "empty")
        assert main(["synth", out, "--set", "n_samples=0"]) == 0
        assert load_corpus(out) == []


class TestCliPredictScore:
    def test_predict_then_score_round_trip(self, mini_run, tmp_path):
        cfg, _, val_dir, out_dir, _ = mini_run
        ckpt = os.path.join(out_dir, "checkpoints", "epoch_004.npz")
        pred_path = str(tmp_path / "preds.jsonl")
        rc = main(["predict", ckpt, val_dir, pred_path, "--set", "f=6"])
        assert rc == 0
        records = load_predictions(pred_path)
        assert len(records) == 8
        metrics_path = str(tmp_path / "metrics.json")
        rc = main(["score", pred_path, val_dir, "--out", metrics_path])
        assert rc == 0
        payload = json.load(open(metrics_path))
        assert set(payload["metrics"]) == {"R1@0.5", "R1@0.7", "mAP@0.5",
                                           "mAP@0.75", "mAP_avg", "HL_mAP",
                                           "HL_HIT@1"}
        assert os.path.exists(str(tmp_path / "metrics_per_query.jsonl"))

    def test_refuses_f_mismatch(self, mini_run, tmp_path):
        _, _, val_dir, out_dir, _ = mini_run
        ckpt = os.path.join(out_dir, "checkpoints", "epoch_004.npz")
        rc = main(["predict", ckpt, val_dir, str(tmp_path / "p.jsonl"),
                   "--set", "f=25"])
        assert rc == 2

    def test_perfect_predictions_score_100(self, tiny_corpus, tmp_path):
        _, samples = tiny_corpus
        gt_path = str(tmp_path / "gt.jsonl")
        save_jsonl(samples[:8], gt_path)
        records = [
            PredictionRecord(
                qid=s.qid,
                pred_spans=[type(sp)(sp.start, sp.end, confidence=1.0)
                            for sp in s.gt_spans],
                pred_clip_scores=[max(row) / 4.0 for row in s.gt_clip_saliency])
            for s in samples[:8]
        ]
        pred_path = str(tmp_path / "pred.jsonl")
        write_predictions(records, pred_path)
        metrics_path = str(tmp_path / "m.json")
        assert main(["score", pred_path, gt_path, "--out", metrics_path]) == 0
        metrics = json.load(open(metrics_path))["metrics"]
        assert metrics["R1@0.7"] == 100.0
        assert metrics["mAP_avg"] == 100.0

    def test_disjoint_qids_exit_2(self, tiny_corpus, tmp_path):
        _, samples = tiny_corpus
        gt_path = str(tmp_path / "gt.jsonl")
        save_jsonl(samples[:4], gt_path)
        records = [PredictionRecord(qid=999)]
        pred_path = str(tmp_path / "pred.jsonl")
        write_predictions(records, pred_path)
        assert main(["score", pred_path, gt_path,
                     "--out", str(tmp_path / "m.json")]) == 2


class TestCliStatsPrompt:
    def test_stats_prints_ratio(self, tiny_corpus, tmp_path, capsys):
        _, samples = tiny_corpus
        gt_path = str(tmp_path / "gt.jsonl")
        save_jsonl(samples, gt_path)
        assert main(["stats", gt_path, "--f", "6"]) == 0
        out = capsys.readouterr().out
        assert "bg:fg ratio" in out and "bg fraction" in out

    def test_prompt_golden(self, capsys):
        query = "Man in baseball cap eats before doing his interview."
        assert main(["prompt", query, "--f", "25"]) == 0
        out = capsys.readouterr().out
        golden = open(os.path.join(os.path.dirname(__file__), "data",
                                   "prompt_f25.txt"), encoding="utf-8").read()
        assert out == golden

    def test_prompt_f1_pluralization(self, capsys):
        assert main(["prompt", "waves", "--f", "1"]) == 0
        assert "exactly 1 characters long" in capsys.readouterr().out


class TestConfig:
    def test_precedence_flags_over_file_over_defaults(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("epochs=7\nlr=1e-4  # comment\n\n")
        cfg = make_config(str(cfg_file), {"lr": "5e-4"})
        assert cfg.epochs == 7          # from file
        assert cfg.lr == 5e-4           # flag wins
        assert cfg.batch_size == 16     # default

    def test_unknown_key_rejected(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("not_a_key=3\n")
        with pytest.raises(ValueError):
            make_config(str(cfg_file))

    def test_hash_stable_and_sensitive(self):
        a = RunConfig()
        b = RunConfig()
        c = RunConfig(seed=1)
        assert config_hash(a) == config_hash(b)
        assert config_hash(a) != config_hash(c)

    def test_bool_coercion(self):
        assert make_config(overrides={"constrained": "false"}).constrained is False
        assert make_config(overrides={"constrained": "1"}).constrained is True

    def test_usage_error_exit_code(self):
        with pytest.raises(SystemExit) as exc:
            main(["not-a-command"])
        assert exc.value.code == 1
