import csv
import math
import os

import pytest
import torch

from titkit.model import ModelConfig, TitModel
from titkit.trainer import (
    CHECKPOINT_VERSION,
    TaskWeights,
    TrainConfig,
    collate_sequences,
    combined_loss,
    inverse_sqrt_lr,
    load_checkpoint,
    load_partial,
    loss_mt,
    loss_ocr,
    loss_tit,
    save_checkpoint,
    sequence_loss,
    shift_right,
    train,
)
from titkit.vocab import BOS, EOS, PAD

from conftest import image_batch, toy_bundle

torch.manual_seed(0)


# ---- task weights and loss combination ---------------------------------


def test_default_weights_valid():
    TaskWeights().validate()
    TaskWeights(lambda_mt=0.6, lambda_ocr=0.0).validate()
    TaskWeights(lambda_mt=0.0, lambda_ocr=0.0).validate()


def test_weights_must_sum_to_one_when_ocr_active():
    with pytest.raises(ValueError, match="invalid task weights"):
        TaskWeights(lambda_mt=0.7, lambda_ocr=0.4).validate()


def test_weights_reject_out_of_range():
    with pytest.raises(ValueError, match="invalid task weights"):
        TaskWeights(lambda_mt=-0.1, lambda_ocr=0.0).validate()
    with pytest.raises(ValueError, match="invalid task weights"):
        TaskWeights(lambda_mt=1.5, lambda_ocr=0.0).validate()


def test_weights_pin_tit_to_one():
    with pytest.raises(ValueError, match="lambda_tit"):
        TaskWeights(lambda_tit=0.5).validate()


def test_combined_loss_arithmetic():
    losses = {"tit": torch.tensor(2.0), "mt": torch.tensor(1.0), "ocr": torch.tensor(3.0)}
    total = combined_loss(losses, TaskWeights(lambda_mt=0.6, lambda_ocr=0.4))
    assert float(total) == pytest.approx(2.0 + 0.6 * 1.0 + 0.4 * 3.0)
    assert float(total) == pytest.approx(3.8)


def test_combined_loss_degenerate_weights_exact():
    tit = torch.tensor(1.2345678901234567)
    total = combined_loss({"tit": tit, "mt": torch.tensor(9.9), "ocr": torch.tensor(9.9)},
                          TaskWeights(lambda_mt=0.0, lambda_ocr=0.0))
    assert torch.equal(total, tit)  # bitwise, no 0 * x terms smuggled in
    mt_only = combined_loss({"mt": torch.tensor(7.0)}, TaskWeights(lambda_mt=1.0, lambda_ocr=0.0))
    assert float(mt_only) == 7.0


def test_combined_loss_rejects_unknown_tasks():
    with pytest.raises(ValueError, match="unknown task"):
        combined_loss({"asr": torch.tensor(1.0)}, TaskWeights())


# ---- sequence loss -------------------------------------------------------


def test_shift_right():
    targets = torch.tensor([[5, 6, EOS], [7, EOS, PAD]])
    assert shift_right(targets).tolist() == [[BOS, 5, 6], [BOS, 7, EOS]]


def test_uniform_model_loss_is_log_vocab():
    V, B, L = 11, 4, 6
    logits = torch.zeros(B, L, V)
    targets = torch.randint(4, V, (B, L))
    loss = sequence_loss(logits, targets, smoothing=0.0)
    assert abs(float(loss) - math.log(V)) <= 1e-3


def test_forced_logits_drive_loss_to_zero():
    V = 9
    targets = torch.tensor([[4, 5, EOS]])
    logits = torch.full((1, 3, V), -40.0)
    for i, t in enumerate(targets[0].tolist()):
        logits[0, i, t] = 40.0
    assert float(sequence_loss(logits, targets, smoothing=0.0)) < 1e-3


def test_pad_positions_do_not_contribute():
    V = 8
    torch.manual_seed(1)
    logits = torch.randn(1, 2, V)
    targets = torch.tensor([[4, EOS]])
    padded_logits = torch.cat([logits, torch.randn(1, 3, V)], dim=1)
    padded_targets = torch.cat([targets, torch.full((1, 3), PAD)], dim=1)
    a = sequence_loss(logits, targets, smoothing=0.1)
    b = sequence_loss(padded_logits, padded_targets, smoothing=0.1)
    assert torch.allclose(a, b, atol=1e-7)


def test_label_smoothing_spreads_over_non_gold_non_pad():
    """Hand-check one position against the definition."""
    V = 6
    s = 0.1
    logits = torch.randn(1, 1, V, dtype=torch.float64)
    targets = torch.tensor([[4]])
    logp = torch.log_softmax(logits, dim=-1)[0, 0]
    others = [logp[i] for i in range(V) if i not in (4, PAD)]
    expected = -((1 - s) * logp[4] + (s / (V - 2)) * sum(others))
    got = sequence_loss(logits, targets, smoothing=s)
    assert float(got) == pytest.approx(float(expected), abs=1e-12)


def test_sequence_loss_shape_guard():
    with pytest.raises(ValueError):
        sequence_loss(torch.zeros(2, 3, 5), torch.zeros(2, 4, dtype=torch.long))
    with pytest.raises(ValueError, match="no unpadded"):
        sequence_loss(torch.zeros(1, 2, 5), torch.full((1, 2), PAD))


# ---- schedule and collation ---------------------------------------------


def test_inverse_sqrt_schedule_values():
    d, w = 64, 400
    peak = inverse_sqrt_lr(w, d, w)
    assert peak == pytest.approx(d ** -0.5 * w ** -0.5)
    # linear ramp below warmup, inverse square root above
    assert inverse_sqrt_lr(w // 2, d, w) == pytest.approx(peak / 2)
    assert inverse_sqrt_lr(4 * w, d, w) == pytest.approx(peak / 2)
    assert inverse_sqrt_lr(0, d, w) == inverse_sqrt_lr(1, d, w)
    assert inverse_sqrt_lr(100, d, w, factor=2.0) == pytest.approx(2 * inverse_sqrt_lr(100, d, w))


def test_collate_sequences_pads_to_widest():
    out = collate_sequences([[5, 6], [7]])
    assert out.tolist() == [[5, 6], [7, PAD]]


# ---- the training loop ---------------------------------------------------


def _desk_config(mode, out_dir, **kw):
    base = dict(mode=mode, steps=3, batch_size=4, out_dir=out_dir, seed=0, warmup=10)
    base.update(kw)
    return TrainConfig(**base)


def _model_config(bundle, mode, **kw):
    return ModelConfig(mode=mode, src_vocab_size=len(bundle["src_vocab"]),
                       tgt_vocab_size=len(bundle["tgt_vocab"]), dropout=0.0, **kw)


def test_round_robin_interleaving(tmp_path):
    bundle = toy_bundle(n=16)
    cfg = _desk_config("tit_mt_ocr", str(tmp_path))
    res = train(cfg, {k: bundle[k] for k in ("tit", "mt", "ocr")},
                _model_config(bundle, "tit_mt_ocr"),
                src_vocab=bundle["src_vocab"], tgt_vocab=bundle["tgt_vocab"])
    tasks = [row["task"] for row in res.history]
    assert tasks == ["tit", "mt", "ocr"] * 3
    assert [row["step"] for row in res.history] == list(range(1, 10))
    # one schedule position per round, shared by all tasks in the round
    for i, row in enumerate(res.history):
        assert row["lr"] == pytest.approx(inverse_sqrt_lr(1 + i // 3, 64, 10))


def test_metrics_csv_matches_history(tmp_path):
    bundle = toy_bundle(n=16)
    cfg = _desk_config("tit_mt", str(tmp_path))
    res = train(cfg, {"tit": bundle["tit"], "mt": bundle["mt"]},
                _model_config(bundle, "tit_mt"),
                src_vocab=bundle["src_vocab"], tgt_vocab=bundle["tgt_vocab"])
    with open(res.metrics_path) as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == len(res.history) == 6
    for csv_row, hist_row in zip(rows, res.history):
        assert csv_row["task"] == hist_row["task"]
        assert float(csv_row["loss"]) == hist_row["loss"]


def test_zero_weight_task_never_runs(tmp_path):
    bundle = toy_bundle(n=16)
    cfg = _desk_config("tit_mt_ocr", str(tmp_path), lambda_mt=1.0, lambda_ocr=0.0)
    res = train(cfg, {k: bundle[k] for k in ("tit", "mt", "ocr")},
                _model_config(bundle, "tit_mt_ocr"),
                src_vocab=bundle["src_vocab"], tgt_vocab=bundle["tgt_vocab"])
    assert {row["task"] for row in res.history} == {"tit", "mt"}


def _snapshot(module):
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


def _identical(module, snap):
    return all(torch.equal(v, snap[k]) for k, v in module.state_dict().items())


def test_mt_step_leaves_image_path_untouched():
    """An MT update must not move TPS or image encoder parameters, even
    through optimizer state."""
    bundle = toy_bundle(n=8)
    model = TitModel(_model_config(bundle, "tit_mt_ocr"), bundle["src_vocab"], bundle["tgt_vocab"])
    opt = torch.optim.Adam(model.parameters(), lr=1e-3, betas=(0.9, 0.98), eps=1e-9)

    images = image_batch(bundle, 4)
    src = collate_sequences([ex.source for ex in bundle["mt"][:4]])
    tgt = collate_sequences([ex.target for ex in bundle["mt"][:4]])

    # prime optimizer state on every parameter with a TIT step
    opt.zero_grad(set_to_none=True)
    loss_tit(model, images, tgt).backward()
    opt.step()

    tps_before = _snapshot(model.tps)
    img_before = _snapshot(model.image_encoder)
    enc_before = _snapshot(model.encoder)
    opt.zero_grad(set_to_none=True)
    loss_mt(model, src, tgt).backward()
    opt.step()
    assert _identical(model.tps, tps_before)
    assert _identical(model.image_encoder, img_before)
    assert not _identical(model.encoder, enc_before)  # the shared path moved


def test_ocr_step_leaves_target_decoder_untouched():
    bundle = toy_bundle(n=8)
    model = TitModel(_model_config(bundle, "tit_mt_ocr"), bundle["src_vocab"], bundle["tgt_vocab"])
    opt = torch.optim.Adam(model.parameters(), lr=1e-3, betas=(0.9, 0.98), eps=1e-9)

    images = image_batch(bundle, 4)
    src = collate_sequences([ex.source for ex in bundle["ocr"][:4]])
    tgt = collate_sequences([ex.target for ex in bundle["tit"][:4]])

    opt.zero_grad(set_to_none=True)
    loss_tit(model, images, tgt).backward()
    opt.step()

    dec_before = _snapshot(model.target_decoder)
    head_before = _snapshot(model.target_head)
    text_before = _snapshot(model.text_encoder)
    src_dec_before = _snapshot(model.source_decoder)
    opt.zero_grad(set_to_none=True)
    loss_ocr(model, images, src).backward()
    opt.step()
    assert _identical(model.target_decoder, dec_before)
    assert _identical(model.target_head, head_before)
    assert _identical(model.text_encoder, text_before)
    assert not _identical(model.source_decoder, src_dec_before)


def test_training_is_bit_reproducible(tmp_path):
    bundle = toy_bundle(n=16)
    runs = []
    for sub in ("a", "b"):
        cfg = _desk_config("tit_mt", str(tmp_path / sub), steps=4)
        res = train(cfg, {"tit": bundle["tit"], "mt": bundle["mt"]},
                    _model_config(bundle, "tit_mt"),
                    src_vocab=bundle["src_vocab"], tgt_vocab=bundle["tgt_vocab"])
        runs.append(res.model)
    for (n1, p1), (n2, p2) in zip(runs[0].named_parameters(), runs[1].named_parameters()):
        assert n1 == n2 and torch.equal(p1, p2), n1


def test_different_seeds_diverge(tmp_path):
    bundle = toy_bundle(n=16)
    models = []
    for seed in (0, 1):
        cfg = _desk_config("tit_only", str(tmp_path / str(seed)), seed=seed, steps=2)
        res = train(cfg, {"tit": bundle["tit"]}, _model_config(bundle, "tit_only"),
                    src_vocab=bundle["src_vocab"], tgt_vocab=bundle["tgt_vocab"])
        models.append(res.model)
    assert any(not torch.equal(p1, p2)
               for p1, p2 in zip(models[0].parameters(), models[1].parameters()))


def test_train_rejects_missing_dataset(tmp_path):
    bundle = toy_bundle(n=8)
    cfg = _desk_config("tit_mt", str(tmp_path))
    with pytest.raises(ValueError, match="mt"):
        train(cfg, {"tit": bundle["tit"]}, _model_config(bundle, "tit_mt"),
              src_vocab=bundle["src_vocab"], tgt_vocab=bundle["tgt_vocab"])


# ---- checkpoints ----------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    bundle = toy_bundle(n=8)
    model = TitModel(_model_config(bundle, "tit_mt_ocr"), bundle["src_vocab"], bundle["tgt_vocab"])
    path = str(tmp_path / "m.pt")
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.config == model.config
    assert loaded.src_vocab.tokens == bundle["src_vocab"].tokens
    assert loaded.tgt_vocab.tokens == bundle["tgt_vocab"].tokens
    for (n1, p1), (n2, p2) in zip(model.named_parameters(), loaded.named_parameters()):
        assert n1 == n2 and torch.equal(p1, p2), n1


def test_checkpoint_version_mismatch(tmp_path):
    bundle = toy_bundle(n=8)
    model = TitModel(_model_config(bundle, "tit_only"), bundle["src_vocab"], bundle["tgt_vocab"])
    path = str(tmp_path / "m.pt")
    save_checkpoint(model, path)
    payload = torch.load(path, weights_only=True)
    payload["version"] = CHECKPOINT_VERSION + 1
    torch.save(payload, path)
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(path)


def test_load_partial_by_name_and_shape(tmp_path):
    bundle = toy_bundle(n=8)
    full = TitModel(_model_config(bundle, "tit_mt_ocr"), bundle["src_vocab"], bundle["tgt_vocab"])
    path = str(tmp_path / "full.pt")
    save_checkpoint(full, path)

    ocr = TitModel(_model_config(bundle, "ocr_only"), bundle["src_vocab"], bundle["tgt_vocab"])
    loaded_names = load_partial(ocr, path)
    assert loaded_names
    full_state = full.state_dict()
    ocr_state = ocr.state_dict()
    assert any(k.startswith("image_encoder") for k in loaded_names)
    assert not any(k.startswith("target_decoder") for k in loaded_names)
    for name in loaded_names:
        assert torch.equal(ocr_state[name], full_state[name]), name


def test_periodic_checkpoints(tmp_path):
    bundle = toy_bundle(n=8)
    cfg = _desk_config("tit_only", str(tmp_path), steps=4, checkpoint_every=2)
    train(cfg, {"tit": bundle["tit"]}, _model_config(bundle, "tit_only"),
          src_vocab=bundle["src_vocab"], tgt_vocab=bundle["tgt_vocab"])
    assert sorted(f for f in os.listdir(tmp_path) if f.endswith(".pt")) == \
        ["ckpt_000002.pt", "model.pt"]
