"""Multi-task training: weighted losses, alternating updates, checkpoints.

The translation loss always carries weight 1; the auxiliary machine
translation and recognition losses share the remaining unit of weight
(lambda_mt + lambda_ocr = 1 whenever recognition is enabled). Tasks are fed
alternately: every round draws one batch per active task and applies one
optimizer update per batch, the loss pre-multiplied by its weight. The
inverse-sqrt learning-rate schedule advances once per round, so runs with
different task counts are comparable round for round.
"""

import csv
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .model import TASK_SETS, ModelConfig, TitModel
from .vocab import BOS, PAD, vocab_from_tokens

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TaskWeights:
    lambda_tit: float = 1.0
    lambda_mt: float = 0.6
    lambda_ocr: float = 0.4

    def validate(self):
        if self.lambda_tit != 1.0:
            raise ValueError("invalid task weights: lambda_tit must be 1.0")
        if not (0.0 <= self.lambda_mt <= 1.0) or not (0.0 <= self.lambda_ocr <= 1.0):
            raise ValueError("invalid task weights: lambdas must lie in [0, 1]")
        if self.lambda_ocr != 0.0 and abs(self.lambda_mt + self.lambda_ocr - 1.0) > 1e-9:
            raise ValueError("invalid task weights: lambda_mt + lambda_ocr must equal 1")

    def weight_for(self, task):
        return {"tit": self.lambda_tit, "mt": self.lambda_mt, "ocr": self.lambda_ocr}[task]


def combined_loss(losses, weights: TaskWeights):
    """Weighted sum over whichever task losses are present."""
    weights.validate()
    unknown = set(losses) - {"tit", "mt", "ocr"}
    if unknown:
        raise ValueError(f"unknown task losses: {sorted(unknown)}")
    total = None
    for task, loss in losses.items():
        w = weights.weight_for(task)
        if w == 0.0:
            continue
        term = loss if w == 1.0 else loss * w
        total = term if total is None else total + term
    if total is None:
        total = 0.0
    return total


def shift_right(targets, bos=BOS):
    """Decoder input: BOS followed by the target minus its last position."""
    lead = targets.new_full((targets.shape[0], 1), bos)
    return torch.cat([lead, targets[:, :-1]], dim=1)


def sequence_loss(logits, targets, smoothing=0.1, pad_id=PAD):
    """Per-token negative log-likelihood, label-smoothed, pad-masked.

    The smoothing mass is spread over the non-gold, non-pad classes so the
    pad class never receives probability.
    """
    if logits.shape[:2] != targets.shape:
        raise ValueError("logits and targets disagree on batch/length")
    V = logits.shape[-1]
    logp = torch.log_softmax(logits, dim=-1)
    mask = targets.ne(pad_id)
    n_tokens = int(mask.sum())
    if n_tokens == 0:
        raise ValueError("batch contains no unpadded target tokens")
    gold = logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    if smoothing == 0.0:
        per_token = -gold
    else:
        others = logp.sum(dim=-1) - gold - logp[..., pad_id]
        per_token = -((1.0 - smoothing) * gold + smoothing / (V - 2) * others)
    return (per_token * mask).sum() / n_tokens


def loss_tit(model, images, targets, smoothing=0.1):
    return sequence_loss(model.tit_logits(images, shift_right(targets)), targets, smoothing)


def loss_mt(model, src_ids, targets, smoothing=0.1):
    return sequence_loss(model.mt_logits(src_ids, shift_right(targets)), targets, smoothing)


def loss_ocr(model, images, src_targets, smoothing=0.1):
    return sequence_loss(model.ocr_logits(images, shift_right(src_targets)), src_targets, smoothing)


def inverse_sqrt_lr(step, d_model, warmup, factor=1.0):
    step = max(step, 1)
    return factor * d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


def collate_sequences(seqs, pad=PAD):
    width = max(len(s) for s in seqs)
    out = torch.full((len(seqs), width), pad, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.as_tensor(s, dtype=torch.long)
    return out


def collate_images(images):
    return torch.from_numpy(np.stack(images))


@dataclass
class TrainConfig:
    mode: str = "tit_mt_ocr"
    steps: int = 500
    batch_size: int = 16
    batch_tit: int = 0  # 0 means inherit batch_size
    batch_mt: int = 0
    batch_ocr: int = 0
    lambda_mt: float = 0.6
    lambda_ocr: float = 0.4
    lr_factor: float = 1.0
    warmup: int = 400
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-9
    clip_norm: float = 1.0
    label_smoothing: float = 0.1
    seed: int = 0
    checkpoint_every: int = 0  # rounds; 0 keeps only the final checkpoint
    out_dir: str = ""

    def batch_for(self, task):
        override = {"tit": self.batch_tit, "mt": self.batch_mt, "ocr": self.batch_ocr}[task]
        return override if override > 0 else self.batch_size


@dataclass
class TrainResult:
    checkpoint_path: str
    metrics_path: str
    model: TitModel
    history: list = field(default_factory=list)
    final_losses: dict = field(default_factory=dict)


def _batch_iterator(examples, batch_size, rng):
    n = len(examples)
    if n == 0:
        raise ValueError("empty dataset")
    size = min(batch_size, n)
    while True:
        order = rng.permutation(n)
        for i in range(0, n - size + 1, size):
            yield [examples[int(j)] for j in order[i : i + size]]


def _task_loss(model, task, batch, smoothing):
    if task == "tit":
        return loss_tit(model, collate_images([ex.image for ex in batch]),
                        collate_sequences([ex.target for ex in batch]), smoothing)
    if task == "mt":
        return loss_mt(model, collate_sequences([ex.source for ex in batch]),
                       collate_sequences([ex.target for ex in batch]), smoothing)
    return loss_ocr(model, collate_images([ex.image for ex in batch]),
                    collate_sequences([ex.source for ex in batch]), smoothing)


def train(config: TrainConfig, datasets, model_config: ModelConfig = None,
          src_vocab=None, tgt_vocab=None) -> TrainResult:
    """Run the alternating multi-task loop and write checkpoint + metrics.

    datasets maps task name to a list of loaded examples; entries not used
    by the mode are ignored. Fully seeded: identical config and data yield
    identical loss logs.
    """
    if config.mode not in TASK_SETS:
        raise ValueError(f"unknown mode {config.mode!r}")
    tasks = TASK_SETS[config.mode]

    multi_task = "tit" in tasks
    if multi_task:
        weights = TaskWeights(
            lambda_mt=config.lambda_mt if "mt" in tasks else 0.0,
            lambda_ocr=config.lambda_ocr if "ocr" in tasks else 0.0,
        )
        weights.validate()
        # a zero-weight auxiliary task contributes nothing but would still
        # consume rounds and stir optimizer state, so it is dropped
        tasks = tuple(t for t in tasks if t == "tit" or weights.weight_for(t) > 0.0)
    else:
        weights = None  # single-task baselines train unweighted

    for task in tasks:
        if not datasets.get(task):
            raise ValueError(f"mode {config.mode!r} requires a non-empty {task!r} dataset")

    torch.manual_seed(config.seed)
    if model_config is None:
        if src_vocab is None or tgt_vocab is None:
            raise ValueError("model_config or both vocabularies must be given")
        model_config = ModelConfig(mode=config.mode, src_vocab_size=len(src_vocab),
                                   tgt_vocab_size=len(tgt_vocab))
    if model_config.mode != config.mode:
        raise ValueError("model_config.mode does not match training mode")
    model = TitModel(model_config, src_vocab=src_vocab, tgt_vocab=tgt_vocab)
    model.train()

    optimizer = torch.optim.Adam(model.parameters(), lr=0.0,
                                 betas=(config.beta1, config.beta2), eps=config.adam_eps)
    iterators = {
        task: _batch_iterator(datasets[task], config.batch_for(task), np.random.default_rng([config.seed, i]))
        for i, task in enumerate(tasks)
    }

    out_dir = config.out_dir
    writer = None
    metrics_path = ""
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        metrics_path = os.path.join(out_dir, "metrics.csv")
        log_file = open(metrics_path, "w", newline="")
        writer = csv.writer(log_file)
        writer.writerow(["step", "task", "loss", "lr", "wall_ms"])

    history = []
    update = 0
    try:
        for rnd in range(1, config.steps + 1):
            # the schedule advances once per round, not per optimizer step,
            # so every mode follows the same lr trajectory on the shared
            # objective regardless of how many tasks share the round
            lr = inverse_sqrt_lr(rnd, model_config.d_model, config.warmup, config.lr_factor)
            for task in tasks:
                t0 = time.perf_counter()
                update += 1
                for group in optimizer.param_groups:
                    group["lr"] = lr
                optimizer.zero_grad(set_to_none=True)
                batch = next(iterators[task])
                loss = _task_loss(model, task, batch, config.label_smoothing)
                lam = weights.weight_for(task) if multi_task else 1.0
                (loss * lam if lam != 1.0 else loss).backward()
                nn.utils.clip_grad_norm_(model.parameters(), config.clip_norm)
                optimizer.step()
                wall_ms = (time.perf_counter() - t0) * 1000.0
                loss_val = loss.detach().item()
                row = {"step": update, "task": task, "loss": loss_val, "lr": lr, "wall_ms": wall_ms}
                history.append(row)
                if writer:
                    writer.writerow([update, task, repr(loss_val), repr(lr), f"{wall_ms:.3f}"])
            if out_dir and config.checkpoint_every and rnd % config.checkpoint_every == 0 and rnd < config.steps:
                save_checkpoint(model, os.path.join(out_dir, f"ckpt_{rnd:06d}.pt"),
                                extra={"round": rnd, "train_config": asdict(config)})
    finally:
        if writer:
            log_file.close()

    checkpoint_path = ""
    if out_dir:
        checkpoint_path = os.path.join(out_dir, "model.pt")
        save_checkpoint(model, checkpoint_path,
                        extra={"round": config.steps, "train_config": asdict(config)})

    final_losses = {}
    for task in tasks:
        recent = [r["loss"] for r in history if r["task"] == task][-50:]
        final_losses[task] = float(np.mean(recent))
    model.eval()
    return TrainResult(checkpoint_path, metrics_path, model, history, final_losses)


def save_checkpoint(model: TitModel, path, extra=None):
    """Atomic write; embeds config and vocabularies for standalone reload."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "model_config": asdict(model.config),
        "state_dict": model.state_dict(),
        "src_vocab": list(model.src_vocab.tokens) if model.src_vocab else None,
        "tgt_vocab": list(model.tgt_vocab.tokens) if model.tgt_vocab else None,
        "extra": extra or {},
    }
    tmp = f"{path}.tmp"
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def _load_payload(path):
    payload = torch.load(path, map_location="cpu", weights_only=True)
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint version mismatch: file has {version!r}, expected {CHECKPOINT_VERSION}")
    return payload


def load_checkpoint(path):
    """Rebuild the model (eval mode) with its vocabularies from a checkpoint."""
    payload = _load_payload(path)
    cfg = ModelConfig(**payload["model_config"])
    src_vocab = vocab_from_tokens(payload["src_vocab"]) if payload.get("src_vocab") else None
    tgt_vocab = vocab_from_tokens(payload["tgt_vocab"]) if payload.get("tgt_vocab") else None
    model = TitModel(cfg, src_vocab=src_vocab, tgt_vocab=tgt_vocab)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model


def load_partial(model: TitModel, path):
    """Copy parameters whose names and shapes match into an existing model.

    Lets a differently-moded model adopt the shared components of a trained
    checkpoint. Returns the sorted list of copied entries.
    """
    payload = _load_payload(path)
    own = model.state_dict()
    carried = {k: v for k, v in payload["state_dict"].items()
               if k in own and own[k].shape == v.shape}
    model.load_state_dict(carried, strict=False)
    return sorted(carried)
