"""Ablation grids over task mixtures, TPS, and loss weights.

Two grids: "default" trains the task-mixture ladder (translation only, plus
machine translation, plus recognition) on clean renders and the TPS on/off
pair on rotated renders; "lambda" sweeps the translation/recognition weight
split at a fixed mixture. Every cell trains from scratch on the same toy
cipher data and reports test BLEU, repeated over seeds with the median
summarized per cell.
"""

import csv
import json
import os
import statistics
import time
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .eval import corpus_bleu
from .datasets import MTExample, OCRExample, TITExample
from .model import ModelConfig
from .synthesis import RenderConfig, ToyPairSpec, make_toy_parallel, render_dataset
from .trainer import TrainConfig, train
from .vocab import build_vocab, decode, encode


@dataclass(frozen=True)
class AblationRun:
    name: str
    mode: str
    lambda_mt: float
    lambda_ocr: float
    use_tps: bool
    rotated: bool


def default_grid():
    """Task-mixture ladder on clean images, TPS pair on rotated images."""
    return [
        AblationRun("tit_only", "tit_only", 0.0, 0.0, True, False),
        AblationRun("tit_mt", "tit_mt", 0.6, 0.0, True, False),
        AblationRun("tit_mt_ocr", "tit_mt_ocr", 0.6, 0.4, True, False),
        AblationRun("tit_mt_ocr_rot", "tit_mt_ocr", 0.6, 0.4, True, True),
        AblationRun("no_tps", "tit_mt_ocr", 0.6, 0.4, False, True),
    ]


def lambda_grid(values=(0.2, 0.4, 0.6, 0.8, 1.0)):
    """Weight split sweep; lambda_mt = 1 drops the recognition task."""
    runs = []
    for lam in values:
        ocr = round(1.0 - lam, 10)
        mode = "tit_mt" if ocr == 0.0 else "tit_mt_ocr"
        runs.append(AblationRun(f"lambda_mt_{lam:g}", mode, lam, ocr, True, False))
    return runs


GRIDS = {"default": default_grid, "lambda": lambda_grid}


@dataclass
class AblationConfig:
    """Grid-wide data and training sizes.

    The defaults put every cell in the convergent regime on one CPU core:
    dropout off (the toy mapping is deterministic, stochastic regularization
    only adds seed variance), a short warmup, and enough rounds that the
    task-mixture differences dominate initialization luck. Rotation sits at
    the largest angle a length-10 line survives on the 32x64 canvas.
    """

    n_train: int = 2000
    n_test: int = 200
    steps: int = 1500
    seeds: tuple = (0, 1, 2)
    batch_size: int = 16
    d_model: int = 64
    heads: int = 4
    layers: int = 2
    ffn: int = 128
    dropout: float = 0.0
    warmup: int = 300
    lr_factor: float = 1.0
    out_h: int = 32
    out_w: int = 64
    max_rotation_deg: float = 23.0
    max_decode_len: int = 16
    data_seed: int = 1234
    length_range: tuple = (3, 10)


_DATA_CACHE = {}


def toy_task_data(cfg: AblationConfig, rotated):
    """Train example lists, test images/targets, and the two vocabularies.

    The same rendered images serve the translation and recognition tasks;
    the parallel text of the training pairs serves the MT task.
    """
    key = (cfg.n_train, cfg.n_test, cfg.out_h, cfg.out_w, cfg.max_rotation_deg,
           cfg.data_seed, cfg.length_range, cfg.max_decode_len, rotated)
    if key in _DATA_CACHE:
        return _DATA_CACHE[key]

    spec = ToyPairSpec(length_range=cfg.length_range)
    train_pairs = make_toy_parallel(spec, cfg.n_train, cfg.data_seed)
    test_pairs = make_toy_parallel(spec, cfg.n_test, cfg.data_seed + 1)
    rotation = cfg.max_rotation_deg if rotated else 0.0
    train_images = render_dataset(
        [s for s, _ in train_pairs],
        RenderConfig(out_h=cfg.out_h, out_w=cfg.out_w, max_rotation_deg=rotation, seed=cfg.data_seed + 2),
    )
    test_images = render_dataset(
        [s for s, _ in test_pairs],
        RenderConfig(out_h=cfg.out_h, out_w=cfg.out_w, max_rotation_deg=rotation, seed=cfg.data_seed + 3),
    )
    src_vocab = build_vocab([s for s, _ in train_pairs])
    tgt_vocab = build_vocab([t for _, t in train_pairs])
    limit = cfg.max_decode_len

    datasets = {
        "tit": [TITExample(f"{i:06d}", img, encode(t, tgt_vocab, limit))
                for i, (img, (_, t)) in enumerate(zip(train_images, train_pairs))],
        "mt": [MTExample(f"{i:06d}", encode(s, src_vocab, limit), encode(t, tgt_vocab, limit))
               for i, (s, t) in enumerate(train_pairs)],
        "ocr": [OCRExample(f"{i:06d}", img, encode(s, src_vocab, limit))
                for i, (img, (s, _)) in enumerate(zip(train_images, train_pairs))],
    }
    bundle = {
        "datasets": datasets,
        "test_images": test_images,
        "test_targets": [t for _, t in test_pairs],
        "test_sources": [s for s, _ in test_pairs],
        "src_vocab": src_vocab,
        "tgt_vocab": tgt_vocab,
    }
    _DATA_CACHE[key] = bundle
    return bundle


def _test_bleu(model, bundle, cfg):
    hyps = []
    with torch.no_grad():
        for start in range(0, len(bundle["test_images"]), 64):
            chunk = torch.from_numpy(np.stack(bundle["test_images"][start : start + 64]))
            ids = model.translate_images(chunk, max_len=cfg.max_decode_len)
            hyps.extend(decode(row, bundle["tgt_vocab"]) for row in ids.tolist())
    return corpus_bleu(hyps, bundle["test_targets"])


def run_cell(run: AblationRun, seed, cfg: AblationConfig, out_dir=""):
    """Train one grid cell and return its row dict."""
    bundle = toy_task_data(cfg, run.rotated)
    model_config = ModelConfig(
        mode=run.mode,
        src_vocab_size=len(bundle["src_vocab"]),
        tgt_vocab_size=len(bundle["tgt_vocab"]),
        d_model=cfg.d_model,
        heads=cfg.heads,
        layers_enc=cfg.layers,
        layers_dec=cfg.layers,
        ffn=cfg.ffn,
        dropout=cfg.dropout,
        out_h=cfg.out_h,
        out_w=cfg.out_w,
        use_tps=run.use_tps,
    )
    train_config = TrainConfig(
        mode=run.mode,
        steps=cfg.steps,
        batch_size=cfg.batch_size,
        lambda_mt=run.lambda_mt,
        lambda_ocr=run.lambda_ocr,
        warmup=cfg.warmup,
        lr_factor=cfg.lr_factor,
        seed=seed,
        out_dir=out_dir,
    )
    t0 = time.perf_counter()
    result = train(train_config, bundle["datasets"], model_config,
                   src_vocab=bundle["src_vocab"], tgt_vocab=bundle["tgt_vocab"])
    seconds = time.perf_counter() - t0
    bleu = _test_bleu(result.model, bundle, cfg)
    return {
        "name": run.name,
        "seed": seed,
        "bleu": bleu,
        "train_seconds": round(seconds, 2),
        "mode": run.mode,
        "lambda_mt": run.lambda_mt,
        "lambda_ocr": run.lambda_ocr,
        "use_tps": run.use_tps,
        "variant": "rotated" if run.rotated else "plain",
    }


def run_ablation(grid="default", out_dir="", cfg: AblationConfig = None):
    """Run a full grid; writes table.csv / table.md / results.json when
    out_dir is given. Returns {"rows": [...], "medians": {...}}."""
    if grid not in GRIDS:
        raise ValueError(f"unknown grid {grid!r}, expected one of {sorted(GRIDS)}")
    cfg = cfg or AblationConfig()
    runs = GRIDS[grid]()
    rows = []
    for run in runs:
        for seed in cfg.seeds:
            cell_dir = os.path.join(out_dir, run.name, f"seed{seed}") if out_dir else ""
            rows.append(run_cell(run, seed, cfg, cell_dir))
    medians = {
        run.name: statistics.median(r["bleu"] for r in rows if r["name"] == run.name)
        for run in runs
    }
    report = {"grid": grid, "config": asdict(cfg), "rows": rows, "medians": medians}
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        _write_table(report, runs, cfg, out_dir)
    return report


def _write_table(report, runs, cfg, out_dir):
    rows = report["rows"]
    with open(os.path.join(out_dir, "table.csv"), "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)

    lines = [
        "| name | variant | mode | lambda_mt | lambda_ocr | tps | "
        + " | ".join(f"seed {s}" for s in cfg.seeds)
        + " | median |",
        "|" + "---|" * (7 + len(cfg.seeds)),
    ]
    for run in runs:
        cells = {r["seed"]: r["bleu"] for r in rows if r["name"] == run.name}
        lines.append(
            f"| {run.name} | {'rotated' if run.rotated else 'plain'} | {run.mode} "
            f"| {run.lambda_mt:g} | {run.lambda_ocr:g} | {'on' if run.use_tps else 'off'} | "
            + " | ".join(f"{cells[s]:.2f}" for s in cfg.seeds)
            + f" | {report['medians'][run.name]:.2f} |"
        )
    with open(os.path.join(out_dir, "table.md"), "w") as f:
        f.write("\n".join(lines) + "\n")

    with open(os.path.join(out_dir, "results.json"), "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
