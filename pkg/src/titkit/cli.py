"""Command line entry point.

Subcommands: synth, train, eval, bench, translate, cascade-translate,
ablate. Exit codes: 0 success, 1 runtime failure (one-line diagnostic on
stderr), 2 usage error. Artifact-producing commands write a run manifest
(resolved config, config hash, seed, versions) next to their outputs.
"""

import argparse
import json
import os
import sys

import numpy as np
import torch

from . import __version__
from .ablate import AblationConfig, run_ablation
from .cascade import CascadePipeline
from .config import apply_to_dataclass, load_config, merge_config, write_run_manifest
from .datasets import dataset_paths, load_dataset, load_png, read_manifest, save_png
from .eval import benchmark_decode, cer, corpus_bleu, count_parameters, parameter_reduction
from .model import ModelConfig, paper_model_config
from .synthesis import (
    RenderConfig,
    ToyPairSpec,
    shift_cipher,
    synth_ocr_dataset,
    synth_tit_dataset,
    write_mt_dataset,
)
from .trainer import TrainConfig, collate_sequences, load_checkpoint, train
from .vocab import build_vocab, decode

MODE_ALIASES = {
    "tit": "tit_only",
    "tit+mt": "tit_mt",
    "tit+mt+ocr": "tit_mt_ocr",
    "mt": "mt_only",
    "ocr": "ocr_only",
}
KIND_FOR_MODE = {"tit_only": "tit", "tit_mt": "tit", "tit_mt_ocr": "tit", "ocr_only": "ocr", "mt_only": "mt"}

MODEL_FLAG_KEYS = ("d_model", "heads", "layers", "ffn", "dropout", "max_len",
                   "use_tps", "sequence_encoder", "tps_fiducials")


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse prints usage/help itself
        return int(exc.code or 0)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser():
    parser = argparse.ArgumentParser(prog="titkit",
                                     description="Desk-scale text image translation toolkit")
    parser.add_argument("--version", action="version", version=f"titkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize toy cipher datasets")
    p.add_argument("--kind", required=True, choices=["toy-tit", "toy-ocr", "toy-mt"])
    p.add_argument("--n", type=int, required=True, help="number of records")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--max-rotation", type=float, default=0.0)
    p.add_argument("--min-contrast", type=float, default=0.4)
    p.add_argument("--backgrounds", type=int, default=8)
    p.add_argument("--min-len", type=int, default=3)
    p.add_argument("--max-len", type=int, default=10)
    p.add_argument("--alphabet", default="abcdefghij")
    p.add_argument("--shift", type=int, default=3)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--mode", required=True, choices=sorted(MODE_ALIASES))
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="flat TOML config file")
    p.add_argument("--tit", help="image translation dataset (dir or manifest)")
    p.add_argument("--mt", help="parallel text dataset (dir or manifest)")
    p.add_argument("--ocr", help="recognition dataset (dir or manifest)")
    p.add_argument("--preset", choices=["desk", "paper"], default="desk")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lambda-mt", type=float, dest="lambda_mt")
    p.add_argument("--lambda-ocr", type=float, dest="lambda_ocr")
    p.add_argument("--warmup", type=int)
    p.add_argument("--lr-factor", type=float, dest="lr_factor")
    p.add_argument("--label-smoothing", type=float, dest="label_smoothing")
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    p.add_argument("--d-model", type=int, dest="d_model")
    p.add_argument("--heads", type=int)
    p.add_argument("--layers", type=int, help="encoder and decoder layer count")
    p.add_argument("--ffn", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--max-len", type=int, dest="max_len")
    p.add_argument("--no-tps", action="store_true")
    p.add_argument("--encoder", choices=["transformer", "bilstm"], dest="sequence_encoder")
    p.add_argument("--max-src-len", type=int, default=80)
    p.add_argument("--max-tgt-len", type=int, default=80)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--metric", choices=["bleu", "cer", "both"], default="both")
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--max-len", type=int, dest="max_len")
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="compare decode latency: end-to-end vs cascade")
    p.add_argument("--ckpt", required=True, help="end-to-end checkpoint")
    p.add_argument("--cascade-ckpt", required=True,
                   help="'OCR.pt,MT.pt' pair or a directory holding ocr.pt and mt.pt")
    p.add_argument("--dataset", required=True, help="image translation dataset")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--limit", type=int, default=100, help="sentences to time")
    p.add_argument("--max-len", type=int, dest="max_len")
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("translate", help="translate one text-line image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--max-len", type=int, dest="max_len")
    p.add_argument("--dump-normalized", dest="dump_normalized",
                   help="write the spatially normalized image here")
    p.add_argument("--resize", choices=["fail", "fit"], default="fail")
    p.set_defaults(func=_cmd_translate)

    p = sub.add_parser("cascade-translate", help="recognize then translate one image")
    p.add_argument("--ocr", required=True)
    p.add_argument("--mt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--max-len", type=int, dest="max_len")
    p.add_argument("--show-intermediate", action="store_true")
    p.add_argument("--resize", choices=["fail", "fit"], default="fail")
    p.set_defaults(func=_cmd_cascade_translate)

    p = sub.add_parser("ablate", help="run an ablation grid on the toy task")
    p.add_argument("--grid", choices=["default", "lambda"], default="default")
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default="0,1,2", help="comma-separated training seeds")
    p.add_argument("--steps", type=int)
    p.add_argument("--n-train", type=int, dest="n_train")
    p.add_argument("--n-test", type=int, dest="n_test")
    p.add_argument("--rotation", type=float, dest="max_rotation_deg")
    p.add_argument("--quick", action="store_true", help="tiny smoke-test sizes")
    p.set_defaults(func=_cmd_ablate)

    return parser


# synth -----------------------------------------------------------------


def _cmd_synth(args):
    spec = ToyPairSpec(alphabet=args.alphabet,
                       cipher=shift_cipher(args.alphabet, args.shift),
                       length_range=(args.min_len, args.max_len))
    from .synthesis import make_toy_parallel

    pairs = make_toy_parallel(spec, args.n, args.seed)
    render = RenderConfig(out_h=args.height, out_w=args.width,
                          max_rotation_deg=args.max_rotation,
                          min_contrast=args.min_contrast,
                          n_backgrounds=args.backgrounds, seed=args.seed)
    if args.kind == "toy-mt":
        manifest = write_mt_dataset(pairs, args.out)
    elif args.kind == "toy-tit":
        manifest = synth_tit_dataset(pairs, render, args.out)
    else:
        manifest = synth_ocr_dataset([s for s, _ in pairs], render, args.out)
    config = {k: getattr(args, k) for k in
              ("kind", "n", "seed", "height", "width", "max_rotation", "min_contrast",
               "backgrounds", "min_len", "max_len", "alphabet", "shift")}
    write_run_manifest(args.out, "synth", config, args.seed)
    print(f"wrote {args.n} records to {manifest}")
    return 0


# train -----------------------------------------------------------------


def _collect_texts(paths):
    """Raw source/target strings across every provided dataset."""
    src, tgt = [], []
    for kind, path in paths.items():
        _, manifest = dataset_paths(path)
        for rec in read_manifest(manifest):
            if kind in ("mt", "ocr") and "source" in rec:
                src.append(rec["source"])
            if kind in ("tit", "mt") and "target" in rec:
                tgt.append(rec["target"])
    return src, tgt


def _cmd_train(args):
    mode = MODE_ALIASES[args.mode]
    file_cfg = load_config(args.config) if args.config else {}
    flag_cfg = {}
    for key in ("steps", "seed", "batch_size", "lambda_mt", "lambda_ocr", "warmup",
                "lr_factor", "label_smoothing", "checkpoint_every",
                "d_model", "heads", "layers", "ffn", "dropout", "max_len", "sequence_encoder"):
        value = getattr(args, key, None)
        if value is not None:
            flag_cfg[key] = value
    if args.no_tps:
        flag_cfg["use_tps"] = False

    merged = merge_config({}, file_cfg, flag_cfg)
    model_keys = {k: merged.pop(k) for k in list(merged) if k in MODEL_FLAG_KEYS}
    train_cfg = apply_to_dataclass(TrainConfig, {**merged, "mode": mode, "out_dir": args.out})

    dataset_flags = {"tit": args.tit, "mt": args.mt, "ocr": args.ocr}
    provided = {k: v for k, v in dataset_flags.items() if v}
    src_texts, tgt_texts = _collect_texts(provided)
    src_vocab = build_vocab(src_texts) if src_texts else None
    tgt_vocab = build_vocab(tgt_texts) if tgt_texts else None

    datasets = {}
    image_shape = None
    for kind, path in provided.items():
        examples = load_dataset(path, kind, src_vocab=src_vocab, tgt_vocab=tgt_vocab,
                                max_len_src=args.max_src_len, max_len_tgt=args.max_tgt_len)
        datasets[kind] = examples
        if kind in ("tit", "ocr") and examples:
            image_shape = examples[0].image.shape

    if "layers" in model_keys:
        layers = model_keys.pop("layers")
        model_keys["layers_enc"] = layers
        model_keys["layers_dec"] = layers
    sizes = {}
    if src_vocab is not None:
        sizes["src_vocab_size"] = len(src_vocab)
    if tgt_vocab is not None:
        sizes["tgt_vocab_size"] = len(tgt_vocab)
    if image_shape is not None:
        model_keys.setdefault("out_h", image_shape[0])
        model_keys.setdefault("out_w", image_shape[1])
    builder = paper_model_config if args.preset == "paper" else ModelConfig
    model_cfg = builder(mode=mode, **sizes, **model_keys)

    result = train(train_cfg, datasets, model_cfg, src_vocab=src_vocab, tgt_vocab=tgt_vocab)
    from dataclasses import asdict

    write_run_manifest(args.out, "train",
                       {**asdict(train_cfg), "model": asdict(model_cfg), "preset": args.preset,
                        "datasets": provided},
                       train_cfg.seed)
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics: {result.metrics_path}")
    for task, value in result.final_losses.items():
        print(f"final {task} loss: {value:.4f}")
    return 0


# eval ------------------------------------------------------------------


def _decode_rows(model, ids, vocab):
    return [decode(row, vocab) for row in ids.tolist()]


def _eval_pairs(model, dataset_path, max_len, beam, batch=64):
    """Returns (hypotheses, references) for the checkpoint's own task."""
    kind = KIND_FOR_MODE[model.config.mode]
    _, manifest = dataset_paths(dataset_path)
    records = read_manifest(manifest)
    ref_key = "source" if kind == "ocr" else "target"
    refs = [rec[ref_key] for rec in records]
    if max_len is None:
        max_len = min(max(len(r) for r in refs) + 2, model.config.max_len - 1)

    examples = load_dataset(dataset_path, kind,
                            src_vocab=model.src_vocab or model.tgt_vocab,
                            tgt_vocab=model.tgt_vocab or model.src_vocab,
                            max_len_src=model.config.max_len - 1,
                            max_len_tgt=model.config.max_len - 1)
    hyps = []
    with torch.no_grad():
        for start in range(0, len(examples), batch):
            chunk = examples[start : start + batch]
            if kind == "mt":
                ids = collate_sequences([ex.source for ex in chunk])
                out = model.translate_tokens(ids, max_len=max_len, beam=beam)
                hyps.extend(_decode_rows(model, out, model.tgt_vocab))
            else:
                images = torch.from_numpy(np.stack([ex.image for ex in chunk]))
                if kind == "tit":
                    out = model.translate_images(images, max_len=max_len, beam=beam)
                    hyps.extend(_decode_rows(model, out, model.tgt_vocab))
                else:
                    out = model.recognize_images(images, max_len=max_len, beam=beam)
                    hyps.extend(_decode_rows(model, out, model.src_vocab))
    return hyps, refs


def _emit_report(report, out_path, command, config, seed):
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if out_path:
        out_dir = os.path.dirname(out_path) or "."
        os.makedirs(out_dir, exist_ok=True)
        with open(out_path, "w", encoding="utf-8") as f:
            f.write(text + "\n")
        write_run_manifest(out_dir, command, config, seed)


def _cmd_eval(args):
    model = load_checkpoint(args.ckpt)
    hyps, refs = _eval_pairs(model, args.dataset, args.max_len, args.beam)
    report = {
        "bleu": corpus_bleu(hyps, refs) if args.metric in ("bleu", "both") else None,
        "cer": float(np.mean([cer(h, r) for h, r in zip(hyps, refs)]))
        if args.metric in ("cer", "both") else None,
        "params": count_parameters(model),
        "latency": None,
    }
    _emit_report(report, args.out, "eval",
                 {"ckpt": args.ckpt, "dataset": args.dataset, "metric": args.metric,
                  "beam": args.beam}, 0)
    return 0


# bench -----------------------------------------------------------------


def _resolve_cascade(spec):
    if "," in spec:
        ocr_path, mt_path = (part.strip() for part in spec.split(",", 1))
    else:
        ocr_path = os.path.join(spec, "ocr.pt")
        mt_path = os.path.join(spec, "mt.pt")
    for path in (ocr_path, mt_path):
        if not os.path.exists(path):
            raise FileNotFoundError(f"cascade checkpoint not found: {path}")
    return ocr_path, mt_path


def _cmd_bench(args):
    e2e = load_checkpoint(args.ckpt)
    ocr_path, mt_path = _resolve_cascade(args.cascade_ckpt)
    pipeline = CascadePipeline(ocr_path, mt_path)

    examples = load_dataset(args.dataset, "tit",
                            src_vocab=e2e.src_vocab or e2e.tgt_vocab,
                            tgt_vocab=e2e.tgt_vocab,
                            max_len_src=e2e.config.max_len - 1,
                            max_len_tgt=e2e.config.max_len - 1)
    examples = examples[: args.limit]
    max_len = args.max_len or 16
    images = [torch.from_numpy(ex.image).unsqueeze(0) for ex in examples]

    def run_e2e(img):
        return e2e.translate_images(img, max_len=max_len)

    def run_cascade(img):
        return pipeline.translate(img, max_src_len=max_len, max_tgt_len=max_len)

    with torch.no_grad():
        latency_e2e = benchmark_decode(run_e2e, images, repeats=args.repeats)
        latency_cascade = benchmark_decode(run_cascade, images, repeats=args.repeats)
    params = parameter_reduction(e2e, pipeline.ocr, pipeline.mt)
    report = {
        "bleu": None,
        "cer": None,
        "params": {
            **params,
            "e2e_components": count_parameters(e2e),
            "ocr_components": count_parameters(pipeline.ocr),
            "mt_components": count_parameters(pipeline.mt),
        },
        "latency": {
            "e2e": latency_e2e,
            "cascade": latency_cascade,
            "reduction_pct": 100.0 * (1.0 - latency_e2e["p50_ms"] / latency_cascade["p50_ms"]),
        },
    }
    _emit_report(report, args.out, "bench",
                 {"ckpt": args.ckpt, "cascade_ckpt": args.cascade_ckpt,
                  "dataset": args.dataset, "repeats": args.repeats, "limit": args.limit}, 0)
    return 0


# translate -------------------------------------------------------------


def _load_image_for(model_cfg, path, resize):
    image = load_png(path)
    h, w = image.shape[:2]
    if (h, w) != (model_cfg.out_h, model_cfg.out_w):
        if resize != "fit":
            raise ValueError(
                f"image is {h}x{w} but the model expects {model_cfg.out_h}x{model_cfg.out_w}; "
                "pass --resize fit to rescale")
        from PIL import Image

        from .datasets import float_to_u8, image_to_float

        pil = Image.fromarray(float_to_u8(image))
        pil = pil.resize((model_cfg.out_w, model_cfg.out_h), Image.BILINEAR)
        image = image_to_float(np.asarray(pil))
    return torch.from_numpy(image).unsqueeze(0)


def _cmd_translate(args):
    model = load_checkpoint(args.ckpt)
    if model.config.mode not in ("tit_only", "tit_mt", "tit_mt_ocr"):
        raise ValueError(f"checkpoint mode {model.config.mode!r} cannot translate images")
    batch = _load_image_for(model.config, args.image, args.resize)
    max_len = args.max_len or 16
    with torch.no_grad():
        if args.dump_normalized:
            save_png(model.normalize_image(batch)[0].numpy().clip(0.0, 1.0), args.dump_normalized)
        ids = model.translate_images(batch, max_len=max_len, beam=args.beam)
    print(decode(ids[0], model.tgt_vocab))
    return 0


def _cmd_cascade_translate(args):
    pipeline = CascadePipeline(args.ocr, args.mt, beam=args.beam)
    batch = _load_image_for(pipeline.ocr.config, args.image, args.resize)
    max_len = args.max_len or 16
    with torch.no_grad():
        translations, recognized = pipeline.translate(batch, max_src_len=max_len, max_tgt_len=max_len)
    if args.show_intermediate:
        print(f"recognized: {recognized[0]}")
    print(translations[0])
    return 0


# ablate ----------------------------------------------------------------


def _cmd_ablate(args):
    overrides = {}
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.n_train is not None:
        overrides["n_train"] = args.n_train
    if args.n_test is not None:
        overrides["n_test"] = args.n_test
    if args.max_rotation_deg is not None:
        overrides["max_rotation_deg"] = args.max_rotation_deg
    if args.quick:
        overrides.setdefault("n_train", 200)
        overrides.setdefault("n_test", 50)
        overrides.setdefault("steps", 60)
    overrides["seeds"] = tuple(int(s) for s in args.seeds.split(","))
    cfg = AblationConfig(**overrides)

    report = run_ablation(args.grid, args.out, cfg)
    from dataclasses import asdict

    write_run_manifest(args.out, "ablate", {"grid": args.grid, **asdict(cfg)}, cfg.data_seed)
    with open(os.path.join(args.out, "table.md")) as f:
        print(f.read(), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
