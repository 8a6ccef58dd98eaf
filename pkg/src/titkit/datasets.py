"""Dataset records and JSON-lines manifest serialization.

A dataset is a directory holding ``manifest.jsonl`` plus, for image
datasets, an ``images/`` folder of lossless PNGs. Vocabulary files
(``src_vocab.txt`` / ``tgt_vocab.txt``) written at synthesis time live next
to the manifest so a dataset can be loaded without extra arguments.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .vocab import decode, encode, load_vocab, save_vocab

KINDS = ("tit", "ocr", "mt")


@dataclass
class MTExample:
    id: str
    source: list[int]
    target: list[int]


@dataclass
class TITExample:
    id: str
    image: np.ndarray  # H x W x 3 float32 in [0, 1]
    target: list[int]


@dataclass
class OCRExample:
    id: str
    image: np.ndarray
    source: list[int]


def image_to_float(arr_u8):
    return (arr_u8.astype(np.float32) / 255.0).clip(0.0, 1.0)


def float_to_u8(img):
    return np.round(np.asarray(img, dtype=np.float32) * 255.0).clip(0, 255).astype(np.uint8)


def save_png(img, path):
    """Save a float [0,1] HxWx3 image as 8-bit RGB PNG."""
    Image.fromarray(float_to_u8(img), mode="RGB").save(path, format="PNG")


def load_png(path):
    with Image.open(path) as im:
        return image_to_float(np.asarray(im.convert("RGB")))


def write_manifest(records, path):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
    os.replace(tmp, path)


def read_manifest(path):
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def dataset_paths(path):
    """Resolve a dataset directory or manifest file path to (root, manifest)."""
    if os.path.isdir(path):
        return path, os.path.join(path, "manifest.jsonl")
    return os.path.dirname(path) or ".", path


def load_dataset(path, kind, src_vocab=None, tgt_vocab=None,
                 max_len_src=80, max_len_tgt=80, expected_shape=None):
    """Load a dataset directory into typed examples.

    ``kind`` is one of {"tit", "ocr", "mt"}. Vocabularies default to the
    ``*_vocab.txt`` files stored next to the manifest. Missing images and
    shape mismatches raise errors naming the offending record.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}")
    root, manifest = dataset_paths(path)
    if not os.path.exists(manifest):
        raise FileNotFoundError(f"no manifest at {manifest}")
    if src_vocab is None and kind in ("ocr", "mt"):
        src_vocab = load_vocab(os.path.join(root, "src_vocab.txt"))
    if tgt_vocab is None and kind in ("tit", "mt"):
        tgt_vocab = load_vocab(os.path.join(root, "tgt_vocab.txt"))

    examples = []
    for rec in read_manifest(manifest):
        rid = str(rec["id"])
        image = None
        if kind in ("tit", "ocr"):
            img_path = os.path.join(root, rec["image_path"])
            if not os.path.exists(img_path):
                raise FileNotFoundError(f"record {rid}: missing image file {rec['image_path']}")
            image = load_png(img_path)
            if expected_shape is None:
                expected_shape = image.shape
            elif image.shape != tuple(expected_shape):
                raise ValueError(
                    f"record {rid}: image shape {image.shape} != expected {tuple(expected_shape)}")
        if kind == "tit":
            examples.append(TITExample(rid, image, encode(rec["target"], tgt_vocab, max_len_tgt)))
        elif kind == "ocr":
            examples.append(OCRExample(rid, image, encode(rec["source"], src_vocab, max_len_src)))
        else:
            examples.append(MTExample(rid, encode(rec["source"], src_vocab, max_len_src),
                                      encode(rec["target"], tgt_vocab, max_len_tgt)))
    return examples


def save_dataset(examples, kind, out_dir, src_vocab=None, tgt_vocab=None):
    """Write typed examples back to a dataset directory (manifest + PNGs)."""
    if kind not in KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}")
    os.makedirs(out_dir, exist_ok=True)
    records = []
    if kind in ("tit", "ocr"):
        os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    for ex in examples:
        rec = {"id": ex.id}
        if kind in ("tit", "ocr"):
            rel = os.path.join("images", f"{ex.id}.png")
            save_png(ex.image, os.path.join(out_dir, rel))
            rec["image_path"] = rel
        if kind in ("ocr", "mt"):
            rec["source"] = decode(ex.source, src_vocab)
        if kind in ("tit", "mt"):
            rec["target"] = decode(ex.target, tgt_vocab)
        records.append(rec)
    manifest = os.path.join(out_dir, "manifest.jsonl")
    write_manifest(records, manifest)
    if src_vocab is not None and kind in ("ocr", "mt"):
        save_vocab(src_vocab, os.path.join(out_dir, "src_vocab.txt"))
    if tgt_vocab is not None and kind in ("tit", "mt"):
        save_vocab(tgt_vocab, os.path.join(out_dir, "tgt_vocab.txt"))
    return manifest
