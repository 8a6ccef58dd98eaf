"""Synthetic dataset generation.

Text lines are drawn with the built-in bitmap font onto procedurally
generated backgrounds, optionally rotated, and written out as PNG + JSONL
manifests. A deterministic cipher language pair (character bijection
followed by sequence reversal) provides a fully checkable translation task
at desk scale.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import fonts
from .datasets import save_png, write_manifest
from .vocab import build_vocab, save_vocab


@dataclass
class RenderSpec:
    """Everything needed to reproduce one rendered text image."""

    font_size_px: int = 7
    rotation_deg: float = 0.0
    background_id: int = 0
    contrast: float = 0.5
    seed: int = 0


@dataclass
class RenderConfig:
    """Sampling ranges used when rendering a whole dataset."""

    out_h: int = 32
    out_w: int = 64
    font_size_px: int = 7
    max_rotation_deg: float = 0.0
    min_contrast: float = 0.4
    n_backgrounds: int = 8
    seed: int = 0


@dataclass
class ToyPairSpec:
    alphabet: str = "abcdefghij"
    cipher: dict[str, str] = field(default_factory=dict)
    length_range: tuple[int, int] = (3, 10)

    def __post_init__(self):
        if not self.cipher:
            self.cipher = shift_cipher(self.alphabet, 3)
        keys = set(self.cipher)
        if keys != set(self.alphabet) or len(set(self.cipher.values())) != len(self.cipher):
            raise ValueError("cipher must be a bijection on the alphabet")

    def inverse(self):
        return {v: k for k, v in self.cipher.items()}


def shift_cipher(alphabet, shift):
    n = len(alphabet)
    return {c: alphabet[(i + shift) % n] for i, c in enumerate(alphabet)}


def _background(background_id, rng, h, w):
    """Procedural background: plain, gradients, or noisy gradient."""
    style = background_id % 4
    lo, hi = sorted(rng.uniform(0.0, 1.0, size=2))
    if style == 0:
        base = np.full((h, w), rng.uniform(0.0, 1.0))
    elif style == 1:
        base = np.tile(np.linspace(lo, hi, w), (h, 1))
    elif style == 2:
        base = np.tile(np.linspace(lo, hi, h)[:, None], (1, w))
    else:
        base = np.tile(np.linspace(lo, hi, w), (h, 1))
        base = base + rng.normal(0.0, 0.06, size=(h, w))
    tint = rng.uniform(-0.05, 0.05, size=3)
    img = base[:, :, None] + tint[None, None, :]
    return img.clip(0.0, 1.0).astype(np.float32)


def _rotate_into(mask, deg, out_h, out_w):
    """Place ``mask`` at the canvas center rotated by ``deg`` (bilinear)."""
    th, tw = mask.shape
    cy, cx = (out_h - 1) / 2.0, (out_w - 1) / 2.0
    my, mx = (th - 1) / 2.0, (tw - 1) / 2.0
    rad = math.radians(deg)
    cos, sin = math.cos(rad), math.sin(rad)
    yo, xo = np.meshgrid(np.arange(out_h, dtype=np.float64),
                         np.arange(out_w, dtype=np.float64), indexing="ij")
    dx, dy = xo - cx, yo - cy
    xs = cos * dx + sin * dy + mx
    ys = -sin * dx + cos * dy + my
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx, fy = xs - x0, ys - y0

    def at(yy, xx):
        inside = (yy >= 0) & (yy < th) & (xx >= 0) & (xx < tw)
        vals = mask[yy.clip(0, th - 1), xx.clip(0, tw - 1)].astype(np.float64)
        return np.where(inside, vals, 0.0)

    out = (at(y0, x0) * (1 - fy) * (1 - fx) + at(y0, x0 + 1) * (1 - fy) * fx
           + at(y0 + 1, x0) * fy * (1 - fx) + at(y0 + 1, x0 + 1) * fy * fx)
    return out


def _fit_scale(n_chars, requested_scale, rotation_deg, out_h, out_w, margin=1):
    rad = math.radians(rotation_deg)
    cos, sin = abs(math.cos(rad)), abs(math.sin(rad))
    for scale in range(max(1, requested_scale), 0, -1):
        tw = (fonts.ADVANCE * n_chars - 1) * scale
        th = fonts.GLYPH_H * scale
        if tw * cos + th * sin <= out_w - 2 * margin and tw * sin + th * cos <= out_h - 2 * margin:
            return scale
    raise ValueError("text overflow")


def render_text_image(text, spec, out_h, out_w):
    """Render one text line onto a procedural background.

    Deterministic given (text, spec): identical calls produce bit-identical
    float arrays. Raises ValueError("text overflow") if the line cannot fit
    even at the minimum font size.
    """
    if not text:
        raise ValueError("empty text")
    if out_h <= 0 or out_w <= 0:
        raise ValueError("output size must be positive")
    rng = np.random.default_rng(spec.seed)
    bg = _background(spec.background_id, rng, out_h, out_w)

    scale = _fit_scale(len(text), max(1, spec.font_size_px // fonts.GLYPH_H),
                       spec.rotation_deg, out_h, out_w)
    mask = _rotate_into(fonts.text_mask(text, scale).astype(np.float64),
                        spec.rotation_deg, out_h, out_w)

    band = bg.mean(axis=2)[mask > 0.5]
    bg_level = float(band.mean()) if band.size else float(bg.mean())
    direction = -1.0 if bg_level >= 0.5 else 1.0
    fg_level = min(1.0, max(0.0, bg_level + direction * max(spec.contrast, 0.0)))
    fg = np.clip(fg_level + rng.uniform(-0.03, 0.03, size=3), 0.0, 1.0)

    m = mask[:, :, None]
    img = bg * (1.0 - m) + fg[None, None, :] * m
    return img.astype(np.float32)


def make_toy_parallel(spec, n, seed):
    """Sample (source, target) cipher pairs: target = reverse(cipher(source))."""
    if n <= 0:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    lo, hi = spec.length_range
    chars = list(spec.alphabet)
    pairs = []
    for _ in range(n):
        length = int(rng.integers(lo, hi + 1))
        source = "".join(chars[i] for i in rng.integers(0, len(chars), size=length))
        target = "".join(spec.cipher[c] for c in source)[::-1]
        pairs.append((source, target))
    return pairs


def _sample_spec(cfg, rng, index):
    rot = float(rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg)) if cfg.max_rotation_deg else 0.0
    contrast = float(rng.uniform(cfg.min_contrast, min(1.0, cfg.min_contrast + 0.2)))
    return RenderSpec(font_size_px=cfg.font_size_px, rotation_deg=rot,
                      background_id=int(rng.integers(0, cfg.n_backgrounds)),
                      contrast=contrast, seed=cfg.seed + index)


def render_dataset(texts, cfg):
    """Render every text in memory; returns float images aligned with texts.

    Draws the same per-record specs as the on-disk writers, so a dataset
    synthesized to disk with the same config holds identical pixels.
    """
    rng = np.random.default_rng(cfg.seed)
    return [render_text_image(t, _sample_spec(cfg, rng, i), cfg.out_h, cfg.out_w)
            for i, t in enumerate(texts)]


def _write_image_dataset(texts, labels, label_key, cfg, out_dir):
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    records = []
    for i, text in enumerate(texts):
        spec = _sample_spec(cfg, rng, i)
        img = render_text_image(text, spec, cfg.out_h, cfg.out_w)
        rel = os.path.join("images", f"{i:06d}.png")
        save_png(img, os.path.join(out_dir, rel))
        records.append({"id": f"{i:06d}", "image_path": rel,
                        label_key: labels[i], "render": asdict(spec)})
    manifest = os.path.join(out_dir, "manifest.jsonl")
    write_manifest(records, manifest)
    return manifest


def synth_tit_dataset(pairs, render_cfg, out_dir):
    """Render source sentences, label with their translations."""
    if not pairs:
        raise ValueError("no pairs to render")
    sources = [s for s, _ in pairs]
    targets = [t for _, t in pairs]
    manifest = _write_image_dataset(sources, targets, "target", render_cfg, out_dir)
    save_vocab(build_vocab(sources), os.path.join(out_dir, "src_vocab.txt"))
    save_vocab(build_vocab(targets), os.path.join(out_dir, "tgt_vocab.txt"))
    return manifest


def synth_ocr_dataset(texts, render_cfg, out_dir):
    """Render source sentences, label with the text itself."""
    if not texts:
        raise ValueError("no texts to render")
    manifest = _write_image_dataset(texts, list(texts), "source", render_cfg, out_dir)
    save_vocab(build_vocab(texts), os.path.join(out_dir, "src_vocab.txt"))
    return manifest


def write_mt_dataset(pairs, out_dir):
    """Write a parallel text dataset (no images)."""
    if not pairs:
        raise ValueError("no pairs to write")
    os.makedirs(out_dir, exist_ok=True)
    records = [{"id": f"{i:06d}", "source": s, "target": t} for i, (s, t) in enumerate(pairs)]
    manifest = os.path.join(out_dir, "manifest.jsonl")
    write_manifest(records, manifest)
    save_vocab(build_vocab([s for s, _ in pairs]), os.path.join(out_dir, "src_vocab.txt"))
    save_vocab(build_vocab([t for _, t in pairs]), os.path.join(out_dir, "tgt_vocab.txt"))
    return manifest
