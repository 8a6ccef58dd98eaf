import numpy as np
import pytest
import torch

from titkit.datasets import MTExample, OCRExample, TITExample
from titkit.synthesis import RenderConfig, ToyPairSpec, make_toy_parallel, render_dataset
from titkit.vocab import build_vocab, encode

torch.set_num_threads(1)


def toy_bundle(n=32, seed=0, max_len=16, render_seed=0, max_rotation=0.0):
    """Parallel pairs, rendered images, vocabs and example lists in one go."""
    pairs = make_toy_parallel(ToyPairSpec(), n, seed)
    cfg = RenderConfig(seed=render_seed, max_rotation_deg=max_rotation)
    images = render_dataset([s for s, _ in pairs], cfg)
    src_vocab = build_vocab([s for s, _ in pairs])
    tgt_vocab = build_vocab([t for _, t in pairs])
    tit = [TITExample(id=f"t{i:04d}", image=im, target=encode(t, tgt_vocab, max_len))
           for i, (im, (_, t)) in enumerate(zip(images, pairs))]
    mt = [MTExample(id=f"m{i:04d}", source=encode(s, src_vocab, max_len),
                    target=encode(t, tgt_vocab, max_len))
          for i, (s, t) in enumerate(pairs)]
    ocr = [OCRExample(id=f"o{i:04d}", image=im, source=encode(s, src_vocab, max_len))
           for i, (im, (s, _)) in enumerate(zip(images, pairs))]
    return {"pairs": pairs, "images": images, "src_vocab": src_vocab, "tgt_vocab": tgt_vocab,
            "tit": tit, "mt": mt, "ocr": ocr}


@pytest.fixture(scope="session")
def toy_data():
    return toy_bundle()


def image_batch(bundle, k=None):
    images = bundle["images"][:k] if k else bundle["images"]
    return torch.from_numpy(np.stack(images))
