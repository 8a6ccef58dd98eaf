"""Cascade baseline: a recognizer and a translator trained separately.

Recognized characters are passed to the translator verbatim, with no
correction or rescoring, so recognition errors propagate. The recognizer
keeps TPS + conv backbone + sequence encoder + attention decoder; the
sequence encoder is the shared transformer by default with a bilstm variant
behind the model config switch.
"""

from dataclasses import replace

import torch

from .model import ModelConfig, TitModel
from .trainer import TrainConfig, TrainResult, collate_sequences, load_checkpoint, train
from .vocab import decode, encode


def train_ocr_model(ocr_examples, config: TrainConfig, model_config: ModelConfig = None,
                    src_vocab=None) -> TrainResult:
    """Image -> source text recognizer (cascade first stage)."""
    config = replace(config, mode="ocr_only")
    if model_config is None:
        if src_vocab is None:
            raise ValueError("model_config or src_vocab must be given")
        model_config = ModelConfig(mode="ocr_only", src_vocab_size=len(src_vocab))
    return train(config, {"ocr": ocr_examples}, model_config, src_vocab=src_vocab)


def train_mt_model(mt_examples, config: TrainConfig, model_config: ModelConfig = None,
                   src_vocab=None, tgt_vocab=None) -> TrainResult:
    """Source text -> target text translator (cascade second stage)."""
    config = replace(config, mode="mt_only")
    if model_config is None:
        if src_vocab is None or tgt_vocab is None:
            raise ValueError("model_config or both vocabularies must be given")
        model_config = ModelConfig(mode="mt_only", src_vocab_size=len(src_vocab),
                                   tgt_vocab_size=len(tgt_vocab))
    return train(config, {"mt": mt_examples}, model_config,
                 src_vocab=src_vocab, tgt_vocab=tgt_vocab)


def _as_model(model_or_path):
    if isinstance(model_or_path, TitModel):
        return model_or_path
    return load_checkpoint(model_or_path)


class CascadePipeline:
    """Greedy OCR decode, re-encode the text, greedy MT decode."""

    def __init__(self, ocr_model, mt_model, beam=1):
        self.ocr = _as_model(ocr_model)
        self.mt = _as_model(mt_model)
        self.beam = beam
        if self.ocr.src_vocab is None or self.mt.src_vocab is None:
            raise ValueError("both checkpoints must embed a source vocabulary")
        if self.ocr.src_vocab.tokens != self.mt.src_vocab.tokens:
            raise ValueError("vocabulary mismatch between recognizer output and translator input")

    def recognize(self, images, max_len=None):
        ids = self.ocr.recognize_images(_as_image_tensor(images), max_len=max_len, beam=self.beam)
        return [decode(row, self.ocr.src_vocab) for row in ids.tolist()]

    def translate(self, images, max_src_len=None, max_tgt_len=None):
        """Returns (translations, recognized source texts)."""
        recognized = self.recognize(images, max_len=max_src_len)
        limit = max_src_len or (self.mt.config.max_len - 1)
        encoded = [encode(text, self.mt.src_vocab, max(limit, 2)) for text in recognized]
        src_ids = collate_sequences(encoded)
        out = self.mt.translate_tokens(src_ids, max_len=max_tgt_len, beam=self.beam)
        translations = [decode(row, self.mt.tgt_vocab) for row in out.tolist()]
        return translations, recognized


def _as_image_tensor(images):
    if isinstance(images, torch.Tensor):
        batch = images
    else:
        import numpy as np

        arr = np.asarray(images, dtype=np.float32)
        batch = torch.from_numpy(arr)
    if batch.dim() == 3:
        batch = batch.unsqueeze(0)
    return batch


def cascade_translate(images, ocr_model, mt_model, beam=1, max_src_len=None, max_tgt_len=None):
    """One-call pipeline; accepts models or checkpoint paths.

    Returns (translations, recognized) lists aligned with the image batch.
    """
    pipeline = CascadePipeline(ocr_model, mt_model, beam=beam)
    return pipeline.translate(images, max_src_len=max_src_len, max_tgt_len=max_tgt_len)
