"""Scikit-learn style estimators wrapping training and decoding.

These follow the estimator contract (init stores hyper-parameters verbatim,
fit learns state into trailing-underscore attributes, get_params/set_params
compose with clone and grid sweeps). X is an image batch for the image-input
estimators and a list of source strings for the text translator.
"""

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .datasets import MTExample, OCRExample, TITExample
from .eval import cer, corpus_bleu
from .model import ModelConfig
from .trainer import TrainConfig, collate_sequences, train
from .vocab import build_vocab, decode, encode


def check_image_array(X, name="X"):
    """Validate/convert to a float32 B x H x W x 3 array in [0, 1]."""
    if isinstance(X, torch.Tensor):
        X = X.detach().cpu().numpy()
    arr = np.asarray(X)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValueError(f"{name} must be B x H x W x 3 images, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    arr = arr.astype(np.float32, copy=False)
    if arr.size and (float(arr.min()) < 0.0 or float(arr.max()) > 1.0):
        raise ValueError(f"{name} pixel values must lie in [0, 1]")
    return arr


def check_text_list(y, name="y", allow_empty_strings=False):
    if isinstance(y, str):
        raise ValueError(f"{name} must be a sequence of strings, not a single string")
    items = list(y)
    for i, item in enumerate(items):
        if not isinstance(item, str):
            raise ValueError(f"{name}[{i}] is not a string")
        if not item and not allow_empty_strings:
            raise ValueError(f"{name}[{i}] is an empty string")
    return items


def check_pair_list(pairs, name="mt_pairs"):
    out = []
    for i, pair in enumerate(pairs):
        if len(pair) != 2 or not all(isinstance(p, str) for p in pair):
            raise ValueError(f"{name}[{i}] must be a (source, target) string pair")
        out.append((pair[0], pair[1]))
    return out


class _SequenceModelMixin:
    """Shared fit/predict plumbing over the training loop."""

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(f"this {type(self).__name__} instance is not fitted yet")

    def _train_config(self, mode, lambda_mt=0.6, lambda_ocr=0.4):
        return TrainConfig(
            mode=mode,
            steps=self.steps,
            batch_size=self.batch_size,
            lambda_mt=lambda_mt,
            lambda_ocr=lambda_ocr,
            warmup=self.warmup,
            lr_factor=self.lr_factor,
            label_smoothing=self.label_smoothing,
            seed=self.seed,
        )

    def _model_config(self, mode, src_size, tgt_size, out_h=32, out_w=64, **extra):
        return ModelConfig(
            mode=mode,
            src_vocab_size=src_size,
            tgt_vocab_size=tgt_size,
            d_model=self.d_model,
            heads=self.heads,
            layers_enc=self.layers,
            layers_dec=self.layers,
            ffn=self.ffn,
            dropout=self.dropout,
            out_h=out_h,
            out_w=out_w,
            **extra,
        )

    def _decode_limit(self):
        return self.max_decode_len


class TextImageTranslator(_SequenceModelMixin, BaseEstimator):
    """End-to-end image -> target text translator with optional auxiliary
    translation and recognition tasks sharing the backbone."""

    def __init__(self, mode="tit_mt_ocr", lambda_mt=0.6, lambda_ocr=0.4, use_tps=True,
                 steps=400, batch_size=16, d_model=64, heads=4, layers=2, ffn=128,
                 dropout=0.1, warmup=400, lr_factor=1.0, label_smoothing=0.1,
                 max_decode_len=16, beam=1, seed=0):
        self.mode = mode
        self.lambda_mt = lambda_mt
        self.lambda_ocr = lambda_ocr
        self.use_tps = use_tps
        self.steps = steps
        self.batch_size = batch_size
        self.d_model = d_model
        self.heads = heads
        self.layers = layers
        self.ffn = ffn
        self.dropout = dropout
        self.warmup = warmup
        self.lr_factor = lr_factor
        self.label_smoothing = label_smoothing
        self.max_decode_len = max_decode_len
        self.beam = beam
        self.seed = seed

    def fit(self, X, y, source_texts=None, mt_pairs=None):
        """X: images; y: target strings. source_texts label X for the
        recognition task; mt_pairs are extra (source, target) text pairs."""
        if self.mode not in ("tit_only", "tit_mt", "tit_mt_ocr"):
            raise ValueError("mode must be tit_only, tit_mt or tit_mt_ocr")
        images = check_image_array(X)
        targets = check_text_list(y)
        if len(images) != len(targets):
            raise ValueError("X and y disagree on length")
        needs_mt = self.mode in ("tit_mt", "tit_mt_ocr") and self.lambda_mt > 0
        needs_ocr = self.mode == "tit_mt_ocr" and self.lambda_ocr > 0
        if needs_mt and mt_pairs is None:
            raise ValueError(f"mode {self.mode!r} needs mt_pairs")
        if needs_ocr and source_texts is None:
            raise ValueError("mode 'tit_mt_ocr' needs source_texts aligned with X")

        pairs = check_pair_list(mt_pairs) if mt_pairs else []
        sources = check_text_list(source_texts, "source_texts") if source_texts else []
        if sources and len(sources) != len(images):
            raise ValueError("source_texts and X disagree on length")

        src_corpus = [s for s, _ in pairs] + sources
        tgt_corpus = targets + [t for _, t in pairs]
        self.src_vocab_ = build_vocab(src_corpus) if src_corpus else build_vocab(targets)
        self.tgt_vocab_ = build_vocab(tgt_corpus)

        limit = self._decode_limit()
        data = {"tit": [TITExample(f"tit{i:06d}", images[i], encode(targets[i], self.tgt_vocab_, limit))
                        for i in range(len(images))]}
        if needs_mt:
            data["mt"] = [MTExample(f"mt{i:06d}", encode(s, self.src_vocab_, limit),
                                    encode(t, self.tgt_vocab_, limit))
                          for i, (s, t) in enumerate(pairs)]
        if needs_ocr:
            data["ocr"] = [OCRExample(f"ocr{i:06d}", images[i], encode(sources[i], self.src_vocab_, limit))
                           for i in range(len(images))]

        model_config = self._model_config(self.mode, len(self.src_vocab_), len(self.tgt_vocab_),
                                          out_h=images.shape[1], out_w=images.shape[2],
                                          use_tps=self.use_tps)
        result = train(self._train_config(self.mode, self.lambda_mt, self.lambda_ocr),
                       data, model_config, src_vocab=self.src_vocab_, tgt_vocab=self.tgt_vocab_)
        self.model_ = result.model
        self.history_ = result.history
        self.final_losses_ = result.final_losses
        return self

    def predict(self, X):
        self._require_fitted()
        images = check_image_array(X)
        out = []
        with torch.no_grad():
            for start in range(0, len(images), 64):
                chunk = torch.from_numpy(images[start : start + 64])
                ids = self.model_.translate_images(chunk, max_len=self._decode_limit(), beam=self.beam)
                out.extend(decode(row, self.tgt_vocab_) for row in ids.tolist())
        return out

    def score(self, X, y):
        """Corpus BLEU of predictions against y, in [0, 100]."""
        return corpus_bleu(self.predict(X), check_text_list(y))


class TextLineRecognizer(_SequenceModelMixin, BaseEstimator):
    """Image -> source text recognizer (the cascade's first stage)."""

    def __init__(self, steps=400, batch_size=16, d_model=64, heads=4, layers=2, ffn=128,
                 dropout=0.1, warmup=400, lr_factor=1.0, label_smoothing=0.1,
                 max_decode_len=16, beam=1, seed=0, use_tps=True, sequence_encoder="transformer"):
        self.steps = steps
        self.batch_size = batch_size
        self.d_model = d_model
        self.heads = heads
        self.layers = layers
        self.ffn = ffn
        self.dropout = dropout
        self.warmup = warmup
        self.lr_factor = lr_factor
        self.label_smoothing = label_smoothing
        self.max_decode_len = max_decode_len
        self.beam = beam
        self.seed = seed
        self.use_tps = use_tps
        self.sequence_encoder = sequence_encoder

    def fit(self, X, y):
        images = check_image_array(X)
        texts = check_text_list(y)
        if len(images) != len(texts):
            raise ValueError("X and y disagree on length")
        self.src_vocab_ = build_vocab(texts)
        limit = self._decode_limit()
        data = {"ocr": [OCRExample(f"ocr{i:06d}", images[i], encode(texts[i], self.src_vocab_, limit))
                        for i in range(len(images))]}
        model_config = self._model_config("ocr_only", len(self.src_vocab_), len(self.src_vocab_),
                                          out_h=images.shape[1], out_w=images.shape[2],
                                          use_tps=self.use_tps, sequence_encoder=self.sequence_encoder)
        result = train(self._train_config("ocr_only"), data, model_config, src_vocab=self.src_vocab_)
        self.model_ = result.model
        self.history_ = result.history
        self.final_losses_ = result.final_losses
        return self

    def predict(self, X):
        self._require_fitted()
        images = check_image_array(X)
        out = []
        with torch.no_grad():
            for start in range(0, len(images), 64):
                chunk = torch.from_numpy(images[start : start + 64])
                ids = self.model_.recognize_images(chunk, max_len=self._decode_limit(), beam=self.beam)
                out.extend(decode(row, self.src_vocab_) for row in ids.tolist())
        return out

    def score(self, X, y):
        """Negative mean character error rate (higher is better)."""
        refs = check_text_list(y)
        hyps = self.predict(X)
        return -float(np.mean([cer(h, r) for h, r in zip(hyps, refs)]))


class TextTranslator(_SequenceModelMixin, BaseEstimator):
    """Source text -> target text translator (the cascade's second stage)."""

    def __init__(self, steps=400, batch_size=16, d_model=64, heads=4, layers=2, ffn=128,
                 dropout=0.1, warmup=400, lr_factor=1.0, label_smoothing=0.1,
                 max_decode_len=16, beam=1, seed=0):
        self.steps = steps
        self.batch_size = batch_size
        self.d_model = d_model
        self.heads = heads
        self.layers = layers
        self.ffn = ffn
        self.dropout = dropout
        self.warmup = warmup
        self.lr_factor = lr_factor
        self.label_smoothing = label_smoothing
        self.max_decode_len = max_decode_len
        self.beam = beam
        self.seed = seed

    def fit(self, X, y):
        sources = check_text_list(X, "X")
        targets = check_text_list(y)
        if len(sources) != len(targets):
            raise ValueError("X and y disagree on length")
        self.src_vocab_ = build_vocab(sources)
        self.tgt_vocab_ = build_vocab(targets)
        limit = self._decode_limit()
        data = {"mt": [MTExample(f"mt{i:06d}", encode(s, self.src_vocab_, limit),
                                 encode(t, self.tgt_vocab_, limit))
                       for i, (s, t) in enumerate(zip(sources, targets))]}
        model_config = self._model_config("mt_only", len(self.src_vocab_), len(self.tgt_vocab_))
        result = train(self._train_config("mt_only"), data, model_config,
                       src_vocab=self.src_vocab_, tgt_vocab=self.tgt_vocab_)
        self.model_ = result.model
        self.history_ = result.history
        self.final_losses_ = result.final_losses
        return self

    def predict(self, X):
        self._require_fitted()
        sources = check_text_list(X, "X")
        limit = self._decode_limit()
        out = []
        with torch.no_grad():
            for start in range(0, len(sources), 64):
                chunk = sources[start : start + 64]
                ids = collate_sequences([encode(s, self.src_vocab_, limit) for s in chunk])
                hyp = self.model_.translate_tokens(ids, max_len=limit, beam=self.beam)
                out.extend(decode(row, self.tgt_vocab_) for row in hyp.tolist())
        return out

    def score(self, X, y):
        """Corpus BLEU of predictions against y, in [0, 100]."""
        return corpus_bleu(self.predict(X), check_text_list(y))
