"""Desk-scale toolkit for end-to-end text image translation.

One model reads a rendered text line and emits its translation directly,
trained jointly with machine translation and text recognition auxiliary
tasks that share parameters with the main path. A two-stage recognize
then translate cascade, synthetic data generation on a deterministic toy
cipher language, and an evaluation and benchmark suite round it out.
"""

__version__ = "0.1.0"

from .cascade import CascadePipeline, cascade_translate, train_mt_model, train_ocr_model
from .datasets import load_dataset, read_manifest, save_dataset, write_manifest
from .encoders import FeatureSequence, ImageEncoder, ImageEncoderConfig, TextEncoder
from .estimators import TextImageTranslator, TextLineRecognizer, TextTranslator
from .eval import benchmark_decode, cer, corpus_bleu, count_parameters, parameter_reduction
from .model import ModelConfig, TitModel, desk_model_config, paper_model_config
from .synthesis import (
    RenderConfig,
    ToyPairSpec,
    make_toy_parallel,
    render_text_image,
    shift_cipher,
    synth_ocr_dataset,
    synth_tit_dataset,
    write_mt_dataset,
)
from .tps import TpsWarper
from .trainer import TaskWeights, TrainConfig, load_checkpoint, save_checkpoint, train
from .transformer import TransformerConfig, TransformerDecoder, TransformerEncoder
from .vocab import Vocabulary, build_vocab, decode, encode, load_vocab, save_vocab

__all__ = [
    "__version__",
    "CascadePipeline",
    "cascade_translate",
    "train_mt_model",
    "train_ocr_model",
    "load_dataset",
    "read_manifest",
    "save_dataset",
    "write_manifest",
    "FeatureSequence",
    "ImageEncoder",
    "ImageEncoderConfig",
    "TextEncoder",
    "TextImageTranslator",
    "TextLineRecognizer",
    "TextTranslator",
    "benchmark_decode",
    "cer",
    "corpus_bleu",
    "count_parameters",
    "parameter_reduction",
    "ModelConfig",
    "TitModel",
    "desk_model_config",
    "paper_model_config",
    "RenderConfig",
    "ToyPairSpec",
    "make_toy_parallel",
    "render_text_image",
    "shift_cipher",
    "synth_ocr_dataset",
    "synth_tit_dataset",
    "write_mt_dataset",
    "TpsWarper",
    "TaskWeights",
    "TrainConfig",
    "load_checkpoint",
    "save_checkpoint",
    "train",
    "TransformerConfig",
    "TransformerDecoder",
    "TransformerEncoder",
    "Vocabulary",
    "build_vocab",
    "decode",
    "encode",
    "load_vocab",
    "save_vocab",
]
