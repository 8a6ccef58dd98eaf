"""The end-to-end model bundle.

One nn.Module owns every component; which ones exist depends on the mode:

  tit_only    image -> TPS -> image encoder -> shared encoder -> target decoder
  tit_mt      adds the source-text encoder feeding the same shared encoder
              and the same target decoder (true parameter sharing)
  tit_mt_ocr  adds the source-language decoder used by the recognition task
  mt_only     text-to-text translator (cascade second stage)
  ocr_only    image-to-source-text recognizer (cascade first stage)

Sharing is by reference: the TIT and MT paths run through the same encoder
and target decoder objects, TIT and OCR through the same image encoder.
"""

from dataclasses import dataclass

import torch
from torch import nn

from .encoders import FeatureSequence, ImageEncoder, ImageEncoderConfig, TextEncoder
from .tps import TpsWarper
from .transformer import (
    TransformerConfig,
    TransformerDecoder,
    TransformerEncoder,
    beam_decode,
    greedy_decode,
)
from .vocab import BOS, EOS, PAD

TASK_SETS = {
    "tit_only": ("tit",),
    "tit_mt": ("tit", "mt"),
    "tit_mt_ocr": ("tit", "mt", "ocr"),
    "mt_only": ("mt",),
    "ocr_only": ("ocr",),
}


@dataclass
class ModelConfig:
    mode: str = "tit_mt_ocr"
    src_vocab_size: int = 14
    tgt_vocab_size: int = 14
    d_model: int = 64
    heads: int = 4
    layers_enc: int = 2
    layers_dec: int = 2
    ffn: int = 128
    dropout: float = 0.1
    max_len: int = 128
    out_h: int = 32
    out_w: int = 64
    use_tps: bool = True
    tps_fiducials: int = 20
    tps_channels: tuple = (16, 32, 64, 128)
    image_stem: tuple = (8,)
    image_channels: tuple = (16, 32, 64)
    image_blocks: tuple = (1, 1, 2)
    image_pools: tuple = ((2, 2), (2, 2), (2, 1))
    width_downsample: int = 4
    sequence_encoder: str = "transformer"

    def __post_init__(self):
        if self.mode not in TASK_SETS:
            raise ValueError(f"unknown mode {self.mode!r}, expected one of {sorted(TASK_SETS)}")
        if self.sequence_encoder not in ("transformer", "bilstm"):
            raise ValueError("sequence_encoder must be 'transformer' or 'bilstm'")
        if self.sequence_encoder == "bilstm" and self.mode != "ocr_only":
            raise ValueError("the bilstm encoder variant is only available in ocr_only mode")

    @property
    def tasks(self):
        return TASK_SETS[self.mode]

    def transformer(self):
        return TransformerConfig(
            d_model=self.d_model,
            heads=self.heads,
            layers_enc=self.layers_enc,
            layers_dec=self.layers_dec,
            ffn=self.ffn,
            dropout=self.dropout,
            max_len=self.max_len,
        )

    def image(self):
        return ImageEncoderConfig(
            out_h=self.out_h,
            out_w=self.out_w,
            d_model=self.d_model,
            width_downsample=self.width_downsample,
            stem_channels=tuple(self.image_stem),
            stage_channels=tuple(self.image_channels),
            stage_blocks=tuple(self.image_blocks),
            stage_pools=tuple(tuple(p) for p in self.image_pools),
        )


def desk_model_config(**overrides):
    return ModelConfig(**overrides)


def paper_model_config(**overrides):
    """Full-size preset: transformer_base dimensions, deep image backbone."""
    base = dict(
        d_model=512,
        heads=8,
        layers_enc=6,
        layers_dec=6,
        ffn=2048,
        dropout=0.1,
        max_len=512,
        out_w=320,
        image_stem=(32, 64),
        image_channels=(128, 256, 512, 512),
        image_blocks=(1, 2, 5, 3),
        image_pools=((2, 2), (2, 2), (2, 1), (2, 1)),
        tps_channels=(64, 128, 256, 512),
    )
    base.update(overrides)
    return ModelConfig(**base)


class RecurrentEncoder(nn.Module):
    """Stacked bidirectional LSTM drop-in for the shared encoder, offered as
    the recognizer's classic sequence model."""

    def __init__(self, d_model, layers=2, dropout=0.1):
        super().__init__()
        if d_model % 2 != 0:
            raise ValueError("d_model must be even for a bidirectional encoder")
        self.lstm = nn.LSTM(
            d_model,
            d_model // 2,
            num_layers=layers,
            bidirectional=True,
            batch_first=True,
            dropout=dropout if layers > 1 else 0.0,
        )

    def forward(self, seq: FeatureSequence) -> FeatureSequence:
        out, _ = self.lstm(seq.features)
        return FeatureSequence(out, seq.lengths)


class TitModel(nn.Module):
    def __init__(self, config: ModelConfig, src_vocab=None, tgt_vocab=None):
        super().__init__()
        if src_vocab is not None and len(src_vocab.tokens) != config.src_vocab_size:
            raise ValueError("src_vocab size does not match config")
        if tgt_vocab is not None and len(tgt_vocab.tokens) != config.tgt_vocab_size:
            raise ValueError("tgt_vocab size does not match config")
        self.config = config
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        tasks = config.tasks
        tcfg = config.transformer()

        needs_image = "tit" in tasks or "ocr" in tasks
        self.tps = None
        self.image_encoder = None
        self.text_encoder = None
        self.target_decoder = None
        self.target_head = None
        self.source_decoder = None
        self.source_head = None

        if needs_image:
            if config.use_tps:
                self.tps = TpsWarper(
                    config.out_h, config.out_w, K=config.tps_fiducials, channels=tuple(config.tps_channels)
                )
            self.image_encoder = ImageEncoder(config.image())
        if "mt" in tasks:
            self.text_encoder = TextEncoder(config.src_vocab_size, config.d_model)
        if config.sequence_encoder == "bilstm":
            self.encoder = RecurrentEncoder(config.d_model, dropout=config.dropout)
        else:
            self.encoder = TransformerEncoder(tcfg)
        if "tit" in tasks or "mt" in tasks:
            self.target_decoder = TransformerDecoder(tcfg, config.tgt_vocab_size)
            self.target_head = nn.Linear(config.d_model, config.tgt_vocab_size)
        if "ocr" in tasks:
            self.source_decoder = TransformerDecoder(tcfg, config.src_vocab_size)
            self.source_head = nn.Linear(config.d_model, config.src_vocab_size)

    # feature extraction ---------------------------------------------------

    def normalize_image(self, images):
        """TPS-rectified view of the input batch (identity when TPS is off)."""
        return self.tps(images) if self.tps is not None else images

    def encode_image(self, images) -> FeatureSequence:
        if self.image_encoder is None:
            raise ValueError(f"mode {self.config.mode!r} has no image path")
        return self.encoder(self.image_encoder(self.normalize_image(images)))

    def encode_text(self, src_ids) -> FeatureSequence:
        if self.text_encoder is None:
            raise ValueError(f"mode {self.config.mode!r} has no text encoder")
        return self.encoder(self.text_encoder(src_ids))

    # training forwards ----------------------------------------------------

    def _branch(self, which):
        if which == "target":
            decoder, head = self.target_decoder, self.target_head
        elif which == "source":
            decoder, head = self.source_decoder, self.source_head
        else:
            raise ValueError("which must be 'target' or 'source'")
        if decoder is None:
            raise ValueError(f"mode {self.config.mode!r} has no {which} decoder")
        return decoder, head

    def decode_train(self, memory: FeatureSequence, prefix_ids, which="target"):
        """Logits over the next token at every prefix position."""
        decoder, head = self._branch(which)
        return head(decoder(prefix_ids, memory))

    def tit_logits(self, images, prefix_ids):
        return self.decode_train(self.encode_image(images), prefix_ids, "target")

    def mt_logits(self, src_ids, prefix_ids):
        return self.decode_train(self.encode_text(src_ids), prefix_ids, "target")

    def ocr_logits(self, images, prefix_ids):
        return self.decode_train(self.encode_image(images), prefix_ids, "source")

    # decoding ---------------------------------------------------------------

    @torch.no_grad()
    def generate(self, memory: FeatureSequence, which="target", max_len=None, beam=1):
        """Decode token ids from encoded memory; greedy unless beam > 1."""
        decoder, head = self._branch(which)
        if max_len is None:
            max_len = self.config.max_len - 1
        B = memory.features.shape[0]
        device = memory.features.device

        if beam == 1:
            def step(prefix):
                return torch.log_softmax(self.decode_train(memory, prefix, which)[:, -1], dim=-1)

            return greedy_decode(step, B, BOS, EOS, max_len, device=device)

        rows = []
        for i in range(B):
            feats = memory.features[i : i + 1]
            length = memory.lengths[i : i + 1]

            def step(prefix):
                mem = FeatureSequence(feats.repeat(prefix.shape[0], 1, 1), length.repeat(prefix.shape[0]))
                return torch.log_softmax(self.decode_train(mem, prefix, which)[:, -1], dim=-1)

            rows.append(beam_decode(step, BOS, EOS, max_len, beam))
        width = max(len(r) for r in rows)
        out = torch.full((B, width), PAD, dtype=torch.long, device=device)
        for i, r in enumerate(rows):
            out[i, : len(r)] = torch.tensor(r, dtype=torch.long, device=device)
        return out

    def translate_images(self, images, max_len=None, beam=1):
        return self.generate(self.encode_image(images), "target", max_len, beam)

    def translate_tokens(self, src_ids, max_len=None, beam=1):
        return self.generate(self.encode_text(src_ids), "target", max_len, beam)

    def recognize_images(self, images, max_len=None, beam=1):
        return self.generate(self.encode_image(images), "source", max_len, beam)

    # bookkeeping ------------------------------------------------------------

    def component_modules(self):
        """Name -> module for every instantiated component."""
        named = {
            "tps": self.tps,
            "image_encoder": self.image_encoder,
            "text_encoder": self.text_encoder,
            "shared_encoder": self.encoder,
            "target_decoder": self.target_decoder,
            "target_head": self.target_head,
            "source_decoder": self.source_decoder,
            "source_head": self.source_head,
        }
        return {k: m for k, m in named.items() if m is not None}
