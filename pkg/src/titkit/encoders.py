"""Image and text encoders that feed the shared transformer.

Both encoders emit a :class:`FeatureSequence`: the image encoder runs a
residual conv stack over a normalized text-line image and reads out one
feature vector per column group, the text encoder is an embedding lookup
scaled by sqrt(D). Positional encoding is added downstream by the shared
transformer encoder, not here.
"""

import math
from dataclasses import dataclass

import torch
from torch import nn

from .vocab import PAD


@dataclass
class FeatureSequence:
    """A batch of feature sequences with per-item valid lengths.

    features: B x L x D float tensor.
    lengths: B int tensor, number of valid positions per item.
    """

    features: torch.Tensor
    lengths: torch.Tensor

    def __post_init__(self):
        if self.features.dim() != 3:
            raise ValueError("features must be a B x L x D tensor")
        if self.lengths.dim() != 1 or self.lengths.shape[0] != self.features.shape[0]:
            raise ValueError("lengths must be a 1-d tensor with one entry per batch item")

    @property
    def dim(self):
        return self.features.shape[-1]

    def padding_mask(self):
        """B x L boolean mask, True at valid positions."""
        L = self.features.shape[1]
        positions = torch.arange(L, device=self.features.device)
        return positions.unsqueeze(0) < self.lengths.unsqueeze(1).to(positions.device)


@dataclass
class ImageEncoderConfig:
    """Conv stack layout. The pool schedule must shrink width by exactly
    width_downsample so that column count matches the text length budget
    (width 320 -> 80 columns, width 160 -> 40)."""

    out_h: int = 32
    out_w: int = 64
    d_model: int = 64
    width_downsample: int = 4
    stem_channels: tuple = (8,)
    stage_channels: tuple = (16, 32, 64)
    stage_blocks: tuple = (1, 1, 2)
    stage_pools: tuple = ((2, 2), (2, 2), (2, 1))
    in_channels: int = 3

    def __post_init__(self):
        if len(self.stage_channels) != len(self.stage_blocks) or len(self.stage_channels) != len(self.stage_pools):
            raise ValueError("stage_channels, stage_blocks and stage_pools must have equal length")
        w = 1
        h = 1
        for ph, pw in self.stage_pools:
            h *= ph
            w *= pw
        if w != self.width_downsample:
            raise ValueError(f"pool schedule downsamples width by {w}, expected {self.width_downsample}")
        if self.out_w % self.width_downsample != 0:
            raise ValueError("out_w must be divisible by width_downsample")
        if self.out_h % h != 0:
            raise ValueError("pool schedule does not evenly divide out_h")


def paper_image_config(d_model=512, out_w=320):
    """Deep preset in the style of the 29-layer scene-text ResNet."""
    return ImageEncoderConfig(
        out_h=32,
        out_w=out_w,
        d_model=d_model,
        stem_channels=(32, 64),
        stage_channels=(128, 256, 512, 512),
        stage_blocks=(1, 2, 5, 3),
        stage_pools=((2, 2), (2, 2), (2, 1), (2, 1)),
    )


class ResidualBlock(nn.Module):
    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        if in_ch != out_ch:
            self.skip = nn.Sequential(nn.Conv2d(in_ch, out_ch, 1, bias=False), nn.BatchNorm2d(out_ch))
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        h = torch.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return torch.relu(h + self.skip(x))


class ImageEncoder(nn.Module):
    """Residual conv stack over a B x H x W x C image batch.

    Width shrinks by config.width_downsample, height is pooled down and the
    remainder collapsed by a per-column mean, then a linear layer maps the
    channel dimension to d_model. Output length is W / width_downsample.
    """

    def __init__(self, config: ImageEncoderConfig = None, **overrides):
        super().__init__()
        if config is None:
            config = ImageEncoderConfig(**overrides)
        elif overrides:
            raise ValueError("pass either a config or keyword overrides, not both")
        self.config = config

        layers = []
        ch = config.in_channels
        for out_ch in config.stem_channels:
            layers += [nn.Conv2d(ch, out_ch, 3, padding=1, bias=False), nn.BatchNorm2d(out_ch), nn.ReLU(inplace=True)]
            ch = out_ch
        self.stem = nn.Sequential(*layers)

        stages = []
        for out_ch, n_blocks, pool in zip(config.stage_channels, config.stage_blocks, config.stage_pools):
            blocks = [nn.MaxPool2d(pool)]
            for _ in range(n_blocks):
                blocks.append(ResidualBlock(ch, out_ch))
                ch = out_ch
            stages.append(nn.Sequential(*blocks))
        self.stages = nn.ModuleList(stages)
        self.project = nn.Linear(ch, config.d_model)

    def forward(self, images) -> FeatureSequence:
        cfg = self.config
        if images.dim() != 4 or images.shape[1] != cfg.out_h or images.shape[3] != cfg.in_channels:
            raise ValueError(
                f"expected image batch shaped (B, {cfg.out_h}, W, {cfg.in_channels}), got {tuple(images.shape)}"
            )
        if images.shape[2] % cfg.width_downsample != 0:
            raise ValueError(f"image width must be divisible by {cfg.width_downsample}")
        x = images.permute(0, 3, 1, 2)
        x = self.stem(x)
        for stage in self.stages:
            x = stage(x)
        x = x.mean(dim=2)  # collapse remaining height: B x C x W'
        feats = self.project(x.transpose(1, 2))
        lengths = torch.full((feats.shape[0],), feats.shape[1], dtype=torch.long, device=feats.device)
        return FeatureSequence(feats, lengths)


class TextEncoder(nn.Module):
    """Token embedding scaled by sqrt(d_model)."""

    def __init__(self, vocab_size, d_model, pad_id=PAD):
        super().__init__()
        self.vocab_size = vocab_size
        self.d_model = d_model
        self.pad_id = pad_id
        self.embedding = nn.Embedding(vocab_size, d_model)

    def forward(self, ids) -> FeatureSequence:
        if ids.dim() != 2:
            raise ValueError("ids must be a B x L tensor")
        if ids.numel() and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise ValueError("token id out of vocabulary range")
        feats = self.embedding(ids) * math.sqrt(self.d_model)
        lengths = ids.ne(self.pad_id).sum(dim=1)
        return FeatureSequence(feats, lengths)
