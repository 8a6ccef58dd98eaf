import math

import numpy as np
import pytest
import torch

from titkit.encoders import (
    FeatureSequence,
    ImageEncoder,
    ImageEncoderConfig,
    TextEncoder,
    paper_image_config,
)

from oracles import finite_difference_grad

torch.manual_seed(0)


def test_feature_sequence_validation():
    with pytest.raises(ValueError):
        FeatureSequence(torch.zeros(4, 8), torch.tensor([4]))
    with pytest.raises(ValueError):
        FeatureSequence(torch.zeros(2, 4, 8), torch.tensor([4, 4, 4]))


def test_padding_mask():
    seq = FeatureSequence(torch.zeros(2, 5, 3), torch.tensor([5, 2]))
    mask = seq.padding_mask()
    assert mask.tolist() == [[True] * 5, [True, True, False, False, False]]


def test_config_rejects_bad_pool_schedule():
    with pytest.raises(ValueError, match="downsamples width"):
        ImageEncoderConfig(stage_pools=((2, 2), (2, 2), (2, 2)))
    with pytest.raises(ValueError, match="equal length"):
        ImageEncoderConfig(stage_channels=(16, 32), stage_blocks=(1, 1, 1))
    with pytest.raises(ValueError, match="divisible"):
        ImageEncoderConfig(out_w=66)


def test_width_downsample_shape_contract():
    """One output feature per 4 pixel columns: 320 -> 80 and 160 -> 40."""
    enc = ImageEncoder(paper_image_config(d_model=16)).eval()
    # shrink channel budget for test speed by rebuilding at tiny widths
    small = ImageEncoder(ImageEncoderConfig(out_w=320, d_model=16, stem_channels=(4,),
                                            stage_channels=(4, 8, 8), stage_blocks=(1, 1, 1))).eval()
    with torch.no_grad():
        out = small(torch.rand(2, 32, 320, 3))
    assert out.features.shape == (2, 80, 16)
    assert out.lengths.tolist() == [80, 80]
    with torch.no_grad():
        out = small(torch.rand(2, 32, 160, 3))
    assert out.features.shape == (2, 40, 16)
    assert out.lengths.tolist() == [40, 40]
    assert enc.config.out_w // enc.config.width_downsample == 80


def test_image_encoder_desk_shape():
    enc = ImageEncoder(ImageEncoderConfig()).eval()
    with torch.no_grad():
        out = enc(torch.rand(3, 32, 64, 3))
    assert out.features.shape == (3, 16, 64)


def test_image_encoder_rejects_wrong_layout():
    enc = ImageEncoder(ImageEncoderConfig())
    with pytest.raises(ValueError, match=r"\(B, 32, W, 3\)"):
        enc(torch.rand(2, 3, 32, 64))
    with pytest.raises(ValueError, match="divisible"):
        enc(torch.rand(2, 32, 62, 3))


def test_image_encoder_batch_permutation_equivariance():
    enc = ImageEncoder(ImageEncoderConfig(stem_channels=(4,), stage_channels=(4, 8, 8),
                                          stage_blocks=(1, 1, 1), d_model=8)).eval()
    x = torch.rand(4, 32, 64, 3)
    perm = torch.tensor([2, 0, 3, 1])
    with torch.no_grad():
        direct = enc(x).features
        permuted = enc(x[perm]).features
    assert torch.allclose(direct[perm], permuted, atol=1e-6)


def test_image_encoder_finite_on_zero_input():
    enc = ImageEncoder(ImageEncoderConfig()).eval()
    with torch.no_grad():
        out = enc(torch.zeros(1, 32, 64, 3))
    assert torch.isfinite(out.features).all()


def test_text_encoder_scales_by_sqrt_d():
    enc = TextEncoder(vocab_size=10, d_model=16)
    ids = torch.tensor([[4, 5]])
    out = enc(ids)
    expected = enc.embedding(ids) * math.sqrt(16)
    assert torch.equal(out.features, expected)


def test_text_encoder_lengths_ignore_pad():
    enc = TextEncoder(vocab_size=10, d_model=8)
    ids = torch.tensor([[4, 5, 0, 0], [4, 0, 0, 0]])
    assert enc(ids).lengths.tolist() == [2, 1]


def test_text_encoder_rejects_out_of_range():
    enc = TextEncoder(vocab_size=10, d_model=8)
    with pytest.raises(ValueError, match="out of vocabulary"):
        enc(torch.tensor([[11]]))
    with pytest.raises(ValueError, match="B x L"):
        enc(torch.tensor([1, 2]))


def test_text_encoder_gradient_matches_finite_differences():
    torch.manual_seed(1)
    enc = TextEncoder(vocab_size=5, d_model=4).double()
    ids = torch.tensor([[1, 2, 4]])
    probe = torch.rand(1, 3, 4, dtype=torch.float64)

    weight = enc.embedding.weight
    (enc(ids).features * probe).sum().backward()

    w0 = weight.detach().clone()

    def f(vec):
        with torch.no_grad():
            weight.copy_(torch.from_numpy(vec).reshape(weight.shape))
            out = float((enc(ids).features * probe).sum())
            weight.copy_(w0)
        return out

    fd = finite_difference_grad(f, w0.numpy().reshape(-1), eps=1e-5).reshape(weight.shape)
    rel = (weight.grad - torch.from_numpy(fd)).abs().max() / (np.abs(fd).max() + 1e-12)
    assert rel <= 1e-3
