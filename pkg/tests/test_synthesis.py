import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from titkit.datasets import load_png
from titkit.synthesis import (
    RenderConfig,
    RenderSpec,
    ToyPairSpec,
    make_toy_parallel,
    render_dataset,
    render_text_image,
    shift_cipher,
    synth_ocr_dataset,
    synth_tit_dataset,
    write_mt_dataset,
)


def test_shift_cipher_is_bijection():
    cipher = shift_cipher("abcdefghij", 3)
    assert cipher["a"] == "d" and cipher["h"] == "a" and cipher["j"] == "c"
    assert sorted(cipher.values()) == sorted(cipher.keys())


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 25))
def test_shift_cipher_inverts(shift):
    alphabet = "abcdefghij"
    fwd = shift_cipher(alphabet, shift)
    back = shift_cipher(alphabet, -shift)
    assert all(back[fwd[c]] == c for c in alphabet)


def test_toy_pair_spec_rejects_non_bijection():
    with pytest.raises(ValueError, match="bijection"):
        ToyPairSpec(cipher={"a": "b", "b": "b"} | {c: c for c in "cdefghij"})


def test_make_toy_parallel_target_is_reversed_cipher():
    spec = ToyPairSpec()
    for source, target in make_toy_parallel(spec, 50, seed=7):
        assert target == "".join(spec.cipher[c] for c in source)[::-1]
        assert (spec.length_range[0] <= len(source) <= spec.length_range[1])


def test_make_toy_parallel_deterministic():
    spec = ToyPairSpec()
    assert make_toy_parallel(spec, 20, seed=3) == make_toy_parallel(spec, 20, seed=3)
    assert make_toy_parallel(spec, 20, seed=3) != make_toy_parallel(spec, 20, seed=4)


def test_render_deterministic_and_bounded():
    spec = RenderSpec(rotation_deg=10.0, background_id=3, contrast=0.5, seed=11)
    a = render_text_image("abcj", spec, 32, 64)
    b = render_text_image("abcj", spec, 32, 64)
    assert np.array_equal(a, b)
    assert a.shape == (32, 64, 3) and a.dtype == np.float32
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_render_distinguishes_text_from_background():
    """Glyph pixels must sit at least min contrast away from the local band."""
    spec = RenderSpec(contrast=0.5, seed=2)
    with_text = render_text_image("aaaa", spec, 32, 64)
    blank_bg = render_text_image("aaaa", RenderSpec(contrast=0.0, seed=2), 32, 64)
    diff = np.abs(with_text - blank_bg).max()
    assert diff > 0.3


def test_render_rejects_overflow():
    with pytest.raises(ValueError, match="text overflow"):
        render_text_image("a" * 50, RenderSpec(), 32, 64)
    with pytest.raises(ValueError, match="text overflow"):
        render_text_image("aaaaaaaaaa", RenderSpec(rotation_deg=45.0), 32, 64)


def test_render_rejects_empty_text():
    with pytest.raises(ValueError, match="empty text"):
        render_text_image("", RenderSpec(), 32, 64)


def test_rotation_moves_pixels():
    flat = render_text_image("abab", RenderSpec(seed=5), 32, 64)
    tilted = render_text_image("abab", RenderSpec(rotation_deg=15.0, seed=5), 32, 64)
    assert not np.array_equal(flat, tilted)


def test_render_dataset_matches_on_disk_pixels(tmp_path):
    pairs = make_toy_parallel(ToyPairSpec(), 12, seed=0)
    cfg = RenderConfig(seed=9, max_rotation_deg=15.0)
    in_memory = render_dataset([s for s, _ in pairs], cfg)
    synth_tit_dataset(pairs, cfg, str(tmp_path / "d"))
    for i, img in enumerate(in_memory):
        on_disk = load_png(str(tmp_path / "d" / "images" / f"{i:06d}.png"))
        assert np.allclose(img, on_disk, atol=1.0 / 255.0 + 1e-6), f"record {i}"


def test_synth_tit_dataset_layout(tmp_path):
    pairs = make_toy_parallel(ToyPairSpec(), 5, seed=0)
    manifest = synth_tit_dataset(pairs, RenderConfig(seed=0), str(tmp_path / "tit"))
    root = tmp_path / "tit"
    assert (root / "manifest.jsonl").exists() and str(root / "manifest.jsonl") == manifest
    assert (root / "src_vocab.txt").exists() and (root / "tgt_vocab.txt").exists()
    assert sorted(p.name for p in (root / "images").iterdir()) == [f"{i:06d}.png" for i in range(5)]


def test_synth_ocr_dataset_labels_are_the_text(tmp_path):
    from titkit.datasets import read_manifest

    texts = [s for s, _ in make_toy_parallel(ToyPairSpec(), 4, seed=1)]
    manifest = synth_ocr_dataset(texts, RenderConfig(seed=0), str(tmp_path / "ocr"))
    records = read_manifest(manifest)
    assert [r["source"] for r in records] == texts
    assert all("render" in r for r in records)


def test_write_mt_dataset(tmp_path):
    from titkit.datasets import read_manifest

    pairs = make_toy_parallel(ToyPairSpec(), 4, seed=2)
    manifest = write_mt_dataset(pairs, str(tmp_path / "mt"))
    records = read_manifest(manifest)
    assert [(r["source"], r["target"]) for r in records] == pairs


def test_empty_inputs_rejected(tmp_path):
    with pytest.raises(ValueError):
        synth_tit_dataset([], RenderConfig(), str(tmp_path / "x"))
    with pytest.raises(ValueError):
        write_mt_dataset([], str(tmp_path / "y"))
    with pytest.raises(ValueError):
        make_toy_parallel(ToyPairSpec(), 0, seed=0)
