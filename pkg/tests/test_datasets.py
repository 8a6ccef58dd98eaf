import numpy as np
import pytest

from titkit.datasets import (
    float_to_u8,
    image_to_float,
    load_dataset,
    load_png,
    read_manifest,
    save_dataset,
    save_png,
    write_manifest,
)
from titkit.vocab import decode

from conftest import toy_bundle


def test_u8_float_round_trip():
    rng = np.random.default_rng(0)
    u8 = rng.integers(0, 256, size=(8, 12, 3), dtype=np.uint8)
    assert np.array_equal(float_to_u8(image_to_float(u8)), u8)


def test_png_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    u8 = rng.integers(0, 256, size=(32, 64, 3), dtype=np.uint8)
    img = image_to_float(u8)
    path = tmp_path / "x.png"
    save_png(img, str(path))
    assert np.array_equal(float_to_u8(load_png(str(path))), u8)


def test_manifest_round_trip(tmp_path):
    records = [{"id": "a", "source": "héllo"}, {"id": "b", "target": "xyz"}]
    path = tmp_path / "manifest.jsonl"
    write_manifest(records, str(path))
    assert read_manifest(str(path)) == records


@pytest.mark.parametrize("kind", ["tit", "ocr", "mt"])
def test_save_load_round_trip(tmp_path, kind):
    bundle = toy_bundle(n=6)
    sv, tv = bundle["src_vocab"], bundle["tgt_vocab"]
    out = tmp_path / kind
    save_dataset(bundle[kind], kind, str(out), src_vocab=sv, tgt_vocab=tv)
    loaded = load_dataset(str(out), kind, src_vocab=sv, tgt_vocab=tv, max_len_src=16, max_len_tgt=16)
    assert len(loaded) == 6
    for orig, back in zip(bundle[kind], loaded):
        assert back.id == orig.id
        if kind in ("tit", "mt"):
            assert back.target == orig.target
        if kind in ("ocr", "mt"):
            assert back.source == orig.source
        if kind in ("tit", "ocr"):
            assert np.array_equal(float_to_u8(back.image), float_to_u8(orig.image))


def test_load_dataset_uses_adjacent_vocab_files(tmp_path):
    bundle = toy_bundle(n=4)
    out = tmp_path / "mt"
    save_dataset(bundle["mt"], "mt", str(out),
                 src_vocab=bundle["src_vocab"], tgt_vocab=bundle["tgt_vocab"])
    loaded = load_dataset(str(out), "mt", max_len_src=16, max_len_tgt=16)
    assert [ex.source for ex in loaded] == [ex.source for ex in bundle["mt"]]


def test_load_dataset_accepts_manifest_path(tmp_path):
    bundle = toy_bundle(n=3)
    out = tmp_path / "mt"
    save_dataset(bundle["mt"], "mt", str(out),
                 src_vocab=bundle["src_vocab"], tgt_vocab=bundle["tgt_vocab"])
    loaded = load_dataset(str(out / "manifest.jsonl"), "mt", max_len_src=16, max_len_tgt=16)
    assert len(loaded) == 3


def test_load_dataset_unknown_kind(tmp_path):
    with pytest.raises(ValueError, match="unknown dataset kind"):
        load_dataset(str(tmp_path), "audio")


def test_load_dataset_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError, match="manifest"):
        load_dataset(str(tmp_path), "mt")


def test_load_dataset_names_record_on_missing_image(tmp_path):
    bundle = toy_bundle(n=3)
    out = tmp_path / "tit"
    save_dataset(bundle["tit"], "tit", str(out),
                 src_vocab=bundle["src_vocab"], tgt_vocab=bundle["tgt_vocab"])
    (out / "images" / "t0001.png").unlink()
    with pytest.raises(FileNotFoundError, match="t0001"):
        load_dataset(str(out), "tit", tgt_vocab=bundle["tgt_vocab"])


def test_load_dataset_rejects_shape_mismatch(tmp_path):
    bundle = toy_bundle(n=2)
    out = tmp_path / "ocr"
    save_dataset(bundle["ocr"], "ocr", str(out),
                 src_vocab=bundle["src_vocab"], tgt_vocab=bundle["tgt_vocab"])
    save_png(np.zeros((16, 16, 3), dtype=np.float32), str(out / "images" / "o0001.png"))
    with pytest.raises(ValueError, match="o0001"):
        load_dataset(str(out), "ocr", src_vocab=bundle["src_vocab"])


def test_saved_text_matches_decode(tmp_path):
    bundle = toy_bundle(n=4)
    out = tmp_path / "ocr"
    save_dataset(bundle["ocr"], "ocr", str(out),
                 src_vocab=bundle["src_vocab"], tgt_vocab=bundle["tgt_vocab"])
    records = read_manifest(str(out / "manifest.jsonl"))
    for rec, ex in zip(records, bundle["ocr"]):
        assert rec["source"] == decode(ex.source, bundle["src_vocab"])
