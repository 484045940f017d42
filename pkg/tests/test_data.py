import json

import numpy as np
import pytest

from nnuzoo.data import (IGNORE_INDEX, AugmentConfig, DataValidationError, SegmentationDataset, SegmentationSample,
                         SynthSpec, augment, collate, convert_npy_dir, decode_nzt, encode_nzt, flip,
                         generate_synthetic, load_dataset, manifest_template, preprocess, read_nzt, rot90,
                         save_dataset, split_dataset, write_nzt)


def sample(h=6, w=6, c=1, seed=0, k=3):
    r = np.random.default_rng(seed)
    return SegmentationSample(r.normal(size=(c, h, w)).astype(np.float32), r.integers(0, k, (h, w)), "s")


# ----------------------------------------------------------------------------- NZT1

def test_nzt_layout():
    raw = encode_nzt(np.arange(6, dtype=np.uint16).reshape(2, 3))
    assert raw[:4] == b"NZT1" and raw[4] == 2 and raw[5] == 2
    assert raw[6:14] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert raw[14:] == np.arange(6, dtype="<u2").tobytes()


@pytest.mark.parametrize("dtype", ["<f4", "<f8", "<u2", "u1", "<i4", "<i8"])
def test_nzt_round_trip(tmp_path, dtype):
    a = (np.random.default_rng(0).normal(size=(3, 4, 5)) * 50).astype(dtype)
    write_nzt(tmp_path / "a.nzt", a)
    back = read_nzt(tmp_path / "a.nzt")
    assert back.dtype == a.dtype and np.array_equal(back, a)


def test_nzt_rejects_bad_bytes():
    raw = encode_nzt(np.zeros(4, dtype=np.float32))
    with pytest.raises(DataValidationError):
        decode_nzt(b"XXXX" + raw[4:])
    with pytest.raises(DataValidationError):
        decode_nzt(raw[:-1])


# ----------------------------------------------------------------------------- synthetic generation

def test_synthetic_is_deterministic():
    a, b = (generate_synthetic(SynthSpec(noise=0.3), 5, seed=7) for _ in range(2))
    for x, y in zip(a, b):
        assert x.image.tobytes() == y.image.tobytes() and x.label.tobytes() == y.label.tobytes()
    c = generate_synthetic(SynthSpec(noise=0.3), 5, seed=8)
    assert a[0].label.tobytes() != c[0].label.tobytes()


def test_threshold_classifier_is_perfect_on_noiseless_data():
    spec = SynthSpec(noise=0.0, separation=1.0)
    ds = generate_synthetic(spec, 50, seed=1)
    correct = total = 0
    for s in ds:
        # midpoints between the class intensities k * separation
        pred = np.digitize(s.image[0], [(k + 0.5) * spec.separation for k in range(spec.num_classes - 1)])
        correct += int((pred == s.label).sum())
        total += s.label.size
    assert correct == total


def test_all_classes_appear():
    ds = generate_synthetic(SynthSpec(num_classes=5, shapes=4), 100, seed=2)
    seen = set()
    for s in ds:
        seen |= set(np.unique(s.label).tolist())
    assert seen == set(range(5))


@pytest.mark.parametrize("bad", [dict(canvas=(4, 64)), dict(num_classes=1), dict(shapes=0), dict(noise=-1)])
def test_synth_spec_validation(bad):
    with pytest.raises(ValueError):
        SynthSpec(**bad)


def test_generate_requires_count():
    with pytest.raises(ValueError):
        generate_synthetic(SynthSpec(), 0)


# ----------------------------------------------------------------------------- manifests

def test_save_load_round_trip(tmp_path):
    ds = generate_synthetic(SynthSpec(noise=0.2), 4, seed=3)
    save_dataset(ds, tmp_path)
    back = load_dataset(tmp_path)
    assert back.num_classes == 3 and back.ids == ds.ids
    for a, b in zip(ds, back):
        assert np.array_equal(a.image, b.image) and np.array_equal(a.label, b.label)
        assert a.image.dtype == b.image.dtype
    assert read_nzt(tmp_path / "labels" / "synth_00000.nzt").dtype == np.uint16


def test_manifest_is_canonical_json(tmp_path):
    path = save_dataset(generate_synthetic(SynthSpec(), 2, seed=0), tmp_path)
    text = path.read_text()
    assert text == json.dumps(json.loads(text), sort_keys=True, separators=(",", ":")) + "\n"


def test_out_of_range_label_names_sample(tmp_path):
    ds = generate_synthetic(SynthSpec(), 3, seed=4)
    save_dataset(ds, tmp_path)
    lbl = read_nzt(tmp_path / "labels" / "synth_00001.nzt")
    lbl[0, 0] = 3
    write_nzt(tmp_path / "labels" / "synth_00001.nzt", lbl)
    with pytest.raises(DataValidationError, match="synth_00001"):
        load_dataset(tmp_path)


def test_missing_file(tmp_path):
    save_dataset(generate_synthetic(SynthSpec(), 2, seed=0), tmp_path)
    (tmp_path / "images" / "synth_00000.nzt").unlink()
    with pytest.raises(FileNotFoundError, match="synth_00000"):
        load_dataset(tmp_path)
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nowhere")


def test_camus_manifest_has_three_classes(tmp_path):
    m = manifest_template("CAMUS")
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    assert load_dataset(tmp_path).num_classes == 3


def test_convert_npy_dir(tmp_path):
    src = tmp_path / "raw"
    src.mkdir()
    r = np.random.default_rng(0)
    for sid in ("p01", "p02"):
        np.save(src / f"{sid}_image.npy", r.normal(size=(32, 32)))
        np.save(src / f"{sid}_label.npy", r.integers(0, 4, (32, 32)))
    ds = load_dataset(convert_npy_dir(src, tmp_path / "out", "ACDC"))
    assert ds.num_classes == 4 and ds.ids == ["p01", "p02"] and ds[0].image.shape == (1, 32, 32)
    np.save(src / "p03_image.npy", r.normal(size=(32, 32)))
    np.save(src / "p03_label.npy", np.full((32, 32), 9))
    with pytest.raises(DataValidationError, match="p03"):
        convert_npy_dir(src, tmp_path / "out2", "ACDC")


# ----------------------------------------------------------------------------- preprocessing

def test_constant_image_normalizes_to_zero():
    s = SegmentationSample(np.full((1, 64, 64), 5.0, np.float32), np.zeros((64, 64), np.int64))
    assert np.all(preprocess(s, (64, 64)).image == 0)


def test_zscore_moments():
    s = sample(64, 64, c=2, seed=5)
    s.image = s.image * 7 + 3
    out = preprocess(s, (64, 64)).image.astype(np.float64)
    assert np.allclose(out.mean((1, 2)), 0, atol=1e-5) and np.allclose(out.std((1, 2)), 1, atol=1e-5)


def test_center_crop_and_pad():
    big = SegmentationSample(np.arange(300 * 300, dtype=np.float32).reshape(1, 300, 300),
                             np.zeros((300, 300), np.int64))
    out = preprocess(big, (256, 256), normalization="none")
    assert out.image[0, 0, 0] == 22 * 300 + 22

    small = SegmentationSample(np.ones((1, 200, 200), np.float32), np.ones((200, 200), np.int64))
    out = preprocess(small, (256, 256), normalization="none")
    valid = out.label != IGNORE_INDEX
    rows, cols = np.where(valid)
    assert (rows.min(), rows.max(), cols.min(), cols.max()) == (28, 227, 28, 227)
    assert np.all(out.image[0][~valid] == 0)


def test_zscore_ignores_padding_label():
    s = sample(64, 64, seed=6)
    s.label[:, :10] = IGNORE_INDEX
    out = preprocess(s, (64, 64)).image[0]
    assert abs(out[:, 10:].mean()) < 1e-5


def test_preprocess_errors():
    with pytest.raises(ValueError, match="divisible"):
        preprocess(sample(), (48, 50))
    with pytest.raises(ValueError, match="empty"):
        preprocess(SegmentationSample(np.zeros((1, 0, 0), np.float32), np.zeros((0, 0), np.int64)), (32, 32))


# ----------------------------------------------------------------------------- splitting

def test_split_sizes_and_disjointness():
    ds = generate_synthetic(SynthSpec(), 10, seed=0)
    tr, va = split_dataset(ds, 0.8, seed=0)
    assert (len(tr), len(va)) == (8, 2)
    assert set(tr.ids) | set(va.ids) == set(ds.ids) and not set(tr.ids) & set(va.ids)


def test_split_is_seeded():
    ds = generate_synthetic(SynthSpec(), 25, seed=0)
    assert split_dataset(ds, seed=4)[1].ids == split_dataset(ds, seed=4)[1].ids
    assert split_dataset(ds, seed=4)[1].ids != split_dataset(ds, seed=5)[1].ids
    assert len(split_dataset(ds)[0]) == 20


def test_split_needs_two():
    with pytest.raises(ValueError):
        split_dataset(generate_synthetic(SynthSpec(), 1), 0.8)


# ----------------------------------------------------------------------------- augmentation

@pytest.mark.parametrize("axis", [0, 1])
def test_double_flip_identity(axis):
    s = sample()
    t = flip(flip(s, axis), axis)
    assert np.array_equal(t.image, s.image) and np.array_equal(t.label, s.label)


def test_corner_tracking():
    h, w = 5, 5
    img = np.zeros((1, h, w), np.float32)
    lbl = np.zeros((h, w), np.int64)
    img[0, 0, 0], lbl[0, 0] = 9.0, 2
    s = SegmentationSample(img, lbl)
    # (row, col) -> expected location of the marked top-left pixel
    cases = {"fh": (flip(s, 1), (0, w - 1)), "fv": (flip(s, 0), (h - 1, 0)),
             "r1": (rot90(s, 1), (h - 1, 0)), "r2": (rot90(s, 2), (h - 1, w - 1)), "r3": (rot90(s, 3), (0, w - 1))}
    for t, (r, c) in cases.values():
        assert t.image[0, r, c] == 9.0 and t.label[r, c] == 2
        assert np.argwhere(t.label == 2).tolist() == [[r, c]]


def test_augment_preserves_pixel_multisets():
    s = sample(8, 8, c=2, seed=9)
    rng = np.random.default_rng(0)
    for _ in range(20):
        t = augment(s, rng)
        assert np.array_equal(np.sort(t.image, axis=None), np.sort(s.image, axis=None))
        assert np.array_equal(np.sort(t.label, axis=None), np.sort(s.label, axis=None))


def test_augment_moves_image_and_label_together():
    s = sample(8, 8, seed=10)
    s.image[0] = s.label.astype(np.float32)
    rng = np.random.default_rng(1)
    for _ in range(20):
        t = augment(s, rng)
        assert np.array_equal(t.image[0], t.label.astype(np.float32))


def test_augment_probability_zero_is_identity():
    s = sample()
    t = augment(s, np.random.default_rng(0), AugmentConfig(p_flip=0, p_rot=0))
    assert np.array_equal(t.image, s.image) and np.array_equal(t.label, s.label)


def test_augment_non_square_keeps_shape():
    s = sample(6, 8)
    rng = np.random.default_rng(2)
    for _ in range(10):
        assert augment(s, rng, AugmentConfig(p_rot=1.0)).label.shape == (6, 8)


def test_augment_stream_is_seeded():
    s = sample()
    a = [augment(s, np.random.default_rng(3)).label for _ in range(2)]
    assert np.array_equal(*a)


def test_collate():
    x, y = collate([sample(seed=1), sample(seed=2)])
    assert x.shape == (2, 1, 6, 6) and x.dtype == np.float32 and y.dtype == np.int64
