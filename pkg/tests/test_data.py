import gzip
import math
import struct

import numpy as np
import pytest

from semcom import data
from semcom.errors import DatasetError


def _idx(arr, magic):
    arr = np.asarray(arr, dtype=np.uint8)
    return struct.pack(">I", magic) + struct.pack(f">{arr.ndim}I", *arr.shape) + arr.tobytes()


# ---------------------------------------------------------------- IDX


def test_idx_pixel_scaling(tmp_path):
    (tmp_path / "i").write_bytes(_idx(np.full((1, 2, 2), 255), data.IDX_UBYTE_3D))
    (tmp_path / "l").write_bytes(_idx([7], data.IDX_UBYTE_1D))
    ds = data.load_idx(tmp_path / "i", tmp_path / "l")
    assert ds.images.shape == (1, 2, 2, 1)
    assert np.all(ds.images == 1.0)
    assert ds.labels.tolist() == [7]


def test_idx_gzip_and_four_dim(tmp_path):
    img = np.arange(2 * 3 * 3 * 3).reshape(2, 3, 3, 3)
    (tmp_path / "i.gz").write_bytes(gzip.compress(_idx(img, data.IDX_UBYTE_4D)))
    ds = data.load_idx(tmp_path / "i.gz")
    np.testing.assert_allclose(ds.images, img / 255.0)


def test_idx_count_mismatch(tmp_path):
    (tmp_path / "i").write_bytes(_idx(np.zeros((3, 2, 2)), data.IDX_UBYTE_3D))
    (tmp_path / "l").write_bytes(_idx([0, 1], data.IDX_UBYTE_1D))
    with pytest.raises(DatasetError, match="count mismatch"):
        data.load_idx(tmp_path / "i", tmp_path / "l")


@pytest.mark.parametrize("blob", [b"\0\0\x08\x09" + b"\0" * 8, b"\0\0", _idx(np.zeros((2, 2, 2)), 0x803)[:-1]])
def test_idx_malformed(tmp_path, blob):
    (tmp_path / "i").write_bytes(blob)
    with pytest.raises(DatasetError):
        data.load_idx(tmp_path / "i")


def test_idx_missing_file(tmp_path):
    with pytest.raises(DatasetError):
        data.load_idx(tmp_path / "nope")


@pytest.mark.parametrize("kind", data.SYNTH_KINDS)
def test_idx_roundtrip(tmp_path, kind):
    ds = data.synth_dataset(kind, 10, seed=0)
    ds.images = np.round(ds.images * 255) / 255
    data.write_idx(ds, tmp_path / "i", tmp_path / "l")
    back = data.load_idx(tmp_path / "i", tmp_path / "l")
    np.testing.assert_allclose(back.images, ds.images, atol=1e-12)
    np.testing.assert_allclose(back.labels, ds.labels, atol=1e-12)


# ---------------------------------------------------------------- synthetic


@pytest.mark.parametrize("kind", data.SYNTH_KINDS)
def test_synth_deterministic_and_in_range(kind):
    a, b = data.synth_dataset(kind, 50, seed=4), data.synth_dataset(kind, 50, seed=4)
    np.testing.assert_array_equal(a.images, b.images)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.images.min() >= 0.0 and a.images.max() <= 1.0
    assert not np.array_equal(a.images, data.synth_dataset(kind, 50, seed=5).images)


def test_synth_label_sets():
    digits = data.synth_dataset("two_class_digits_8x8", 200, seed=0)
    assert set(digits.labels.tolist()) == {0, 1} and digits.shape == (8, 8, 1)
    blobs = data.synth_dataset("shifted_blobs", 200, seed=0)
    assert set(blobs.labels.tolist()) == {0, 1}
    masks = data.synth_dataset("mask_shapes", 20, seed=0)
    assert masks.is_mask_task and set(np.unique(masks.labels)) <= {0.0, 1.0}
    # rectangles are brighter than the background
    inside = masks.images[masks.labels > 0.5].mean()
    outside = masks.images[masks.labels < 0.5].mean()
    assert inside > outside + 0.4


def test_shifted_blobs_differ_by_ramp():
    plain = data.synth_dataset("shifted_blobs", 30, seed=1)
    shifted = data.synth_dataset("shifted_blobs", 30, seed=1, shifted=True)
    assert plain.images.max() <= 0.5
    assert shifted.images.mean() > plain.images.mean() + 0.1


def test_synth_errors():
    with pytest.raises(DatasetError):
        data.synth_dataset("nope", 3, 0)
    with pytest.raises(DatasetError):
        data.synth_dataset("shifted_blobs", 0, 0)


def test_split_partitions():
    ds = data.synth_dataset("two_class_digits_8x8", 40, seed=0)
    tr, te = ds.split(0.25, seed=3)
    assert len(tr) == 30 and len(te) == 10
    joined = np.concatenate([tr.images, te.images]).reshape(40, -1)
    assert len({row.tobytes() for row in joined}) == len({row.tobytes() for row in ds.images.reshape(40, -1)})


# ---------------------------------------------------------------- resampling


def test_bilinear_upsample_row():
    out = data.resample_image(np.array([[0.0, 1.0]]), 1, 3)
    np.testing.assert_allclose(out, [[0.0, 0.5, 1.0]], atol=1e-15)


def test_constant_image_stays_constant():
    np.testing.assert_allclose(data.resample_image(np.full((16, 16, 1), 0.3), 28, 28), 0.3, atol=1e-15)


def test_same_size_is_identity():
    img = np.random.default_rng(0).random((5, 5, 2))
    np.testing.assert_array_equal(data.resample_image(img, 5, 5), img)


def test_match_images_channels():
    rgb = np.random.default_rng(0).random((2, 4, 4, 3))
    out = data.match_images(rgb, (8, 8, 1))
    assert out.shape == (2, 8, 8, 1)
    np.testing.assert_allclose(out[:, 0, 0, 0], rgb[:, 0, 0].mean(axis=-1))


# ---------------------------------------------------------------- metrics


def test_psnr_examples():
    a = np.zeros((4, 4))
    assert data.psnr(a, a) == math.inf
    assert data.psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)
    assert data.psnr(a, a + 1.0) == pytest.approx(0.0, abs=1e-12)


def test_psnr_monotone_in_noise():
    rng = np.random.default_rng(0)
    img = rng.random((8, 8))
    e = rng.normal(size=(8, 8))
    vals = [data.psnr(img, img + s * e) for s in (0.01, 0.05, 0.1, 0.3)]
    assert vals == sorted(vals, reverse=True)


def test_iou_examples():
    a = np.array([1, 1, 0, 0])
    assert data.iou(a, a) == 1.0
    assert data.iou(a, 1 - a) == 0.0
    b = np.array([0, 1, 1, 0])
    assert data.iou(a, b) == pytest.approx(1 / 3)
    assert data.iou(a, b) == data.iou(b, a)
    assert data.iou(np.zeros(3), np.zeros(3)) == 1.0


def test_accuracy():
    assert data.accuracy([1, 0, 1, 1], [1, 1, 1, 1]) == 0.75


def test_dataset_rejects_nan_pixels():
    with pytest.raises(DatasetError):
        data.Dataset(np.array([[[np.nan]]]))
