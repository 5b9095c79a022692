import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import bilinear_direct, blur_direct, round_half_even_clip
from retina_pipeline import imageops as io
from retina_pipeline.errors import InvalidSigma, InvalidSize, NoContentWarning
from retina_pipeline.synthetic import fundus_image

uint8_images = arrays(
    np.uint8, st.tuples(st.integers(1, 24), st.integers(1, 24), st.just(3)), elements=st.integers(0, 255)
)


def test_crop_black_border_margin_example():
    img = np.zeros((120, 100, 3), np.uint8)
    img[10:110, 10:90] = 200
    assert io.crop_black_border(img).shape == (100, 80, 3)


def test_crop_threshold_is_strict():
    img = np.zeros((6, 6, 3), np.uint8)
    img[2, 3] = [7, 7, 7]
    img[4, 1] = [0, 8, 0]
    assert io.crop_black_border(img).shape == (1, 1, 3)


def test_crop_all_black_warns_and_keeps_image():
    img = np.zeros((5, 4, 3), np.uint8)
    with pytest.warns(NoContentWarning):
        out = io.crop_black_border(img)
    assert out.shape == img.shape


@settings(max_examples=80)
@given(uint8_images, st.integers(0, 254))
def test_crop_is_idempotent(img, threshold):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NoContentWarning)
        once = io.crop_black_border(img, threshold)
        assert np.array_equal(io.crop_black_border(once, threshold), once)


def test_gaussian_kernel():
    k = io.gaussian_kernel(1.0)
    assert len(k) == 7 and abs(k.sum() - 1) < 1e-15
    assert np.array_equal(k, k[::-1])
    with pytest.raises(InvalidSigma):
        io.gaussian_kernel(0)


IMPULSE_BLEND = [
    [125, 115, 106, 115, 125],
    [115, 68, 29, 68, 115],
    [106, 29, 255, 29, 106],
    [115, 68, 29, 68, 115],
    [125, 115, 106, 115, 125],
]


def test_impulse_blend_matches_direct_convolution():
    img = np.zeros((5, 5, 3), np.uint8)
    img[2, 2] = 255
    out = io.gaussian_blend(img, alpha=4, sigma=1, bias=128)
    for c in range(3):
        assert out[..., c].tolist() == IMPULSE_BLEND


@settings(max_examples=40, deadline=None)
@given(uint8_images, st.floats(0.3, 3.0))
def test_blur_matches_direct_oracle(img, sigma):
    got = io.quantize(io.gaussian_blur(img, sigma))[..., 1].astype(int)
    want = [[round_half_even_clip(v) for v in row] for row in blur_direct(img[..., 1].astype(int).tolist(), sigma)]
    assert np.abs(got - np.array(want)).max() <= 1


@settings(max_examples=40)
@given(st.integers(0, 255), st.floats(0.5, 20))
def test_blend_of_constant_is_bias(level, sigma):
    img = np.full((16, 16, 3), level, np.uint8)
    assert np.all(io.gaussian_blend(img, 4.0, sigma, 128.0) == 128)
    assert np.all(io.quantize(io.gaussian_blur(img, sigma)) == level)


def test_circle_mask_geometry():
    m = io.circle_mask(512, 512)
    frac_zero = 1 - m.mean()
    assert abs(frac_zero - (1 - math.pi / 4)) / (1 - math.pi / 4) < 0.01
    assert m[256, 256] and not m[0, 0]


@settings(max_examples=60)
@given(arrays(np.uint8, st.tuples(st.integers(4, 30), st.integers(4, 30), st.just(3)), elements=st.integers(0, 255)))
def test_circle_crop_zeroes_corners_and_is_idempotent(img):
    out = io.circle_crop(img)
    for corner in (out[0, 0], out[0, -1], out[-1, 0], out[-1, -1]):
        assert not corner.any()
    assert np.array_equal(io.circle_crop(out), out)
    inside = io.circle_mask(*img.shape[:2])
    assert np.array_equal(out[inside], img[inside])


CHECKER_4x4 = [
    [0, 64, 191, 255],
    [64, 96, 159, 191],
    [191, 159, 96, 64],
    [255, 191, 64, 0],
]


def test_resize_checkerboard_8_from_2():
    # resize needs size >= 8; the 4x4 case goes through the sampling kernel directly
    checker = np.zeros((2, 2, 3), np.uint8)
    checker[0, 1] = checker[1, 0] = 255
    want = bilinear_direct([[0, 255], [255, 0]], 8, 8)
    got = io.resize(checker, 8)[..., 0]
    assert got.tolist() == [[round_half_even_clip(v) for v in row] for row in want]
    assert np.array_equal(got, got.T)


def test_checkerboard_upsample_values():
    checker = np.array([[0.0, 255.0], [255.0, 0.0]])[..., None]
    g = (np.arange(4) + 0.5) / 2 - 0.5
    yy, xx = np.meshgrid(g, g, indexing="ij")
    got = io.quantize(io.kernels.bilinear_sample(checker, yy, xx, False))[..., 0]
    assert got.tolist() == CHECKER_4x4


@settings(max_examples=40, deadline=None)
@given(uint8_images, st.integers(8, 20))
def test_resize_matches_direct_oracle(img, size):
    got = io.resize(img, size)
    assert got.shape == (size, size, 3) and got.dtype == np.uint8
    want = bilinear_direct(img[..., 2].astype(int).tolist(), size, size)
    assert np.abs(got[..., 2].astype(int) - np.array([[round_half_even_clip(v) for v in r] for r in want])).max() <= 1


def test_resize_identity_and_errors():
    img = np.arange(8 * 8 * 3, dtype=np.uint8).reshape(8, 8, 3)
    assert np.array_equal(io.resize(img, 8), img)
    with pytest.raises(InvalidSize):
        io.resize(img, 4)


def test_preprocess_config_validation():
    assert io.PreprocessConfig(target_size=299).sigma == pytest.approx(299 / 30)
    for bad in (dict(target_size=300), dict(black_threshold=-1), dict(sigma_ratio=0)):
        with pytest.raises((InvalidSize, InvalidSigma)):
            io.PreprocessConfig(**bad)


@pytest.mark.parametrize("seed", range(5))
def test_preprocess_fundus_output(seed):
    rng = np.random.default_rng(seed)
    img = fundus_image(rng, 150, 200, clip_fraction=0.1, lesions=4)
    out = io.preprocess(img, io.PreprocessConfig(target_size=224))
    assert out.shape == (224, 224, 3)
    assert not out[0, 0].any() and not out[-1, -1].any()
    mask = io.circle_mask(224, 224)
    assert abs(out[mask].mean() - 128) <= 25


def test_preprocess_is_deterministic():
    img = fundus_image(np.random.default_rng(1), 90, 120)
    cfg = io.PreprocessConfig(target_size=224)
    assert np.array_equal(io.preprocess(img, cfg), io.preprocess(img, cfg))


def test_png_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (7, 9, 3)).astype(np.uint8)
    io.write_png(img, tmp_path / "sub" / "a.png")
    assert np.array_equal(io.read_png(tmp_path / "sub" / "a.png"), img)


def test_as_image_rejects_bad_shapes():
    with pytest.raises(ValueError):
        io.as_image(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        io.as_image(np.full((2, 2, 3), 300))
