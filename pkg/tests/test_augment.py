import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from retina_pipeline import augment as aug
from retina_pipeline.errors import NonSquareInput
from retina_pipeline.imageops import circle_mask

squares = st.integers(2, 20).flatmap(
    lambda n: arrays(np.uint8, (n, n, 3), elements=st.integers(0, 255))
)


def _rotate_oracle(img, angle):
    """Per-pixel inverse rotation with scalar bilinear sampling, zero outside."""
    n = img.shape[0]
    c = (n - 1) / 2
    t = np.radians(angle)
    out = np.zeros(img.shape, np.float64)

    def px(r, q):
        return img[r, q].astype(float) if 0 <= r < n and 0 <= q < n else np.zeros(3)

    for r in range(n):
        for q in range(n):
            sr = c + np.cos(t) * (r - c) + np.sin(t) * (q - c)
            sq = c + np.cos(t) * (q - c) - np.sin(t) * (r - c)
            r0, q0 = int(np.floor(sr)), int(np.floor(sq))
            fr, fq = sr - r0, sq - q0
            out[r, q] = (
                (1 - fr) * ((1 - fq) * px(r0, q0) + fq * px(r0, q0 + 1))
                + fr * ((1 - fq) * px(r0 + 1, q0) + fq * px(r0 + 1, q0 + 1))
            )
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


@settings(max_examples=40)
@given(squares)
def test_rotate_quarter_turns_match_rot90(img):
    for k in range(4):
        assert np.array_equal(aug.rotate(img, 90 * k), np.rot90(img, k))
    assert np.array_equal(aug.rotate(img, 360), img)


def test_rotate_impulse_matches_oracle():
    img = np.zeros((9, 9, 3), np.uint8)
    img[2, 6] = 255
    img[4, 4] = 90
    got = aug.rotate(img, 30)
    assert np.abs(got.astype(int) - _rotate_oracle(img, 30).astype(int)).max() <= 1


@settings(max_examples=20, deadline=None)
@given(squares, st.floats(0, 360))
def test_rotate_matches_oracle(img, angle):
    assert np.abs(aug.rotate(img, angle).astype(int) - _rotate_oracle(img, angle).astype(int)).max() <= 1


@settings(max_examples=30, deadline=None)
@given(st.integers(12, 40), st.floats(0, 360))
def test_rotation_keeps_circle_content_masked(n, angle):
    img = np.repeat(np.where(circle_mask(n, n), 200, 0).astype(np.uint8)[..., None], 3, axis=2)
    out = aug.rotate(img, angle)
    yy, xx = np.mgrid[0:n, 0:n] - (n - 1) / 2
    outside = np.hypot(yy, xx) > n / 2 + 1.5
    assert not out[outside].any()


def test_rotate_rejects_non_square():
    with pytest.raises(NonSquareInput):
        aug.rotate(np.zeros((4, 5, 3), np.uint8), 10)


@given(squares, st.booleans(), st.booleans())
def test_reflect_is_an_involution(img, h, v):
    assert np.array_equal(aug.reflect(aug.reflect(img, h, v), h, v), img)


def test_reflect_directions():
    img = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3)
    assert np.array_equal(aug.reflect(img, horizontal=True), img[:, ::-1])
    assert np.array_equal(aug.reflect(img, vertical=True), img[::-1])


def test_noise_moments_on_large_image():
    img = np.full((512, 512, 3), 128, np.uint8)
    out = aug.add_noise(img, 10.0, seed=1).astype(float)
    assert abs(out.mean() - 128) < 0.5
    assert abs(out.std() - 10) < 0.5


def test_noise_zero_sigma_and_validation():
    img = np.full((4, 4, 3), 9, np.uint8)
    assert np.array_equal(aug.add_noise(img, 0, 3), img)
    with pytest.raises(ValueError):
        aug.add_noise(img, -1, 3)


@settings(max_examples=25, deadline=None)
@given(squares, st.integers(0, 2**31))
def test_augment_is_seed_deterministic(img, seed):
    cfg = aug.AugmentConfig(seed=seed)
    a = aug.augment(img, cfg)
    assert a.shape == img.shape and a.dtype == np.uint8
    assert np.array_equal(a, aug.augment(img, cfg))


def test_augment_without_randomness_is_identity():
    img = np.random.default_rng(0).integers(0, 256, (8, 8, 3)).astype(np.uint8)
    # rotation_max tiny -> angle < 1e-9 degrees rounds back to the source pixels
    cfg = aug.AugmentConfig(rotation_max=1e-9, flip_prob=0.0, noise_sigma=0.0, seed=4)
    assert np.array_equal(aug.augment(img, cfg), img)


@pytest.mark.parametrize("bad", [dict(rotation_max=0), dict(flip_prob=1.5), dict(noise_sigma=-1)])
def test_augment_config_validation(bad):
    with pytest.raises(ValueError):
        aug.AugmentConfig(**bad)
