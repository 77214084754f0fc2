import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.ndimage import map_coordinates

from handmine.pretrain.augment import (
    AugmentParams,
    AugmentRanges,
    affine_matrix,
    apply_augment,
    apply_color,
    inverse_align,
    inverse_align_backward,
    transform_keypoints,
    warp_images,
)

params_strategy = st.builds(
    AugmentParams,
    rotation=st.floats(-math.pi, math.pi),
    scale=st.floats(0.5, 2.0),
    dx=st.floats(-0.2, 0.2),
    dy=st.floats(-0.2, 0.2),
    gain=st.floats(0.5, 1.5),
    offset=st.floats(-0.2, 0.2),
)


def test_identity_leaves_everything_unchanged(rng):
    img = rng.uniform(size=(32, 32)).astype(np.float32)
    kp = rng.uniform(size=(21, 2))
    out_img, out_kp = apply_augment(img, kp, AugmentParams.identity())
    assert np.array_equal(out_img, img)
    assert np.array_equal(out_kp, kp)


def test_quarter_turn_is_y_down():
    for a in (0.1, 0.25, -0.3):
        out = transform_keypoints(np.array([[0.5 + a, 0.5]]), AugmentParams(rotation=math.pi / 2))
        np.testing.assert_allclose(out[0], [0.5, 0.5 + a], rtol=0, atol=1e-9)


def test_keypoints_match_affine_matrix(rng):
    for _ in range(50):
        p = AugmentParams.sample(rng, 1, AugmentRanges(translation=0.1))[0]
        kp = rng.uniform(size=(21, 2))
        m = affine_matrix(p)
        oracle = np.array([[m[0, 0] * x + m[0, 1] * y + m[0, 2],
                            m[1, 0] * x + m[1, 1] * y + m[1, 2]] for x, y in kp])
        np.testing.assert_allclose(transform_keypoints(kp, p), oracle, rtol=0, atol=1e-12)


def test_flattened_keypoints_accepted(rng):
    p = AugmentParams(rotation=0.4, scale=1.1, dx=0.05)
    kp = rng.uniform(size=(21, 2))
    np.testing.assert_array_equal(transform_keypoints(kp.reshape(42), p),
                                  transform_keypoints(kp, p).reshape(42))


def test_warp_matches_scipy_bilinear(rng):
    imgs = rng.uniform(size=(6, 24, 24))
    params = AugmentParams.sample(rng, 6, AugmentRanges(translation=0.1))
    out = warp_images(imgs, params)
    w = 24
    for i in range(6):
        a = affine_matrix(params[i])[:, :2]
        t = np.array([params.dx[i], params.dy[i]]) * w
        ainv = np.linalg.inv(a)
        ys, xs = np.mgrid[0:w, 0:w]
        r = np.stack([xs + 0.5 - w / 2 - t[0], ys + 0.5 - w / 2 - t[1]])
        src = np.einsum("ij,jhw->ihw", ainv, r) + w / 2 - 0.5
        ref = map_coordinates(imgs[i], [src[1], src[0]], order=1, mode="grid-constant", cval=0.0)
        np.testing.assert_allclose(out[i], ref, atol=1e-9)


def test_warped_image_follows_keypoints():
    img = np.zeros((64, 64))
    img[16, 48] = 1.0  # centre at (48.5/64, 16.5/64)
    p = AugmentParams(rotation=0.7, scale=0.9, dx=0.03, dy=-0.02)
    out = warp_images(img, p)
    kp = transform_keypoints(np.array([[48.5 / 64, 16.5 / 64]]), p)[0] * 64
    ys, xs = np.mgrid[0:64, 0:64]
    cx = (out * (xs + 0.5)).sum() / out.sum()
    cy = (out * (ys + 0.5)).sum() / out.sum()
    assert abs(cx - kp[0]) < 0.5 and abs(cy - kp[1]) < 0.5


def test_color_clamped(rng):
    img = rng.uniform(size=(3, 8, 8))
    out = apply_color(img, AugmentParams(gain=np.array([2.0, 0.5, 1.0]), offset=np.array([0.5, -0.5, 0.0])))
    assert out.min() >= 0.0 and out.max() <= 1.0
    np.testing.assert_array_equal(out[2], img[2])


def test_inverse_align_identity_centres(rng):
    z = rng.normal(size=(5, 16))
    out = inverse_align(z, AugmentParams.identity(5))
    pts = z.reshape(5, 8, 2)
    np.testing.assert_allclose(out, (pts - pts.mean(axis=1, keepdims=True)).reshape(5, 16), atol=1e-15)


def test_inverse_align_scale_two_halves():
    z = np.random.default_rng(0).normal(size=(3, 8))
    pts = z.reshape(3, 4, 2)
    centred = (pts - pts.mean(axis=1, keepdims=True)).reshape(3, 8)
    np.testing.assert_allclose(inverse_align(z, AugmentParams(scale=2.0)), centred / 2, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(p=params_strategy, seed=st.integers(0, 10_000))
def test_inverse_align_undoes_geometry(p, seed):
    z = np.random.default_rng(seed).normal(size=32)
    fwd = transform_keypoints(z, p)  # P/2 points through the forward map
    pts = z.reshape(16, 2)
    centred = (pts - pts.mean(axis=0)).reshape(32)
    np.testing.assert_allclose(inverse_align(fwd, p), centred, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(p=params_strategy, seed=st.integers(0, 10_000))
def test_inverse_align_backward_is_adjoint(p, seed):
    rng = np.random.default_rng(seed)
    z, g = rng.normal(size=(2, 12))
    lhs = np.dot(inverse_align(z, p), g)
    rhs = np.dot(z, inverse_align_backward(g, p))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def test_odd_feature_dimension_rejected():
    with pytest.raises(ValueError):
        inverse_align(np.zeros((2, 5)), AugmentParams.identity(2))


def test_sample_within_ranges(rng):
    r = AugmentRanges()
    p = AugmentParams.sample(rng, 2000, r)
    assert np.all(np.abs(p.rotation) <= r.rotation)
    assert np.all((p.scale >= r.scale[0]) & (p.scale <= r.scale[1]))
    assert np.all(np.abs(p.dx) <= r.translation) and np.all(np.abs(p.dy) <= r.translation)
    assert np.all((p.gain >= r.gain[0]) & (p.gain <= r.gain[1]))
    assert np.all(np.abs(p.offset) <= r.offset)


def test_bad_ranges():
    with pytest.raises(ValueError):
        AugmentRanges(scale=(1.2, 0.8))
    with pytest.raises(ValueError):
        AugmentParams(scale=0.0)
