"""Geometric + colour augmentation with keypoint co-transformation, and the
inverse geometric alignment applied to projected features.

Conventions: y points down. A rotation by ``theta`` maps the offset (a, 0)
from the crop centre to (a cos theta, a sin theta), so +pi/2 sends
(0.5 + a, 0.5) to (0.5, 0.5 + a). The forward map on a crop-normalized point
is ``k' = s R(theta) (k - c) + c + t`` with c = (0.5, 0.5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

CENTER = np.array([0.5, 0.5])


@dataclass(frozen=True)
class AugmentRanges:
    rotation: float = math.pi / 2      # symmetric, radians
    scale: tuple[float, float] = (0.8, 1.2)
    translation: float = 0.02          # symmetric, crop units
    gain: tuple[float, float] = (0.8, 1.2)
    offset: float = 0.1                # symmetric

    def __post_init__(self):
        if self.scale[0] <= 0 or self.scale[0] > self.scale[1]:
            raise ValueError("scale range must be positive and ordered")
        if self.gain[0] <= 0 or self.gain[0] > self.gain[1]:
            raise ValueError("gain range must be positive and ordered")
        if min(self.rotation, self.translation, self.offset) < 0:
            raise ValueError("symmetric ranges must be non-negative")


@dataclass(frozen=True)
class AugmentParams:
    """Per-sample augmentation; array fields allow a whole batch at once."""

    rotation: np.ndarray | float = 0.0
    scale: np.ndarray | float = 1.0
    dx: np.ndarray | float = 0.0
    dy: np.ndarray | float = 0.0
    gain: np.ndarray | float = 1.0
    offset: np.ndarray | float = 0.0

    def __post_init__(self):
        if np.any(np.asarray(self.scale) <= 0):
            raise ValueError("scale must be positive")

    def __len__(self) -> int:
        return np.size(self.rotation)

    def __getitem__(self, i) -> "AugmentParams":
        f = lambda v: np.asarray(v)[i] if np.ndim(v) else v  # noqa: E731
        return AugmentParams(*(f(getattr(self, k)) for k in
                               ("rotation", "scale", "dx", "dy", "gain", "offset")))

    @classmethod
    def identity(cls, n: int | None = None) -> "AugmentParams":
        if n is None:
            return cls()
        return cls(np.zeros(n), np.ones(n), np.zeros(n), np.zeros(n), np.ones(n), np.zeros(n))

    @classmethod
    def sample(cls, rng: np.random.Generator, n: int, ranges: AugmentRanges) -> "AugmentParams":
        rot = rng.uniform(-ranges.rotation, ranges.rotation, n)
        scale = rng.uniform(*ranges.scale, n)
        dx = rng.uniform(-ranges.translation, ranges.translation, n)
        dy = rng.uniform(-ranges.translation, ranges.translation, n)
        gain = rng.uniform(*ranges.gain, n)
        offset = rng.uniform(-ranges.offset, ranges.offset, n)
        return cls(rot, scale, dx, dy, gain, offset)


def linear_part(params: AugmentParams) -> np.ndarray:
    """s R(theta) as (..., 2, 2)."""
    th = np.asarray(params.rotation, dtype=np.float64)
    s = np.asarray(params.scale, dtype=np.float64)
    c, sn = np.cos(th) * s, np.sin(th) * s
    return np.stack([np.stack([c, -sn], -1), np.stack([sn, c], -1)], -2)


def affine_matrix(params: AugmentParams) -> np.ndarray:
    """2x3 matrix [A | b] of the forward keypoint map, b = c + t - A c."""
    a = linear_part(params)
    t = np.stack(np.broadcast_arrays(np.asarray(params.dx, float), np.asarray(params.dy, float)), -1)
    b = CENTER + t - a @ CENTER
    return np.concatenate([a, b[..., None]], -1)


def transform_keypoints(keypoints, params: AugmentParams) -> np.ndarray:
    """Apply the forward map to (..., 21, 2) keypoints (or flattened 42-vectors)."""
    kp = np.asarray(keypoints, dtype=np.float64)
    flat = kp.shape[-1] != 2
    pts = kp.reshape(*kp.shape[:-1], -1, 2) if flat else kp
    a = linear_part(params)
    t = np.stack(np.broadcast_arrays(np.asarray(params.dx, float), np.asarray(params.dy, float)), -1)
    out = np.einsum("...ij,...nj->...ni", a, pts - CENTER) + (CENTER + t)[..., None, :]
    return out.reshape(kp.shape)


def warp_images(images, params: AugmentParams) -> np.ndarray:
    """Bilinear inverse-mapped warp of (B, H, W) images, zero outside the source."""
    imgs = np.asarray(images)
    single = imgs.ndim == 2
    if single:
        imgs = imgs[None]
    b, h, w = imgs.shape
    if h != w:
        raise ValueError("augmentation expects square crops")
    a = np.broadcast_to(linear_part(params), (b, 2, 2))
    ainv = np.linalg.inv(a)
    t = np.stack(np.broadcast_arrays(np.asarray(params.dx, float), np.asarray(params.dy, float)), -1)
    t = np.broadcast_to(t, (b, 2)) * w
    c = w / 2.0
    # float32 images get float32 source coordinates (sub-1e-5 pixel error)
    ct = np.float32 if imgs.dtype == np.float32 else np.float64
    ainv = ainv.astype(ct)
    q = np.arange(w, dtype=ct) + ct(0.5 - c)
    rx = q[None, None, :] - t[:, 0, None, None].astype(ct)
    ry = q[None, :, None] - t[:, 1, None, None].astype(ct)
    sx = ainv[:, 0, 0, None, None] * rx + ainv[:, 0, 1, None, None] * ry + ct(c - 0.5)
    sy = ainv[:, 1, 0, None, None] * rx + ainv[:, 1, 1, None, None] * ry + ct(c - 0.5)

    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    # one-pixel zero border: out-of-range taps clip onto it
    hp, wp = h + 2, w + 2
    padded = np.zeros((b, hp, wp), dtype=imgs.dtype)
    padded[:, 1:-1, 1:-1] = imgs
    flat = padded.ravel()
    base = (np.arange(b) * (hp * wp))[:, None, None]
    xs0 = np.clip(x0, -1, w).astype(np.int64) + 1
    xs1 = np.clip(x0 + 1, -1, w).astype(np.int64) + 1
    ys0 = np.clip(y0, -1, h).astype(np.int64) + 1
    ys1 = np.clip(y0 + 1, -1, h).astype(np.int64) + 1
    r0 = base + ys0 * wp
    r1 = base + ys1 * wp
    gx = 1 - fx
    top = np.take(flat, r0 + xs0) * gx + np.take(flat, r0 + xs1) * fx
    bot = np.take(flat, r1 + xs0) * gx + np.take(flat, r1 + xs1) * fx
    out = top * (1 - fy) + bot * fy
    out = out.astype(imgs.dtype, copy=False)
    return out[0] if single else out


def apply_color(images, params: AugmentParams) -> np.ndarray:
    imgs = np.asarray(images)
    gain = np.asarray(params.gain, dtype=np.float64)
    off = np.asarray(params.offset, dtype=np.float64)
    if imgs.ndim == 3:
        gain = np.broadcast_to(gain, (imgs.shape[0],))[:, None, None]
        off = np.broadcast_to(off, (imgs.shape[0],))[:, None, None]
    return np.clip(imgs * gain + off, 0.0, 1.0).astype(imgs.dtype, copy=False)


def apply_augment(image, keypoints, params: AugmentParams):
    """Warp image(s) and keypoints by the same affine map; colour jitter on pixels."""
    out = apply_color(warp_images(image, params), params)
    return out, transform_keypoints(keypoints, params)


def inverse_align(features, params: AugmentParams) -> np.ndarray:
    """Undo rotation and scale on features viewed as P/2 2D points, then mean-centre."""
    z = np.asarray(features, dtype=np.float64)
    if z.shape[-1] % 2:
        raise ValueError(f"feature dimension must be even, got {z.shape[-1]}")
    pts = z.reshape(*z.shape[:-1], -1, 2)
    ainv = np.linalg.inv(linear_part(params))
    out = np.einsum("...ij,...nj->...ni", ainv, pts)
    out = out - out.mean(axis=-2, keepdims=True)
    return out.reshape(z.shape)


def inverse_align_backward(grad, params: AugmentParams) -> np.ndarray:
    """Gradient w.r.t. the input of :func:`inverse_align` (the map is linear)."""
    g = np.asarray(grad, dtype=np.float64)
    pts = g.reshape(*g.shape[:-1], -1, 2)
    pts = pts - pts.mean(axis=-2, keepdims=True)
    ainv = np.linalg.inv(linear_part(params))
    out = np.einsum("...ji,...nj->...ni", ainv, pts)
    return out.reshape(g.shape)
