"""Synthetic multi-video hand corpus: a 2.5D kinematic hand, random-walk videos,
and an anti-aliased skeleton renderer.

Image coordinates follow the record convention: x to the right, y downwards,
crop-normalized to [0, 1]; pixel (row i, col j) has its centre at
((j + 0.5) / W, (i + 0.5) / H).
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .records import NUM_JOINTS, KeypointRecord, RecordSet, mirror_keypoints

FINGERS = ("thumb", "index", "middle", "ring", "pinky")
# resting direction of each finger, radians from "up" (towards +x is positive)
BASE_ANGLES = np.array([-0.95, -0.28, 0.0, 0.24, 0.48])
PALM_LENGTHS = np.array([0.06, 0.12, 0.12, 0.11, 0.10])
PHALANX_LENGTHS = np.array([
    [0.060, 0.050, 0.040],
    [0.070, 0.050, 0.040],
    [0.080, 0.055, 0.045],
    [0.070, 0.050, 0.040],
    [0.055, 0.040, 0.035],
])
# wrist -> first joint of each finger, then along the finger
BONES = tuple(
    [(0, 1 + 4 * f) for f in range(5)]
    + [(1 + 4 * f + s, 2 + 4 * f + s) for f in range(5) for s in range(3)]
)
HAND_SPAN_MM = 200.0  # crop width in millimetres for the 3D export

IMAGE_MAGIC = b"SIMG"
IMAGE_VERSION = 1


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class ArticulationBounds:
    flexion: tuple[float, float] = (0.0, 1.0)
    spread: tuple[float, float] = (-0.3, 0.3)
    rotation: tuple[float, float] = (-math.pi / 2, math.pi / 2)
    wrist: tuple[float, float] = (0.35, 0.65)


@dataclass(frozen=True)
class SynthPoseParams:
    flexion: tuple[float, float, float, float, float] = (0.0,) * 5
    spread: float = 0.0
    rotation: float = 0.0
    wrist: tuple[float, float] = (0.5, 0.5)

    def as_vector(self) -> np.ndarray:
        return np.array([*self.flexion, self.spread, self.rotation, *self.wrist])

    @classmethod
    def from_vector(cls, v) -> "SynthPoseParams":
        v = [float(a) for a in v]
        return cls(tuple(v[:5]), v[5], v[6], (v[7], v[8]))


def _bounds_arrays(b: ArticulationBounds) -> tuple[np.ndarray, np.ndarray]:
    lo = np.array([b.flexion[0]] * 5 + [b.spread[0], b.rotation[0], b.wrist[0], b.wrist[0]])
    hi = np.array([b.flexion[1]] * 5 + [b.spread[1], b.rotation[1], b.wrist[1], b.wrist[1]])
    return lo, hi


def check_params(params: SynthPoseParams, bounds: ArticulationBounds) -> None:
    lo, hi = _bounds_arrays(bounds)
    v = params.as_vector()
    bad = np.flatnonzero((v < lo - 1e-12) | (v > hi + 1e-12) | ~np.isfinite(v))
    if bad.size:
        names = [f"flexion[{i}]" for i in range(5)] + ["spread", "rotation", "wrist_x", "wrist_y"]
        raise SynthError(f"pose parameters out of bounds: {[names[i] for i in bad]}")


def forward_kinematics(params: SynthPoseParams) -> tuple[np.ndarray, np.ndarray]:
    """Keypoints (21, 2) and per-joint depth (21,) for one pose.

    Fingers 1-4 curl into the depth axis: a phalanx at cumulative bend phi
    contributes length*cos(phi) in the image plane and length*sin(phi) in
    depth. The thumb bends within the image plane towards the palm.
    """
    offsets = np.zeros((NUM_JOINTS, 2))
    depth = np.zeros(NUM_JOINTS)
    angles = BASE_ANGLES * (1.0 + params.spread)
    for f in range(5):
        theta = params.flexion[f]
        a = angles[f]
        base = 1 + 4 * f
        pos = PALM_LENGTHS[f] * np.array([math.sin(a), -math.cos(a)])
        z = 0.0
        offsets[base] = pos
        for s in range(3):
            phi = (s + 1) * theta
            length = PHALANX_LENGTHS[f, s]
            if f == 0:
                d = a + phi
                step = length * np.array([math.sin(d), -math.cos(d)])
            else:
                step = length * math.cos(phi) * np.array([math.sin(a), -math.cos(a)])
                z += length * math.sin(phi)
            pos = pos + step
            offsets[base + s + 1] = pos
            depth[base + s + 1] = z
    c, s = math.cos(params.rotation), math.sin(params.rotation)
    rot = np.array([[c, -s], [s, c]])
    kp = offsets @ rot.T + np.asarray(params.wrist)
    return kp, depth


def generate_pose(params: SynthPoseParams, bounds: ArticulationBounds | None = None) -> np.ndarray:
    check_params(params, bounds or ArticulationBounds())
    return forward_kinematics(params)[0]


def _segment_distance(px, py, ax, ay, bx, by):
    dx, dy = bx - ax, by - ay
    len2 = dx * dx + dy * dy
    t = np.where(len2 > 0, ((px - ax) * dx + (py - ay) * dy) / np.where(len2 > 0, len2, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    ex = px - (ax + t * dx)
    ey = py - (ay + t * dy)
    return np.sqrt(ex * ex + ey * ey)


def render(keypoints, size: int = 64, stroke: float = 1.5, intensity: float = 1.0) -> np.ndarray:
    """Draw the bones as anti-aliased strokes on a black ``size`` x ``size`` canvas.

    A pixel's value is ``intensity * clip(stroke - d, 0, 1)`` where ``d`` is the
    pixel-centre distance (in pixels) to the nearest bone, so nothing is drawn
    outside the keypoint bounding box dilated by ``stroke``.
    """
    kp = np.asarray(keypoints, dtype=np.float64).reshape(NUM_JOINTS, 2) * size
    img = np.zeros((size, size), dtype=np.float64)
    x0 = max(int(math.floor(kp[:, 0].min() - stroke)), 0)
    x1 = min(int(math.ceil(kp[:, 0].max() + stroke)), size)
    y0 = max(int(math.floor(kp[:, 1].min() - stroke)), 0)
    y1 = min(int(math.ceil(kp[:, 1].max() + stroke)), size)
    if x0 >= x1 or y0 >= y1:
        return img
    ys, xs = np.mgrid[y0:y1, x0:x1]
    px = (xs + 0.5)[None]
    py = (ys + 0.5)[None]
    a = kp[[b[0] for b in BONES]]
    b = kp[[b[1] for b in BONES]]
    d = _segment_distance(
        px, py,
        a[:, 0, None, None], a[:, 1, None, None],
        b[:, 0, None, None], b[:, 1, None, None],
    ).min(axis=0)
    img[y0:y1, x0:x1] = np.clip(stroke - d, 0.0, 1.0) * intensity
    return img


@dataclass
class SynthCorpus:
    records: RecordSet
    images: np.ndarray       # (count, H, W) float32
    joints3d: np.ndarray     # (count, 21, 3) millimetres, in the stored hand's frame
    params: np.ndarray       # (count, 9) pose parameters (right-hand frame)


@dataclass(frozen=True)
class CorpusConfig:
    n_videos: int = 50
    frames_per_video: int = 200
    coherence: float = 0.9
    seed: int = 0
    size: int = 64
    stroke: float = 1.5
    noise_sigma: float = 0.0
    step_fraction: float = 0.25
    bounds: ArticulationBounds = field(default_factory=ArticulationBounds)


def _reflect(v, lo, hi):
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    u = np.mod(v - lo, 2 * safe)
    u = np.where(u > safe, 2 * safe - u, u)
    return np.where(span > 0, lo + u, lo)


def _video_walk(cfg: CorpusConfig, rng: np.random.Generator) -> np.ndarray:
    lo, hi = _bounds_arrays(cfg.bounds)
    step = (1.0 - cfg.coherence) * cfg.step_fraction * (hi - lo)
    p = rng.uniform(lo, hi)
    out = np.empty((cfg.frames_per_video, lo.size))
    for t in range(cfg.frames_per_video):
        out[t] = p
        p = _reflect(p + step * rng.standard_normal(lo.size), lo, hi)
    return out


def _make_video(cfg: CorpusConfig, v: int, seq: np.random.SeedSequence):
    rng = np.random.default_rng(seq)
    walk = _video_walk(cfg, rng)
    hand = "left" if v % 2 else "right"
    gain = rng.uniform(0.7, 1.0)
    score = rng.uniform(0.5, 1.0, size=len(walk))
    recs, imgs, j3d = [], [], []
    vid = f"vid{v:04d}"
    for t, pv in enumerate(walk):
        kp, depth = forward_kinematics(SynthPoseParams.from_vector(pv))
        img = render(kp, cfg.size, cfg.stroke, gain)
        stored = kp
        if cfg.noise_sigma > 0:
            stored = np.clip(kp + rng.normal(0.0, cfg.noise_sigma, kp.shape), 0.0, 1.0)
        if hand == "left":
            stored = mirror_keypoints(stored)
            img = img[:, ::-1]
            kp = mirror_keypoints(kp)
        recs.append(KeypointRecord.from_array(vid, t, hand, stored, round(float(score[t]), 6)))
        imgs.append(img.astype(np.float32))
        j3d.append(np.column_stack([kp, depth]) * HAND_SPAN_MM)
    return recs, imgs, j3d, walk


def generate_corpus(
    n_videos: int = 50,
    frames_per_video: int = 200,
    coherence: float = 0.9,
    seed: int = 0,
    threads: int = 1,
    **kwargs,
) -> SynthCorpus:
    """Random-walk videos of a synthetic hand, rendered frame by frame.

    Every video gets its own seeded stream (spawned from ``seed``) so the
    result does not depend on ``threads``. Odd-numbered videos are stored as
    left hands (mirrored keypoints and images).
    """
    if n_videos < 2:
        raise SynthError("need at least two videos")
    if not 0.0 <= coherence <= 1.0:
        raise SynthError("coherence must be in [0, 1]")
    cfg = CorpusConfig(n_videos, frames_per_video, coherence, seed, **kwargs)
    seqs = np.random.SeedSequence(seed).spawn(n_videos)
    jobs = list(range(n_videos))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda v: _make_video(cfg, v, seqs[v]), jobs))
    else:
        parts = [_make_video(cfg, v, seqs[v]) for v in jobs]
    records = [r for p in parts for r in p[0]]
    images = np.stack([im for p in parts for im in p[1]])
    joints = np.stack([j for p in parts for j in p[2]])
    params = np.concatenate([p[3] for p in parts])
    return SynthCorpus(RecordSet(tuple(records)), images, joints, params)


_IMG_HEADER = struct.Struct("<4sIIIQ")


def save_images(images: np.ndarray, path) -> None:
    images = np.asarray(images, dtype="<f4")
    count, h, w = images.shape
    with open(path, "wb") as fh:
        fh.write(_IMG_HEADER.pack(IMAGE_MAGIC, IMAGE_VERSION, h, w, count))
        fh.write(np.ascontiguousarray(images).tobytes())


def load_images(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != IMAGE_MAGIC:
        raise SynthError("bad magic")
    if len(data) < _IMG_HEADER.size:
        raise SynthError("truncated header")
    _, version, h, w, count = _IMG_HEADER.unpack_from(data, 0)
    if version != IMAGE_VERSION:
        raise SynthError(f"unsupported image archive version {version}")
    need = _IMG_HEADER.size + count * h * w * 4
    if len(data) != need:
        raise SynthError(f"image archive size {len(data)} != expected {need}")
    arr = np.frombuffer(data, dtype="<f4", offset=_IMG_HEADER.size).reshape(count, h, w)
    return arr.astype(np.float32)


def canonical_params() -> SynthPoseParams:
    return SynthPoseParams()


def with_rotation(params: SynthPoseParams, angle: float) -> SynthPoseParams:
    return replace(params, rotation=angle)
