"""3D pose metrics (MPJPE, PCK-AUC) and mining-quality statistics."""

from __future__ import annotations

import numpy as np

from .records import RecordSet

PCK_RANGE_MM = (20.0, 50.0)
PCK_STEPS = 31


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    if pred.ndim != 3 or pred.shape[-1] != 3:
        raise ValueError("poses must have shape (count, joints, 3)")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(gt))):
        raise ValueError("non-finite joint coordinates")
    return pred, gt


def joint_errors(pred, gt, root_relative: bool = False) -> np.ndarray:
    """Per-joint Euclidean errors, shape (count, joints)."""
    pred, gt = _check_pair(pred, gt)
    if root_relative:
        pred = pred - pred[:, :1]
        gt = gt - gt[:, :1]
    return np.linalg.norm(pred - gt, axis=-1)


def mpjpe(pred, gt, root_relative: bool = False) -> float:
    """Mean per-joint position error, in the input units (mm)."""
    err = joint_errors(pred, gt, root_relative)
    if err.size == 0:
        raise ValueError("empty pose set")
    return float(err.mean())


def pck_curve(pred, gt, thresholds=None, root_relative: bool = False):
    if thresholds is None:
        thresholds = np.linspace(*PCK_RANGE_MM, PCK_STEPS)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if thresholds.size < 2:
        raise ValueError("need at least two thresholds")
    if np.any(np.diff(thresholds) <= 0):
        raise ValueError("thresholds must be strictly ascending")
    err = joint_errors(pred, gt, root_relative).ravel()
    if err.size == 0:
        raise ValueError("empty pose set")
    pck = (err[None, :] <= thresholds[:, None]).mean(axis=1)
    return thresholds, pck


def pck_auc(pred, gt, low: float = PCK_RANGE_MM[0], high: float = PCK_RANGE_MM[1],
            steps: int = PCK_STEPS, root_relative: bool = False) -> float:
    """Trapezoidal area under the PCK curve on ``steps`` uniform thresholds,
    normalized by the threshold span so a perfect prediction scores 1."""
    if not high > low:
        raise ValueError("empty threshold range")
    th, pck = pck_curve(pred, gt, np.linspace(low, high, steps), root_relative)
    area = float(np.sum((pck[1:] + pck[:-1]) * np.diff(th)) / 2.0)
    return area / (high - low)


def mining_quality(records: RecordSet | np.ndarray, query, positive, seed: int = 0) -> dict:
    """Mean raw-keypoint distance of mined pairs against random cross-video pairs.

    ``records`` may be a RecordSet or a precomputed (n, 42) keypoint array plus
    per-row video labels via ``records.videos``. The baseline draws one random
    cross-video partner per mined pair.
    """
    x, videos = _keypoints_and_videos(records)
    query = np.asarray(query, dtype=np.int64)
    positive = np.asarray(positive, dtype=np.int64)
    mined = np.linalg.norm(x[query] - x[positive], axis=1)

    rng = np.random.default_rng(seed)
    n = len(x)
    partner = rng.integers(0, n, size=len(query))
    clash = videos[partner] == videos[query]
    while clash.any():
        partner[clash] = rng.integers(0, n, size=int(clash.sum()))
        clash = videos[partner] == videos[query]
    baseline = np.linalg.norm(x[query] - x[partner], axis=1)
    mined_mean = float(mined.mean()) if len(mined) else 0.0
    base_mean = float(baseline.mean()) if len(baseline) else 0.0
    return {
        "pairs": int(len(query)),
        "mined_mean": mined_mean,
        "random_mean": base_mean,
        "ratio": mined_mean / base_mean if base_mean > 0 else float("nan"),
    }


def _keypoints_and_videos(records):
    if isinstance(records, RecordSet):
        x = records.keypoint_array().reshape(len(records), -1)
        labels = {v: i for i, v in enumerate(records.videos)}
        videos = np.array([labels[r.video_id] for r in records.records])
        return x, videos
    x, videos = records
    return np.asarray(x, dtype=np.float64), np.asarray(videos)


def rank_distance_profile(keypoints, ranked_rows, ranks) -> dict[int, float]:
    """Mean raw-keypoint distance between each query and its neighbour at each rank.

    ``ranked_rows[q]`` lists query q's cross-video neighbours in rank order.
    """
    x = np.asarray(keypoints, dtype=np.float64)
    out = {}
    for k in ranks:
        q = np.array([i for i, r in enumerate(ranked_rows) if len(r) >= k])
        p = np.array([ranked_rows[i][k - 1] for i in q])
        out[int(k)] = float(np.linalg.norm(x[q] - x[p], axis=1).mean())
    return out
