"""Hand keypoint records: parsing, validation, mirroring and left/right balancing.

A record file holds one JSON object per line::

    {"video_id": "v003", "frame_id": 17, "hand": "left",
     "keypoints": [[x, y], ... 21 pairs ...], "detection_score": 0.93}

Coordinates are crop-normalized, x to the right and y downwards, both in [0, 1].
"""

from __future__ import annotations

import io
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

NUM_JOINTS = 21
HANDS = ("left", "right")
FIELDS = ("video_id", "frame_id", "hand", "keypoints", "detection_score")


class RecordError(ValueError):
    """A record line that violates the file format or record invariants."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        self.message = message
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class DuplicateRecordError(RecordError):
    pass


@dataclass(frozen=True)
class KeypointRecord:
    video_id: str
    frame_id: int
    hand: str
    keypoints: tuple[tuple[float, float], ...]
    detection_score: float = 1.0

    def __post_init__(self):
        validate_record(self)

    @property
    def key(self) -> tuple[str, int, str]:
        return (self.video_id, self.frame_id, self.hand)

    def to_array(self) -> np.ndarray:
        """Keypoints as a (21, 2) float64 array."""
        return np.array(self.keypoints, dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "video_id": self.video_id,
            "frame_id": self.frame_id,
            "hand": self.hand,
            "keypoints": [list(p) for p in self.keypoints],
            "detection_score": self.detection_score,
        }

    @classmethod
    def from_array(cls, video_id, frame_id, hand, keypoints, detection_score=1.0):
        kp = np.asarray(keypoints, dtype=np.float64).reshape(-1, 2)
        pts = tuple((float(x), float(y)) for x, y in kp)
        return cls(str(video_id), int(frame_id), hand, pts, float(detection_score))


def validate_record(rec: KeypointRecord) -> None:
    if not isinstance(rec.video_id, str) or not rec.video_id:
        raise RecordError("video_id must be a non-empty string")
    if isinstance(rec.frame_id, bool) or not isinstance(rec.frame_id, int) or rec.frame_id < 0:
        raise RecordError("frame_id must be a non-negative integer")
    if rec.hand not in HANDS:
        raise RecordError(f"hand must be one of {HANDS}, got {rec.hand!r}")
    if len(rec.keypoints) != NUM_JOINTS:
        raise RecordError(f"keypoint count must be {NUM_JOINTS}, got {len(rec.keypoints)}")
    for j, pt in enumerate(rec.keypoints):
        if len(pt) != 2:
            raise RecordError(f"keypoint {j} must be an [x, y] pair")
        for c in pt:
            if not math.isfinite(c) or c < 0.0 or c > 1.0:
                raise RecordError(f"keypoint {j} coordinate {c!r} outside [0, 1]")
    s = rec.detection_score
    if not math.isfinite(s) or s < 0.0 or s > 1.0:
        raise RecordError(f"detection_score {s!r} outside [0, 1]")


@dataclass(frozen=True)
class ParseIssue:
    line: int
    message: str


@dataclass(frozen=True)
class RecordSet:
    """Ordered records plus the per-video grouping derived from them."""

    records: tuple[KeypointRecord, ...] = ()
    errors: tuple[ParseIssue, ...] = field(default=(), compare=False)

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            if rec.key in seen:
                raise DuplicateRecordError(f"duplicate record {rec.key}")
            seen.add(rec.key)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def videos(self) -> dict[str, list[int]]:
        """video_id -> record indices, in first-appearance order."""
        groups: dict[str, list[int]] = {}
        for i, rec in enumerate(self.records):
            groups.setdefault(rec.video_id, []).append(i)
        return groups

    def keypoint_array(self) -> np.ndarray:
        """All keypoints stacked into a (count, 21, 2) array."""
        if not self.records:
            return np.zeros((0, NUM_JOINTS, 2))
        return np.stack([r.to_array() for r in self.records])

    def hand_counts(self) -> dict[str, int]:
        counts = dict.fromkeys(HANDS, 0)
        for rec in self.records:
            counts[rec.hand] += 1
        return counts


def _record_from_obj(obj, line: int) -> KeypointRecord:
    if not isinstance(obj, dict):
        raise RecordError("record must be a JSON object", line)
    keys = set(obj)
    missing = [f for f in FIELDS if f not in keys]
    if missing:
        raise RecordError(f"missing fields {missing}", line)
    extra = sorted(keys - set(FIELDS))
    if extra:
        raise RecordError(f"unknown fields {extra}", line)
    kps = obj["keypoints"]
    if not isinstance(kps, list):
        raise RecordError("keypoints must be an array", line)
    if len(kps) != NUM_JOINTS:
        raise RecordError(f"keypoint count must be {NUM_JOINTS}, got {len(kps)}", line)
    try:
        pts = []
        for p in kps:
            if not isinstance(p, list) or len(p) != 2:
                raise RecordError("each keypoint must be an [x, y] array", line)
            pts.append((float(p[0]), float(p[1])))
        score = obj["detection_score"]
        if isinstance(score, bool) or not isinstance(score, (int, float)):
            raise RecordError("detection_score must be a number", line)
        return KeypointRecord(
            obj["video_id"], obj["frame_id"], obj["hand"], tuple(pts), float(score)
        )
    except RecordError as err:
        if err.line is None:
            raise RecordError(err.message, line) from None
        raise
    except (TypeError, ValueError) as err:
        raise RecordError(str(err), line) from None


def parse_records(
    stream: IO | bytes | str | Iterable,
    strict: bool = False,
    min_score: float | None = None,
) -> RecordSet:
    """Parse a line-delimited record stream.

    Malformed lines raise :class:`RecordError` when ``strict`` is set and are
    otherwise skipped and listed in ``RecordSet.errors``. Duplicate
    ``(video_id, frame_id, hand)`` keys are always fatal. Records whose
    detection score is below ``min_score`` are dropped silently.
    """
    if isinstance(stream, bytes):
        stream = io.StringIO(stream.decode("utf-8"))
    elif isinstance(stream, str):
        stream = io.StringIO(stream)

    records: list[KeypointRecord] = []
    issues: list[ParseIssue] = []
    seen: dict[tuple, int] = {}
    for lineno, raw in enumerate(stream, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        text = raw.strip()
        if not text:
            continue
        try:
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as err:
                raise RecordError(f"invalid JSON: {err.msg}", lineno) from None
            rec = _record_from_obj(obj, lineno)
        except RecordError as err:
            if strict:
                raise
            issues.append(ParseIssue(lineno, err.message))
            continue
        if rec.key in seen:
            raise DuplicateRecordError(
                f"duplicate record {rec.key} (first seen on line {seen[rec.key]})", lineno
            )
        seen[rec.key] = lineno
        if min_score is not None and rec.detection_score < min_score:
            continue
        records.append(rec)

    if issues:
        log.warning("skipped %d malformed record lines", len(issues))
    return RecordSet(tuple(records), tuple(issues))


def serialize_records(rs: RecordSet | Sequence[KeypointRecord], stream: IO[str]) -> None:
    recs = rs.records if isinstance(rs, RecordSet) else rs
    for rec in recs:
        stream.write(json.dumps(rec.to_dict(), separators=(",", ":")))
        stream.write("\n")


def read_records(path, strict: bool = False, min_score: float | None = None) -> RecordSet:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_records(fh, strict=strict, min_score=min_score)


def write_records(rs: RecordSet | Sequence[KeypointRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        serialize_records(rs, fh)


def mirror_keypoints(kp: np.ndarray) -> np.ndarray:
    out = np.array(kp, dtype=np.float64, copy=True)
    out[..., 0] = 1.0 - out[..., 0]
    return out


def mirror_to_right(record: KeypointRecord) -> KeypointRecord:
    """Horizontally flip a left-hand record into right-hand topology (x -> 1 - x)."""
    if record.hand != "left":
        raise RecordError("record is already right")
    pts = tuple((1.0 - x, y) for x, y in record.keypoints)
    return KeypointRecord(record.video_id, record.frame_id, "right", pts, record.detection_score)


def balance_selection(rs: RecordSet, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices kept by :func:`balance_hands` and whether each one gets mirrored.

    The larger hand population is subsampled uniformly (seeded) to the size of
    the smaller one. Kept indices are returned in their original order.
    """
    hands = np.array([r.hand for r in rs.records], dtype=object)
    left = np.flatnonzero(hands == "left")
    right = np.flatnonzero(hands == "right")
    n = min(len(left), len(right))
    if n == 0:
        if len(rs):
            warnings.warn("one hand side is empty; balancing keeps no records", stacklevel=2)
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=bool)
    rng = np.random.default_rng(seed)
    if len(left) > n:
        left = np.sort(rng.choice(left, size=n, replace=False))
    elif len(right) > n:
        right = np.sort(rng.choice(right, size=n, replace=False))
    keep = np.sort(np.concatenate([left, right]))
    return keep, hands[keep] == "left"


def balance_hands(rs: RecordSet, seed: int) -> RecordSet:
    keep, flip = balance_selection(rs, seed)
    out = []
    for i, f in zip(keep, flip):
        rec = rs.records[i]
        out.append(mirror_to_right(rec) if f else rec)
    return RecordSet(tuple(out))
