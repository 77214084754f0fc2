import io
import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_records, random_record
from handmine.records import (
    DuplicateRecordError,
    KeypointRecord,
    RecordError,
    RecordSet,
    balance_hands,
    mirror_keypoints,
    mirror_to_right,
    parse_records,
    serialize_records,
)


def _line(video="v0", frame=0, hand="right", n=21, score=0.9, x=0.3):
    return json.dumps({
        "video_id": video,
        "frame_id": frame,
        "hand": hand,
        "keypoints": [[x, 0.5]] * n,
        "detection_score": score,
    })


def test_empty_stream():
    rs = parse_records("")
    assert len(rs) == 0
    assert rs.videos == {}


def test_counts_records_and_videos():
    text = "\n".join([_line("a", 0), _line("a", 1), _line("b", 0)])
    rs = parse_records(text)
    assert len(rs) == 3
    assert list(rs.videos) == ["a", "b"]


def test_keypoint_count_error_strict():
    with pytest.raises(RecordError, match="keypoint count") as err:
        parse_records(_line(n=20), strict=True)
    assert err.value.line == 1


def test_malformed_lines_skipped_with_line_numbers():
    text = "\n".join([_line(frame=0), "{not json", _line(frame=1, n=20), _line(frame=2)])
    rs = parse_records(text)
    assert len(rs) == 2
    assert [e.line for e in rs.errors] == [2, 3]
    assert "keypoint count" in rs.errors[1].message


@pytest.mark.parametrize("obj", [
    {"video_id": "a", "frame_id": 0, "hand": "right", "keypoints": [[0.1, 0.1]] * 21},
    {"video_id": "a", "frame_id": 0, "hand": "middle", "keypoints": [[0.1, 0.1]] * 21,
     "detection_score": 1.0},
    {"video_id": "a", "frame_id": -1, "hand": "right", "keypoints": [[0.1, 0.1]] * 21,
     "detection_score": 1.0},
    {"video_id": "a", "frame_id": 0, "hand": "right", "keypoints": [[1.5, 0.1]] * 21,
     "detection_score": 1.0},
    {"video_id": "a", "frame_id": 0, "hand": "right", "keypoints": [[0.1, 0.1]] * 21,
     "detection_score": 1.0, "extra": 1},
])
def test_invalid_records_rejected(obj):
    with pytest.raises(RecordError):
        parse_records(json.dumps(obj), strict=True)


def test_duplicate_key_is_fatal():
    with pytest.raises(DuplicateRecordError):
        parse_records("\n".join([_line(frame=3), _line(frame=3)]))


def test_min_score_filter():
    text = "\n".join([_line(frame=0, score=0.2), _line(frame=1, score=0.8)])
    rs = parse_records(text, min_score=0.5)
    assert [r.frame_id for r in rs.records] == [1]


def test_serialize_round_trip(rng):
    rs = make_records(rng, ["right", "left"] * 5)
    buf = io.StringIO()
    serialize_records(rs, buf)
    assert parse_records(buf.getvalue()) == rs


def test_mirror_examples():
    kp = np.full((21, 2), 0.5)
    kp[0] = (0.25, 0.40)
    kp[1] = (0.5, 0.9)
    rec = KeypointRecord.from_array("v", 0, "left", kp)
    out = mirror_to_right(rec)
    assert out.hand == "right"
    assert out.keypoints[0] == (0.75, 0.40)
    assert out.keypoints[1] == (0.5, 0.9)


def test_mirror_right_record_rejected(rng):
    with pytest.raises(RecordError, match="already right"):
        mirror_to_right(random_record(rng, hand="right"))


def test_mirror_is_involution(rng):
    for i in range(100):
        rec = random_record(rng, frame=i, hand="left")
        twice = mirror_keypoints(mirror_keypoints(rec.to_array()))
        np.testing.assert_allclose(twice, rec.to_array(), rtol=0, atol=1e-15)


def test_balance_already_balanced(rng):
    rs = make_records(rng, ["left"] * 10 + ["right"] * 10)
    out = balance_hands(rs, seed=0)
    assert len(out) == 20
    assert all(r.hand == "right" for r in out.records)


def test_balance_subsamples_majority(rng):
    rs = make_records(rng, ["left"] * 100 + ["right"] * 40)
    out = balance_hands(rs, seed=7)
    assert len(out) == 80
    assert all(r.hand == "right" for r in out.records)


def test_balance_deterministic(rng):
    rs = make_records(rng, ["left"] * 100 + ["right"] * 40)
    a, b = io.StringIO(), io.StringIO()
    serialize_records(balance_hands(rs, 7), a)
    serialize_records(balance_hands(rs, 7), b)
    assert a.getvalue() == b.getvalue()


def test_balance_one_side_empty_warns(rng):
    rs = make_records(rng, ["right"] * 5)
    with pytest.warns(UserWarning):
        assert len(balance_hands(rs, 0)) == 0


def test_collision_after_mirroring_rejected():
    kp = np.full((21, 2), 0.5)
    rs = RecordSet((
        KeypointRecord.from_array("v", 0, "left", kp),
        KeypointRecord.from_array("v", 0, "right", kp),
    ))
    with pytest.raises(DuplicateRecordError):
        balance_hands(rs, 0)


@settings(max_examples=50, deadline=None)
@given(n_left=st.integers(0, 30), n_right=st.integers(0, 30), seed=st.integers(0, 2**32 - 1))
def test_balance_properties(n_left, n_right, seed):
    rng = np.random.default_rng(seed)
    rs = make_records(rng, ["left"] * n_left + ["right"] * n_right)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out = balance_hands(rs, seed)
    assert len(out) == 2 * min(n_left, n_right)
    assert all(r.hand == "right" for r in out.records)
    # every output record traces back to an input record, mirrored iff it was left
    src = {(r.video_id, r.frame_id): r for r in rs.records}
    for r in out.records:
        orig = src[(r.video_id, r.frame_id)]
        expect = mirror_keypoints(orig.to_array()) if orig.hand == "left" else orig.to_array()
        np.testing.assert_array_equal(r.to_array(), expect)

