import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from handmine import synth
from handmine.metrics import mining_quality, mpjpe, pck_auc, pck_curve, rank_distance_profile
from oracles import loop_mpjpe, loop_pck_auc


def test_mpjpe_identity_and_offset(rng):
    gt = rng.normal(size=(10, 21, 3)) * 50
    assert mpjpe(gt, gt) == 0.0
    assert mpjpe(gt + np.array([5.0, 0, 0]), gt) == pytest.approx(5.0, abs=1e-12)


def test_mpjpe_matches_loop_oracle(rng):
    pred, gt = rng.normal(size=(2, 100, 21, 3)) * 30
    assert mpjpe(pred, gt) == pytest.approx(loop_mpjpe(pred, gt), abs=1e-9)
    assert mpjpe(pred, gt, root_relative=True) == pytest.approx(
        loop_mpjpe(pred, gt, root_relative=True), abs=1e-9)


def test_root_relative_ignores_global_shift(rng):
    gt = rng.normal(size=(4, 21, 3))
    assert mpjpe(gt + 100.0, gt, root_relative=True) == pytest.approx(0.0, abs=1e-12)


def test_pck_auc_bounds():
    gt = np.zeros((3, 21, 3))
    assert pck_auc(gt, gt) == 1.0
    far = gt + np.array([100.0, 0, 0])
    assert pck_auc(far, gt) == 0.0


def test_pck_auc_matches_loop_oracle(rng):
    gt = rng.normal(size=(100, 21, 3)) * 20
    pred = gt + rng.normal(size=gt.shape) * 20
    assert pck_auc(pred, gt) == pytest.approx(loop_pck_auc(pred, gt), abs=1e-9)


def test_pck_curve_is_a_cdf(rng):
    gt = rng.normal(size=(20, 21, 3))
    pred = gt + rng.normal(size=gt.shape) * 30
    th, pck = pck_curve(pred, gt)
    assert th[0] == 20.0 and th[-1] == 50.0
    assert np.all(np.diff(pck) >= 0)


@settings(max_examples=40, deadline=None)
@given(high=st.integers(21, 80), extra=st.integers(1, 20), seed=st.integers(0, 1000))
def test_pck_area_grows_with_upper_threshold(high, extra, seed):
    rng = np.random.default_rng(seed)
    gt = rng.normal(size=(5, 21, 3))
    pred = gt + rng.normal(size=gt.shape) * 40

    def numerator(h):
        # 1 mm spacing, so the larger grid extends the smaller one
        return pck_auc(pred, gt, high=h, steps=h - 20 + 1) * (h - 20)

    assert numerator(high + extra) >= numerator(high)


def test_shape_mismatch_rejected(rng):
    with pytest.raises(ValueError):
        mpjpe(np.zeros((2, 21, 3)), np.zeros((3, 21, 3)))
    with pytest.raises(ValueError):
        pck_auc(np.zeros((2, 21, 3)), np.zeros((2, 21, 3)), low=50, high=20)


def test_duplicate_pairs_give_zero_ratio(rng):
    x = rng.uniform(size=(10, 42))
    x = np.concatenate([x, x])
    videos = np.array([0] * 10 + [1] * 10)
    q = np.arange(10)
    rep = mining_quality((x, videos), q, q + 10)
    assert rep["mined_mean"] == 0.0 and rep["ratio"] == 0.0


def test_random_pairs_ratio_near_one():
    rng = np.random.default_rng(0)
    corpus = synth.generate_corpus(50, 200, seed=0)
    n = len(corpus.records)
    labels = {v: i for i, v in enumerate(corpus.records.videos)}
    videos = np.array([labels[r.video_id] for r in corpus.records.records])
    q = np.arange(n)
    partner = rng.integers(0, n, n)
    clash = videos[partner] == videos[q]
    while clash.any():
        partner[clash] = rng.integers(0, n, clash.sum())
        clash = videos[partner] == videos[q]
    rep = mining_quality(corpus.records, q, partner, seed=1)
    assert abs(rep["ratio"] - 1.0) < 0.1


def test_rank_profile():
    x = np.arange(5, dtype=float)[:, None] * np.ones(42)
    ranked = [[1, 2, 3], [0, 2, 3], [1, 3, 0], [2, 4, 1], [3, 2]]
    prof = rank_distance_profile(x, ranked, [1, 3])
    norm = np.sqrt(42)
    assert prof[1] == pytest.approx(norm)
    # rank 3 only over queries that have three neighbours
    assert prof[3] == pytest.approx(np.mean([3, 2, 2, 2]) * norm)
