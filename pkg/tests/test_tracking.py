import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_matching
from semmap.errors import NonPositiveSize
from semmap.scene import Detection
from semmap.tracking import (CONFIRMED, TENTATIVE, NoiseModel, TrackState, Tracker, TrackerParams, associate, iou,
                             kf_initiate, kf_predict, kf_update, max_iou_matching, tracker_step, Track)


def state(x=100.0, y=80.0, w=40.0, h=30.0, vx=0.0, vy=0.0, var=4.0):
    return TrackState(np.array([x, y, w, h, vx, vy, 0.0, 0.0]), np.eye(8) * var)


def test_predict_zero_velocity_keeps_position():
    s = kf_predict(state(), 1, np.ones(8))
    assert np.array_equal(s.mean[:4], [100, 80, 40, 30])


def test_predict_moves_by_velocity():
    s = kf_predict(state(vx=5.0), 1, np.ones(8))
    assert s.mean[0] == 105.0
    assert kf_predict(state(vx=5.0), 3, np.ones(8)).mean[0] == 115.0


def test_predict_inflates_covariance():
    s0 = state()
    s1 = kf_predict(s0, 1, np.full(8, 0.1))
    assert np.trace(s1.covariance) > np.trace(s0.covariance)
    with pytest.raises(ValueError):
        kf_predict(s0, 0)


def test_update_with_vanishing_noise_snaps_to_measurement():
    z = np.array([103.0, 78.0, 42.0, 29.0])
    s = kf_update(state(), z, np.full(4, 1e-12))
    assert np.allclose(s.mean[:4], z, atol=1e-6)


def test_update_with_predicted_measurement_keeps_mean():
    s0 = state(vx=2.0)
    s = kf_update(s0, s0.mean[:4], np.full(4, 4.0))
    assert np.allclose(s.mean, s0.mean, atol=1e-9)


@settings(max_examples=200)
@given(st.lists(st.floats(-20, 20), min_size=4, max_size=4), st.floats(0.01, 100), st.floats(0.01, 100))
def test_update_shrinks_position_variance_and_keeps_psd(dz, prior_var, meas_var):
    s0 = state(var=prior_var)
    z = s0.mean[:4] + np.array(dz)
    s = kf_update(s0, z, np.full(4, meas_var))
    assert np.all(np.diag(s.covariance)[:4] <= np.diag(s0.covariance)[:4] + 1e-12)
    assert np.array_equal(s.covariance, s.covariance.T)
    assert np.linalg.eigvalsh(s.covariance).min() >= -1e-8


def test_update_clamps_non_positive_size():
    s0 = state(w=2.0, h=2.0)
    with pytest.warns(NonPositiveSize):
        s = kf_update(s0, [100, 80, -30, 2], np.full(4, 1e-6))
    assert s.mean[2] == 1.0
    assert s.mean[3] > 0


def test_initiate_uses_size_scaled_uncertainty():
    s = kf_initiate([10, 10, 40, 20])
    assert np.array_equal(s.mean, [10, 10, 40, 20, 0, 0, 0, 0])
    var = np.diag(s.covariance)
    assert var[0] == pytest.approx((2 * 0.05 * 40) ** 2)
    assert var[1] == pytest.approx((2 * 0.05 * 20) ** 2)


def test_iou_examples():
    a = (5.0, 5.0, 2.0, 2.0)
    assert iou(a, a) == 1.0
    assert iou(a, (50.0, 50.0, 2.0, 2.0)) == 0.0
    assert iou(a, (6.0, 5.0, 2.0, 2.0)) == pytest.approx(1 / 3)
    assert iou(a, (7.0, 5.0, 2.0, 2.0)) == 0.0


@given(st.tuples(st.floats(0, 100), st.floats(0, 100), st.floats(1, 50), st.floats(1, 50)),
       st.tuples(st.floats(0, 100), st.floats(0, 100), st.floats(1, 50), st.floats(1, 50)))
def test_iou_is_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert 0.0 <= v <= 1.0 + 1e-12
    assert v == iou(b, a)


def _track(box, label="chair", tid=1):
    return Track(tid, TrackState(np.array([*box, 0, 0, 0, 0], dtype=float), np.eye(8)), label)


def test_associate_matches_overlapping_pair():
    t = [_track((50, 50, 20, 20))]
    d = [Detection((51, 50, 20, 20), "chair")]
    assert iou(t[0].state.bbox, d[0].bbox) >= 0.9
    assert associate(t, d, 0.3) == ([(0, 0)], [], [])


def test_associate_rejects_low_overlap():
    t = [_track((50, 50, 20, 20))]
    d = [Detection((65, 50, 20, 20), "chair")]
    assert iou(t[0].state.bbox, d[0].bbox) < 0.3
    assert associate(t, d, 0.3) == ([], [0], [0])


def test_associate_is_class_gated():
    t = [_track((50, 50, 20, 20), "desk")]
    d = [Detection((50, 50, 20, 20), "chair")]
    assert associate(t, d) == ([], [0], [0])


def _greedy_total(scores):
    s = scores.copy()
    total = 0.0
    while s.size and s.max() > 0:
        r, c = np.unravel_index(np.argmax(s), s.shape)
        total += s[r, c]
        s[r, :] = 0
        s[:, c] = 0
    return total


def test_optimal_beats_greedy_on_crossed_pair():
    scores = np.array([[0.8, 0.6], [0.7, 0.3]])
    valid = scores >= 0.3
    assert _greedy_total(scores) == pytest.approx(1.1)
    pairs = max_iou_matching(scores, valid)
    assert sorted(pairs) == [(0, 1), (1, 0)]
    assert sum(scores[r, c] for r, c in pairs) == pytest.approx(1.3)
    assert brute_force_matching(scores, valid) == pytest.approx(1.3)


boxes = st.tuples(st.integers(0, 60), st.integers(0, 60), st.integers(8, 30), st.integers(8, 30))


@settings(max_examples=300)
@given(st.lists(boxes, max_size=6), st.lists(boxes, max_size=6), st.floats(0.05, 0.6))
def test_associate_is_an_optimal_matching(tboxes, dboxes, iou_min):
    tracks = [_track(b, tid=k) for k, b in enumerate(tboxes)]
    dets = [Detection(b, "chair") for b in dboxes]
    matches, lost, new = associate(tracks, dets, iou_min)
    ti = [i for i, _ in matches]
    di = [j for _, j in matches]
    assert len(set(ti)) == len(ti) and len(set(di)) == len(di)
    assert sorted(ti + lost) == list(range(len(tracks)))
    assert sorted(di + new) == list(range(len(dets)))
    scores = np.array([[iou(t.state.bbox, d.bbox) for d in dets] for t in tracks]).reshape(len(tracks), len(dets))
    valid = scores >= iou_min
    assert all(valid[i, j] for i, j in matches)
    total = sum(scores[i, j] for i, j in matches)
    assert total == pytest.approx(brute_force_matching(scores, valid), abs=1e-9)


def test_first_frame_creates_tentative_track():
    trk = Tracker()
    out = tracker_step(trk, [Detection((100, 100, 30, 30), "chair")], 0)
    assert out == []
    assert len(trk.tracks) == 1
    assert trk.tracks[0].track_id == 1 and trk.tracks[0].status == TENTATIVE


def test_track_confirms_after_n_init_hits():
    trk = Tracker(TrackerParams(n_init=3))
    det = Detection((100, 100, 30, 30), "chair")
    assert trk.step([det], 0) == []
    assert trk.step([det], 1) == []
    out = trk.step([det], 2)
    assert [t.track_id for t in out] == [1]
    assert out[0].status == CONFIRMED and out[0].matched


def test_confirmed_track_is_retired_after_max_age_misses():
    trk = Tracker(TrackerParams(n_init=3, max_age=5))
    det = Detection((100, 100, 30, 30), "chair")
    for f in range(3):
        trk.step([det], f)
    for k in range(4):
        out = trk.step([], 3 + k)
        assert [t.track_id for t in out] == [1]
        assert not out[0].matched
    assert trk.step([], 7) == []
    assert trk.tracks == []
    assert [t.track_id for t in trk.retired] == [1]
    # a new object gets a fresh id
    trk.step([det], 8)
    assert trk.tracks[0].track_id == 2


def test_tentative_track_dies_on_first_miss():
    trk = Tracker()
    trk.step([Detection((100, 100, 30, 30), "chair")], 0)
    trk.step([], 1)
    assert trk.tracks == [] and len(trk.retired) == 1


def test_frames_must_increase():
    trk = Tracker()
    trk.step([], 3)
    with pytest.raises(ValueError):
        trk.step([], 3)


def test_constant_velocity_object_keeps_one_id():
    rng = np.random.default_rng(11)
    trk = Tracker()
    ids = set()
    for f in range(50):
        truth = np.array([100 + 4.0 * f, 200 - 1.5 * f, 60.0, 40.0])
        z = truth + rng.normal(0, 2.0, 4)
        ids.update(t.track_id for t in trk.step([Detection(tuple(z), "desk")], f))
    assert ids == {1}
    assert trk.tracks[0].state.mean[4] == pytest.approx(4.0, abs=0.5)


def test_two_crossing_objects_of_different_class_keep_their_ids():
    trk = Tracker()
    final = {}
    for f in range(30):
        a = Detection((100 + 5 * f, 200, 40, 40), "chair")
        b = Detection((250 - 5 * f, 200, 40, 40), "desk")
        for t in trk.step([a, b], f):
            final.setdefault(t.class_label, set()).add(t.track_id)
    assert final == {"chair": {1}, "desk": {2}}


def test_noise_model_scales_with_size():
    q = NoiseModel().process(np.array([0, 0, 100, 50, 0, 0, 0, 0], dtype=float))
    assert q[0, 0] == pytest.approx(25.0) and q[1, 1] == pytest.approx(6.25)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert NoiseModel().measurement()[0, 0] == 4.0
