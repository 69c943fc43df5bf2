"""Constant-velocity Kalman tracking of bounding boxes with IoU assignment.

State is ``(x, y, w, h, vx, vy, vw, vh)`` with velocities in pixels/frame;
measurements are ``(x, y, w, h)``.  Association is class-gated and solves the
maximum-total-IoU assignment exactly.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import NonPositiveSize

TENTATIVE = "tentative"
CONFIRMED = "confirmed"
DELETED = "deleted"

MIN_SIZE = 1.0

_H = np.hstack([np.eye(4), np.zeros((4, 4))])


@dataclass(frozen=True)
class TrackState:
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def bbox(self) -> tuple:
        return tuple(float(v) for v in self.mean[:4])


@dataclass(frozen=True)
class NoiseModel:
    """SORT-style noise: standard deviations proportional to the box size."""

    std_position: float = 1.0 / 20
    std_velocity: float = 1.0 / 160
    std_measurement_px: float = 2.0

    def process(self, mean: np.ndarray) -> np.ndarray:
        size = np.array([mean[2], mean[3], mean[2], mean[3]])
        std = np.concatenate([self.std_position * size, self.std_velocity * size])
        return np.diag(np.square(std))

    def measurement(self) -> np.ndarray:
        return np.eye(4) * self.std_measurement_px ** 2


def kf_initiate(z, noise: NoiseModel = NoiseModel()) -> TrackState:
    z = np.asarray(z, dtype=float)
    mean = np.concatenate([z, np.zeros(4)])
    size = np.array([z[2], z[3], z[2], z[3]])
    std = np.concatenate([2 * noise.std_position * size, 10 * noise.std_velocity * size])
    return TrackState(mean, np.diag(np.square(std)))


def kf_predict(state: TrackState, dt_frames: int = 1, process_noise=None) -> TrackState:
    """Advance the constant-velocity model by ``dt_frames`` frames.

    ``process_noise`` is an 8x8 matrix, an 8-vector of variances, or None for
    the size-scaled default; it is added once per elapsed frame.
    """
    if dt_frames < 1:
        raise ValueError("dt_frames must be >= 1")
    F = np.eye(8)
    F[:4, 4:] = np.eye(4) * dt_frames
    if process_noise is None:
        Q = NoiseModel().process(state.mean)
    else:
        Q = np.asarray(process_noise, dtype=float)
        Q = np.diag(Q) if Q.ndim == 1 else Q
    mean = F @ state.mean
    cov = F @ state.covariance @ F.T + Q * dt_frames
    return TrackState(mean, (cov + cov.T) / 2)


def kf_update(state: TrackState, z, measurement_noise=None) -> TrackState:
    """Kalman correction with a box measurement.

    Non-positive posterior sizes are clamped to one pixel with a
    ``NonPositiveSize`` warning.
    """
    z = np.asarray(z, dtype=float)
    if measurement_noise is None:
        R = NoiseModel().measurement()
    else:
        R = np.asarray(measurement_noise, dtype=float)
        R = np.diag(R) if R.ndim == 1 else R
    P = state.covariance
    S = _H @ P @ _H.T + R
    K = np.linalg.solve(S, _H @ P).T
    mean = state.mean + K @ (z - _H @ state.mean)
    # Joseph form keeps P symmetric PSD under round-off
    IKH = np.eye(8) - K @ _H
    cov = IKH @ P @ IKH.T + K @ R @ K.T
    cov = (cov + cov.T) / 2
    if mean[2] <= 0 or mean[3] <= 0:
        warnings.warn(f"box size ({mean[2]:.3g}, {mean[3]:.3g}) clamped to {MIN_SIZE} px", NonPositiveSize)
        mean[2] = max(mean[2], MIN_SIZE)
        mean[3] = max(mean[3], MIN_SIZE)
    return TrackState(mean, cov)


def iou(a, b) -> float:
    """Intersection over union of two ``(cx, cy, w, h)`` boxes."""
    ax0, ay0, ax1, ay1 = a[0] - a[2] / 2, a[1] - a[3] / 2, a[0] + a[2] / 2, a[1] + a[3] / 2
    bx0, by0, bx1, by1 = b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def max_iou_matching(scores: np.ndarray, valid: np.ndarray) -> list[tuple[int, int]]:
    """Pairs (row, col) maximising the summed score over valid entries."""
    if scores.size == 0:
        return []
    weights = np.where(valid, scores, 0.0)
    rows, cols = linear_sum_assignment(weights, maximize=True)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if valid[r, c]]


def associate(tracks, detections, iou_min: float = 0.3):
    """Match tracks to detections of the same class with IoU >= ``iou_min``.

    Returns ``(matches, unmatched_track_indices, unmatched_detection_indices)``
    where ``matches`` holds ``(track_index, detection_index)`` pairs.
    """
    if not 0 < iou_min < 1:
        raise ValueError("iou_min must lie in (0, 1)")
    n, m = len(tracks), len(detections)
    scores = np.zeros((n, m))
    valid = np.zeros((n, m), dtype=bool)
    for i, trk in enumerate(tracks):
        for j, det in enumerate(detections):
            if trk.class_label != det.class_label:
                continue
            scores[i, j] = iou(trk.state.bbox, det.bbox)
            valid[i, j] = scores[i, j] >= iou_min
    matches = max_iou_matching(scores, valid)
    mt = {i for i, _ in matches}
    md = {j for _, j in matches}
    return matches, [i for i in range(n) if i not in mt], [j for j in range(m) if j not in md]


@dataclass
class Track:
    track_id: int
    state: TrackState
    class_label: str
    status: str = TENTATIVE
    hits: int = 1
    misses: int = 0
    last_detection: object = None

    @property
    def matched(self) -> bool:
        """True when the most recent step updated this track with a detection."""
        return self.misses == 0 and self.last_detection is not None


@dataclass
class TrackerParams:
    n_init: int = 3
    max_age: int = 5
    iou_min: float = 0.3
    noise: NoiseModel = field(default_factory=NoiseModel)


class Tracker:
    """Multi-object tracker; one instance per run, stepped once per frame."""

    def __init__(self, params: TrackerParams | None = None):
        self.params = params or TrackerParams()
        self.tracks: list[Track] = []
        self.retired: list[Track] = []
        self._next_id = 1
        self._last_frame = None

    def step(self, detections, frame: int) -> list[Track]:
        if self._last_frame is not None and frame <= self._last_frame:
            raise ValueError(f"frame {frame} does not follow {self._last_frame}")
        dt = 1 if self._last_frame is None else frame - self._last_frame
        self._last_frame = frame
        p = self.params

        for trk in self.tracks:
            trk.state = kf_predict(trk.state, dt, p.noise.process(trk.state.mean))

        matches, lost, new = associate(self.tracks, detections, p.iou_min)
        for ti, di in matches:
            trk, det = self.tracks[ti], detections[di]
            trk.state = kf_update(trk.state, det.bbox, p.noise.measurement())
            trk.hits += 1
            trk.misses = 0
            trk.last_detection = det
            if trk.status == TENTATIVE and trk.hits >= p.n_init:
                trk.status = CONFIRMED
        for ti in lost:
            trk = self.tracks[ti]
            trk.misses += 1
            trk.last_detection = None
            if trk.status == TENTATIVE or trk.misses >= p.max_age:
                trk.status = DELETED
        for di in new:
            det = detections[di]
            trk = Track(self._next_id, kf_initiate(det.bbox, p.noise), det.class_label, last_detection=det)
            self._next_id += 1
            if p.n_init <= 1:
                trk.status = CONFIRMED
            self.tracks.append(trk)

        self.retired.extend(t for t in self.tracks if t.status == DELETED)
        self.tracks = [t for t in self.tracks if t.status != DELETED]
        return [t for t in self.tracks if t.status == CONFIRMED]


def tracker_step(tracker: Tracker, detections, frame: int) -> list[Track]:
    return tracker.step(detections, frame)
