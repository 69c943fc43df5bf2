"""Point clouds cut from depth images, background removal and Euclidean clustering."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyCloud, NoClusters
from .geometry import CameraModel, RigidTransform3, apply_transform, back_project_many
from .scene import NO_RETURN, DepthImage

CAMERA = "camera"
MAP = "map"


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    frame: str = CAMERA

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        if self.frame not in (CAMERA, MAP):
            raise ValueError(f"unknown frame {self.frame!r}")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, idx) -> "PointCloud":
        return PointCloud(self.points[np.asarray(idx, dtype=int)], self.frame)

    def transformed(self, T: RigidTransform3, frame: str = MAP) -> "PointCloud":
        return PointCloud(apply_transform(T, self.points), frame)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounds (min, max); informational only."""
        if not len(self):
            raise EmptyCloud("no points")
        return self.points.min(axis=0), self.points.max(axis=0)


@dataclass(frozen=True)
class ClusterParams:
    epsilon: float = 0.10
    min_cluster_size: int = 30
    stride: int = 2

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.min_cluster_size < 1 or self.stride < 1:
            raise ValueError("min_cluster_size and stride must be >= 1")


def bbox_pixel_range(bbox, cam: CameraModel):
    """Integer pixel ranges [u0, u1) x [v0, v1) covered by a (cx, cy, w, h) box."""
    cx, cy, w, h = bbox
    u0 = max(math.ceil(cx - w / 2), 0)
    u1 = min(math.ceil(cx + w / 2), cam.width)
    v0 = max(math.ceil(cy - h / 2), 0)
    v1 = min(math.ceil(cy + h / 2), cam.height)
    return u0, u1, v0, v1


def extract_roi_cloud(depth: DepthImage, bbox, cam: CameraModel, stride: int = 2) -> PointCloud:
    """Back-project every valid pixel inside ``bbox`` on a ``stride`` lattice."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    u0, u1, v0, v1 = bbox_pixel_range(bbox, cam)
    if u0 >= u1 or v0 >= v1:
        raise ValueError("bounding box does not intersect the image")
    vs, us = np.mgrid[v0:v1:stride, u0:u1:stride]
    d = depth.depths[vs, us]
    keep = d != NO_RETURN
    if not keep.any():
        raise EmptyCloud("no valid depth inside the bounding box")
    return PointCloud(back_project_many(us[keep], vs[keep], d[keep], cam), CAMERA)


def remove_background(cloud: PointCloud, bin_size: float = 0.05, gap_bins: int = 2) -> PointCloud:
    """Keep the depth layer nearest the camera.

    Ranges are histogrammed from the nearest point outward; the first run of
    ``gap_bins`` consecutive empty bins separates foreground from background.
    """
    if not len(cloud):
        raise EmptyCloud("cannot remove background from an empty cloud")
    z = cloud.points[:, 2]
    bins = np.floor((z - z.min()) / bin_size).astype(int)
    counts = np.bincount(bins)
    empty = counts == 0
    cut = len(counts)
    run = 0
    for i, e in enumerate(empty):
        run = run + 1 if e else 0
        if run >= gap_bins:
            cut = i - run + 1
            break
    return cloud.subset(np.flatnonzero(bins < cut))


# Cells have side epsilon / sqrt(3), so any two points sharing a cell are within
# epsilon.  Cells up to two steps apart per axis may still hold such a pair;
# three steps leave a gap of 2 * epsilon / sqrt(3) > epsilon.
_CELL_SCALE = 1.0 / (math.sqrt(3.0) * (1.0 + 1e-9))
_REACH = 2
# forward half of the neighbourhood: every unordered cell pair is visited once
_FORWARD_OFFSETS = sorted(
    (dx, dy, dz)
    for dx in range(-_REACH, _REACH + 1) for dy in range(-_REACH, _REACH + 1) for dz in range(-_REACH, _REACH + 1)
    if (dx, dy, dz) > (0, 0, 0)
)


def _find(parent: list, a: int) -> int:
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


def _cell_labels(points: np.ndarray, eps: float) -> np.ndarray:
    """Component label of every point under the epsilon-neighbour relation."""
    keys = np.floor(points / (eps * _CELL_SCALE)).astype(np.int64)
    cells, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    starts = np.searchsorted(inverse[order], np.arange(len(cells) + 1))
    members = [points[order[starts[i]:starts[i + 1]]] for i in range(len(cells))]
    lookup = {tuple(c): i for i, c in enumerate(cells.tolist())}
    parent = list(range(len(cells)))
    eps2 = eps * eps
    for ci, key in enumerate(cells.tolist()):
        pa = members[ci]
        for off in _FORWARD_OFFSETS:
            cj = lookup.get((key[0] + off[0], key[1] + off[1], key[2] + off[2]))
            if cj is None:
                continue
            ra, rb = _find(parent, ci), _find(parent, cj)
            if ra == rb:
                continue
            diff = pa[:, None, :] - members[cj][None, :, :]
            if (np.einsum("ijk,ijk->ij", diff, diff) <= eps2).any():
                parent[rb] = ra
    roots = np.array([_find(parent, c) for c in range(len(cells))], dtype=np.int64)
    return roots[inverse]


def euclidean_cluster(cloud: PointCloud, params: ClusterParams = ClusterParams()) -> list[np.ndarray]:
    """Connected components of the graph joining points at most ``epsilon`` apart.

    Points are bucketed on a uniform grid so only nearby cells are compared.
    Components smaller than ``min_cluster_size`` are dropped; the rest are
    returned as sorted index arrays ordered by their smallest index.
    """
    n = len(cloud)
    if n == 0:
        return []
    labels = _cell_labels(cloud.points, params.epsilon)
    _, counts = np.unique(labels, return_counts=True)
    order = np.argsort(labels, kind="stable")
    groups = np.split(order, np.cumsum(counts)[:-1])
    clusters = [g for g in groups if g.size >= params.min_cluster_size]
    clusters.sort(key=lambda c: c[0])
    return clusters


def centroid(cloud: PointCloud) -> np.ndarray:
    if not len(cloud):
        raise EmptyCloud("centroid of an empty cloud")
    return cloud.points.mean(axis=0)


def largest_cluster(cloud: PointCloud, clusters, viewpoint=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Cluster with the most points; ties go to the one whose centroid is nearer ``viewpoint``."""
    if not clusters:
        raise NoClusters("no clusters to choose from")
    vp = np.asarray(viewpoint, dtype=float)

    def key(c):
        dist = float(np.linalg.norm(cloud.points[c].mean(axis=0) - vp))
        return (-len(c), dist)

    return min(clusters, key=key)


def object_height(cloud: PointCloud) -> float:
    """Top of the cloud above the z = 0 ground plane, never negative."""
    if not len(cloud):
        raise EmptyCloud("height of an empty cloud")
    if cloud.frame != MAP:
        raise ValueError("object height needs a map-frame cloud")
    return max(0.0, float(cloud.points[:, 2].max()))


def write_xyz(path, cloud: PointCloud) -> None:
    np.savetxt(path, cloud.points, fmt="%.6f", delimiter=" ")
