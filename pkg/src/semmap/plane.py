"""RANSAC plane extraction and projection of the plane onto the map's ground."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cloud import MAP, PointCloud
from .errors import DegenerateCloud, EmptyCloud, InsufficientConsensus
from .polygon import convex_hull, polygon_area, regular_polygon

DEGENERATE_AREA = 1e-6
DISC_VERTICES = 16


@dataclass(frozen=True)
class Plane:
    """Plane n . p + d = 0 with unit normal oriented so that n.z >= 0."""

    normal: np.ndarray
    d: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise ValueError("plane normal must be non-zero")
        n, d = n / norm, float(self.d) / norm
        if n[2] < 0 or (n[2] == 0 and (n[1] < 0 or (n[1] == 0 and n[0] < 0))):
            n, d = -n, -d
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "d", d)

    def residuals(self, points: np.ndarray) -> np.ndarray:
        return points @ self.normal + self.d

    def tilt_deg(self, other: "Plane") -> float:
        c = min(1.0, abs(float(self.normal @ other.normal)))
        return math.degrees(math.acos(c))


@dataclass(frozen=True)
class RansacParams:
    iterations: int = 200
    inlier_threshold: float = 0.01
    min_inlier_ratio: float = 0.4
    seed: int = 0
    # hypotheses whose |n.z| falls below this are discarded; 0 accepts any orientation
    min_normal_z: float = 0.0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be positive")
        if not 0 < self.min_inlier_ratio <= 1:
            raise ValueError("min_inlier_ratio must lie in (0, 1]")


def fit_plane_lsq(points: np.ndarray) -> Plane:
    """Total least squares plane: centroid plus the smallest principal axis."""
    c = points.mean(axis=0)
    _, vecs = np.linalg.eigh(np.cov((points - c).T, bias=True))
    n = vecs[:, 0]
    return Plane(n, -float(n @ c))


def _check_degenerate(pts: np.ndarray) -> None:
    if len(pts) < 3:
        raise DegenerateCloud(f"need at least 3 points, got {len(pts)}")
    s = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
    if s[1] <= 1e-9 * max(s[0], 1.0):
        raise DegenerateCloud("points are collinear")


def ransac_plane(cloud: PointCloud, params: RansacParams = RansacParams()) -> tuple[Plane, np.ndarray]:
    """Dominant plane by random 3-point hypotheses scored on inlier count.

    The winning hypothesis's inliers are refit by least squares; that refit
    plane and the (sorted) inlier indices are returned.
    """
    pts = cloud.points
    _check_degenerate(pts)
    n = len(pts)
    rng = np.random.default_rng(params.seed)
    best_count = 0
    best_mask = None
    for _ in range(params.iterations):
        i, j, k = rng.choice(n, 3, replace=False)
        normal = np.cross(pts[j] - pts[i], pts[k] - pts[i])
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            continue
        normal /= norm
        if abs(normal[2]) < params.min_normal_z:
            continue
        mask = np.abs(pts @ normal - normal @ pts[i]) <= params.inlier_threshold
        count = int(mask.sum())
        if count > best_count:
            best_count, best_mask = count, mask
    if best_mask is None or best_count < 3:
        raise InsufficientConsensus("no admissible plane hypothesis")
    ratio = best_count / n
    if ratio < params.min_inlier_ratio:
        raise InsufficientConsensus(f"best inlier ratio {ratio:.3f} < {params.min_inlier_ratio}")
    inliers = np.flatnonzero(best_mask)
    return fit_plane_lsq(pts[inliers]), inliers


def project_inliers_to_map(inliers: PointCloud) -> np.ndarray:
    """Drop each map-frame point onto the ground plane: (x, y, z) -> (x, y)."""
    if not len(inliers):
        raise EmptyCloud("nothing to project")
    if inliers.frame != MAP:
        raise ValueError("projection expects a map-frame cloud")
    return inliers.points[:, :2].copy()


def footprint_hull(points2d) -> np.ndarray:
    """Convex hull of projected points, or a 16-gon disc when the hull is degenerate.

    The disc is centred on the point centroid with radius half the largest
    pairwise spread, widened if needed so that the polygon contains every
    input point; one vertex is aimed along the points' principal direction.
    """
    pts = np.asarray(points2d, dtype=float).reshape(-1, 2)
    if not len(pts):
        raise EmptyCloud("footprint of no points")
    hull = convex_hull(pts)
    if len(hull) >= 3 and abs(polygon_area(hull)) >= DEGENERATE_AREA:
        return hull
    center = pts.mean(axis=0)
    ext = hull if len(hull) else pts
    diff = ext[:, None, :] - ext[None, :, :]
    span = float(np.sqrt((diff ** 2).sum(-1)).max())
    radius = max(span / 2, float(np.hypot(*(pts - center).T).max()), 1e-3)
    phase = 0.0
    if span > 0:
        i, j = np.unravel_index(np.argmax((diff ** 2).sum(-1)), diff.shape[:2])
        dvec = ext[i] - ext[j]
        phase = math.atan2(dvec[1], dvec[0])
    # vertices sit on the circle, so edges cut inside it; grow until every point is within the apothem
    ang = phase + np.pi / DISC_VERTICES + 2 * np.pi * np.arange(DISC_VERTICES) / DISC_VERTICES
    normals = np.column_stack([np.cos(ang), np.sin(ang)])
    reach = float(((pts - center) @ normals.T).max())
    radius = max(radius, reach / math.cos(math.pi / DISC_VERTICES))
    return regular_polygon(center, radius, DISC_VERTICES, phase)
