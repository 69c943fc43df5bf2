"""Small planar polygon toolkit: convex hull, containment, distances, centroids.

Polygons are (K, 2) float arrays of counter-clockwise vertices.
"""
from __future__ import annotations

import numpy as np


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points) -> np.ndarray:
    """Andrew's monotone chain; CCW, no repeated or collinear vertices."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float).reshape(-1, 2).tolist())))
    if len(pts) <= 2:
        return np.array(pts, dtype=float).reshape(-1, 2)
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=float)


def polygon_area(poly) -> float:
    p = np.asarray(poly, dtype=float)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def polygon_centroid(poly) -> np.ndarray:
    """Area centroid; falls back to the vertex mean for degenerate polygons."""
    p = np.asarray(poly, dtype=float)
    a = polygon_area(p)
    if abs(a) < 1e-12:
        return p.mean(axis=0)
    x, y = p[:, 0], p[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    c = x * yn - xn * y
    return np.array([np.dot(x + xn, c), np.dot(y + yn, c)]) / (6.0 * a)


def points_in_convex_polygon(points, poly, tol: float = 0.0) -> np.ndarray:
    """Boolean mask of points inside (or within ``tol`` of) a CCW convex polygon."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    p = np.asarray(poly, dtype=float)
    if len(p) < 3:
        return distance_to_polygon(pts, p) <= tol
    a = p
    b = np.roll(p, -1, axis=0)
    e = b - a
    elen = np.hypot(e[:, 0], e[:, 1])
    rel = pts[:, None, :] - a[None, :, :]
    cross = e[None, :, 0] * rel[:, :, 1] - e[None, :, 1] * rel[:, :, 0]
    return np.all(cross >= -tol * elen[None, :], axis=1)


def distance_to_polygon(points, poly) -> np.ndarray:
    """Distance from each point to the polygon's boundary, 0 for interior points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    p = np.asarray(poly, dtype=float).reshape(-1, 2)
    if len(p) == 1:
        return np.hypot(*(pts - p[0]).T)
    a = p
    b = np.roll(p, -1, axis=0) if len(p) > 2 else p[::-1]
    e = b - a
    ee = np.einsum("ij,ij->i", e, e)
    rel = pts[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("nkj,kj->nk", rel, e) / np.where(ee > 0, ee, 1.0), 0.0, 1.0)
    closest = a[None] + t[..., None] * e[None]
    d = np.hypot(*(pts[:, None, :] - closest).transpose(2, 0, 1)).min(axis=1)
    if len(p) >= 3:
        d = np.where(points_in_convex_polygon(pts, p), 0.0, d)
    return d


def regular_polygon(center, radius: float, n: int = 16, phase: float = 0.0) -> np.ndarray:
    ang = phase + 2 * np.pi * np.arange(n) / n
    return np.column_stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)])
