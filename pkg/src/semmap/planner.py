"""A* planning on an 8-connected costmap and ground-truth collision checks."""
from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt

from .errors import NoPath, StartOrGoalLethal
from .scene import SceneDescription
from .semantic_map import OccupancyGrid

SQRT2 = math.sqrt(2.0)
_MOVES = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)]


@dataclass(frozen=True)
class PlanRequest:
    start: tuple
    goal: tuple
    lethal_threshold: int = 200
    cost_weight: float = 3.0
    robot_radius: float = 0.25
    flight_height: float = 0.8

    def __post_init__(self):
        if tuple(self.start) == tuple(self.goal):
            raise ValueError("start and goal coincide")
        if not 0 < self.lethal_threshold <= 255:
            raise ValueError("lethal_threshold must lie in (0, 255]")
        if self.cost_weight < 0 or self.robot_radius < 0:
            raise ValueError("cost_weight and robot_radius must be non-negative")


@dataclass(frozen=True)
class Path:
    waypoints: np.ndarray      # (N, 2) cell centres, metres
    cells: np.ndarray          # (N, 2) (col, row)
    cost: float
    resolution: float

    def __len__(self):
        return len(self.waypoints)

    def length(self) -> float:
        return float(np.hypot(*np.diff(self.waypoints, axis=0).T).sum()) if len(self) > 1 else 0.0


@dataclass(frozen=True)
class CollisionReport:
    collided: bool
    index: int | None = None
    object_id: object = None
    point: tuple | None = None


def blocked_mask(costmap: OccupancyGrid, lethal_threshold: int, robot_radius: float) -> np.ndarray:
    """Lethal cells dilated by ``robot_radius`` (centre-to-centre distance)."""
    lethal = costmap.cells >= lethal_threshold
    if robot_radius <= 0 or not lethal.any():
        return lethal
    dist = distance_transform_edt(~lethal) * costmap.geometry.resolution
    return dist <= robot_radius + 1e-9


def step_costs(costmap: OccupancyGrid, cost_weight: float) -> np.ndarray:
    """Per-cell multiplier applied to steps entering that cell."""
    return 1.0 + cost_weight * (costmap.cells / 255.0)


def plan(costmap: OccupancyGrid, request: PlanRequest) -> Path:
    """Cheapest 8-connected path between the cells containing start and goal.

    A step costs its Euclidean length times ``1 + cost_weight * p`` where p is
    the occupancy probability of the cell entered.  Blocked cells (lethal after
    inflation) are never entered and diagonal steps may not cut a blocked corner.
    """
    g = costmap.geometry
    blocked = blocked_mask(costmap, request.lethal_threshold, request.robot_radius)
    factor = step_costs(costmap, request.cost_weight)
    res = g.resolution
    si, sj = (int(v) for v in g.cell_of(*request.start))
    gi, gj = (int(v) for v in g.cell_of(*request.goal))
    for name, (i, j) in (("start", (si, sj)), ("goal", (gi, gj))):
        if not g.inside(i, j):
            raise ValueError(f"{name} lies outside the costmap")
        if blocked[j, i]:
            raise StartOrGoalLethal(f"{name} cell ({i}, {j}) is lethal after inflation")

    W, H = g.width, g.height

    def h(i, j):
        dx, dy = abs(i - gi), abs(j - gj)
        return res * (max(dx, dy) + (SQRT2 - 1.0) * min(dx, dy))

    best = np.full((H, W), np.inf)
    parent = np.full((H, W), -1, dtype=np.int64)
    closed = np.zeros((H, W), dtype=bool)
    best[sj, si] = 0.0
    heap = [(h(si, sj), 0.0, sj * W + si)]
    while heap:
        _, gcost, node = heapq.heappop(heap)
        j, i = divmod(node, W)
        if closed[j, i]:
            continue
        closed[j, i] = True
        if i == gi and j == gj:
            break
        for di, dj in _MOVES:
            ni, nj = i + di, j + dj
            if ni < 0 or nj < 0 or ni >= W or nj >= H or blocked[nj, ni] or closed[nj, ni]:
                continue
            if di and dj and (blocked[j, ni] or blocked[nj, i]):
                continue
            step = res * (SQRT2 if di and dj else 1.0) * factor[nj, ni]
            cand = gcost + step
            if cand < best[nj, ni]:
                best[nj, ni] = cand
                parent[nj, ni] = node
                heapq.heappush(heap, (cand + h(ni, nj), cand, nj * W + ni))
    if not closed[gj, gi]:
        raise NoPath(f"no path from {request.start} to {request.goal}")

    cells = []
    node = gj * W + gi
    while node != -1:
        j, i = divmod(int(node), W)
        cells.append((i, j))
        node = parent[j, i]
    cells.reverse()
    cells = np.array(cells, dtype=int)
    cx, cy = g.center_of(cells[:, 0], cells[:, 1])
    path = Path(np.column_stack([cx, cy]), cells, float(best[gj, gi]), res)
    _check_path(path, costmap, request.lethal_threshold)
    return path


def _check_path(path: Path, costmap: OccupancyGrid, lethal_threshold: int) -> None:
    steps = np.abs(np.diff(path.cells, axis=0))
    assert np.all(steps.max(axis=1, initial=1) == 1), "path cells are not 8-adjacent"
    values = costmap.cells[path.cells[:, 1], path.cells[:, 0]]
    assert np.all(values < lethal_threshold), "path enters a lethal cell"


def _samples(waypoints: np.ndarray, step: float):
    """Points every <= ``step`` along the polyline with the segment index of each."""
    if len(waypoints) == 1:
        return waypoints.copy(), np.zeros(1, dtype=int)
    pts, seg = [], []
    for k, (a, b) in enumerate(zip(waypoints[:-1], waypoints[1:])):
        n = max(1, int(math.ceil(np.hypot(*(b - a)) / step)))
        t = np.arange(n)[:, None] / n
        pts.append(a + t * (b - a))
        seg.append(np.full(n, k))
    pts.append(waypoints[-1:])
    seg.append(np.array([len(waypoints) - 1]))
    return np.vstack(pts), np.concatenate(seg)


def validate_path(path: Path, scene: SceneDescription, flight_height: float, robot_radius: float,
                  vertical_half_extent: float = 0.10, step: float | None = None) -> CollisionReport:
    """Sweep a disc of ``robot_radius`` at ``flight_height`` along the path.

    The vehicle occupies [flight_height - vertical_half_extent,
    flight_height + vertical_half_extent]; any true box overlapping that band
    and lying within ``robot_radius`` of a sample is a collision.
    """
    if flight_height <= 0:
        raise ValueError("flight_height must be positive")
    step = path.resolution / 2 if step is None else min(step, path.resolution / 2)
    pts, seg = _samples(np.asarray(path.waypoints, dtype=float), step)
    zlo, zhi = flight_height - vertical_half_extent, flight_height + vertical_half_extent
    first, hit_box, hit_dist = None, None, math.inf
    for box in scene.boxes():
        if box.zmax < zlo or box.zmin > zhi:
            continue
        d = box.distance_xy(pts)
        hits = np.flatnonzero(d <= robot_radius)
        if not hits.size:
            continue
        k = int(hits[0])
        if first is None or k < first or (k == first and d[k] < hit_dist):
            first, hit_box, hit_dist = k, box, float(d[k])
    if first is None:
        return CollisionReport(False)
    return CollisionReport(True, int(seg[first]), hit_box.owner, (float(pts[first, 0]), float(pts[first, 1])))


def write_paths_csv(path, named_paths: dict) -> None:
    """CSV with one row per waypoint: ``map, index, x, y``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["map", "index", "x", "y"])
        for name, p in named_paths.items():
            if p is None:
                continue
            for k, (x, y) in enumerate(p.waypoints):
                w.writerow([name, k, f"{x:.4f}", f"{y:.4f}"])


def read_paths_csv(path) -> dict:
    out: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["map"], []).append((float(row["x"]), float(row["y"])))
    return {k: np.array(v) for k, v in out.items()}
