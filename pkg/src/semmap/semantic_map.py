"""Metric occupancy grid, object registry and the semantic costmap layer.

Cells hold 0-255 occupancy values, 0 meaning certainly free and 255 certainly
occupied.  Cell (0, 0) is the lower-left cell; arrays are indexed [row, col]
with rows increasing along +y.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (EmptyCloud, FootprintOutsideGrid, GeometryMismatch, MapFormatError, PoseOutsideGrid,
                     SchemaVersionError)
from .geometry import CameraModel, RobotPose2D
from .plane import footprint_hull
from .polygon import distance_to_polygon, points_in_convex_polygon, polygon_centroid
from .scene import NO_RETURN, DepthImage

MAP_SCHEMA = 1
REGISTRY_SCHEMA = 1


@dataclass(frozen=True)
class GridGeometry:
    resolution: float
    origin: tuple
    width: int
    height: int

    def __post_init__(self):
        if self.resolution <= 0 or self.width <= 0 or self.height <= 0:
            raise ValueError("grid needs positive resolution and size")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @classmethod
    def covering(cls, bounds, resolution: float = 0.05, margin: float = 0.0) -> "GridGeometry":
        xmin, ymin, xmax, ymax = bounds
        xmin, ymin, xmax, ymax = xmin - margin, ymin - margin, xmax + margin, ymax + margin
        w = int(math.ceil((xmax - xmin) / resolution - 1e-9))
        h = int(math.ceil((ymax - ymin) / resolution - 1e-9))
        return cls(resolution, (xmin, ymin), w, h)

    @property
    def shape(self) -> tuple:
        return self.height, self.width

    def cell_of(self, x, y):
        """(col, row) of the cell containing a map point; may lie outside the grid."""
        i = np.floor((np.asarray(x) - self.origin[0]) / self.resolution).astype(int)
        j = np.floor((np.asarray(y) - self.origin[1]) / self.resolution).astype(int)
        return i, j

    def inside(self, i, j):
        return (i >= 0) & (i < self.width) & (j >= 0) & (j < self.height)

    def center_of(self, i, j):
        return (self.origin[0] + (np.asarray(i) + 0.5) * self.resolution,
                self.origin[1] + (np.asarray(j) + 0.5) * self.resolution)

    def to_dict(self) -> dict:
        return {"resolution": self.resolution, "origin": list(self.origin), "width": self.width, "height": self.height}


@dataclass(frozen=True)
class LogOddsParams:
    l_occ: float = 0.85
    l_free: float = -0.4
    l_min: float = -7.0
    l_max: float = 7.0


def logodds_to_value(l: np.ndarray) -> np.ndarray:
    p = 1.0 / (1.0 + np.exp(-np.asarray(l, dtype=float)))
    return np.floor(255.0 * p + 0.5).astype(np.uint8)


def cell_probability(value) -> float:
    """Occupancy probability of a 0-255 cell value (linear)."""
    v = int(value)
    if not 0 <= v <= 255:
        raise ValueError(f"cell value {v} outside [0, 255]")
    return v / 255.0


@dataclass
class OccupancyGrid:
    geometry: GridGeometry
    cells: np.ndarray
    logodds: np.ndarray | None = None
    params: LogOddsParams = field(default_factory=LogOddsParams)

    @classmethod
    def empty(cls, geometry: GridGeometry, params: LogOddsParams = LogOddsParams()) -> "OccupancyGrid":
        l = np.zeros(geometry.shape)
        return cls(geometry, logodds_to_value(l), l, params)

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.geometry, self.cells.copy(),
                             None if self.logodds is None else self.logodds.copy(), self.params)

    def probability(self) -> np.ndarray:
        return self.cells / 255.0


@dataclass(frozen=True)
class Scan2D:
    """Planar scan; no-return beams carry ``inf`` range."""

    bearings: np.ndarray
    ranges: np.ndarray
    max_range: float


def depth_to_scan(depth: DepthImage, cam: CameraModel, band_half_height: int = 0) -> Scan2D:
    """Per-column minimum planar range over rows ``cy +/- band_half_height``."""
    row = int(round(cam.cy))
    r0, r1 = row - band_half_height, row + band_half_height + 1
    if band_half_height < 0 or r0 < 0 or r1 > cam.height:
        raise ValueError("scan band leaves the image")
    d = depth.depths[r0:r1]
    u = np.arange(cam.width, dtype=float)
    x = (u[None, :] - cam.cx) * d / cam.fx
    planar = np.hypot(x, d)
    planar = np.where(d != NO_RETURN, planar, np.inf)
    ranges = planar.min(axis=0)
    bearings = np.arctan2(-(u - cam.cx) / cam.fx, 1.0)
    return Scan2D(bearings, ranges, cam.depth_max)


def _ray_cells(i0: int, j0: int, i1: np.ndarray, j1: np.ndarray):
    """Rounded-DDA cells from (i0, j0) to each (i1, j1); returns (I, J, valid) of shape (beams, L)."""
    di, dj = i1 - i0, j1 - j0
    n = np.maximum(np.abs(di), np.abs(dj))
    L = int(n.max()) + 1 if n.size else 1
    k = np.arange(L)[None, :]
    frac = k / np.maximum(n, 1)[:, None]
    I = np.floor(i0 + frac * di[:, None] + 0.5).astype(int)
    J = np.floor(j0 + frac * dj[:, None] + 0.5).astype(int)
    return I, J, k <= n[:, None]


def integrate_scan(grid: OccupancyGrid, pose: RobotPose2D, scan: Scan2D) -> OccupancyGrid:
    """Log-odds update: free along each beam, occupied at its endpoint.

    Every touched cell is updated once per scan; a cell that is an endpoint of
    any beam counts as occupied for that scan.  No-return beams clear space out
    to ``max_range``.  The grid is updated in place and returned.
    """
    if grid.logodds is None:
        raise ValueError("grid has no log-odds layer (derived costmap?)")
    g = grid.geometry
    i0, j0 = g.cell_of(pose.x, pose.y)
    if not g.inside(i0, j0):
        raise PoseOutsideGrid(f"pose ({pose.x}, {pose.y}) lies outside the grid")
    hit = np.isfinite(scan.ranges) & (scan.ranges <= scan.max_range)
    r = np.where(hit, scan.ranges, scan.max_range)
    ang = pose.theta + scan.bearings
    ex = pose.x + r * np.cos(ang)
    ey = pose.y + r * np.sin(ang)
    i1, j1 = g.cell_of(ex, ey)
    I, J, valid = _ray_cells(int(i0), int(j0), i1, j1)
    inside = valid & g.inside(I, J)

    flat = lambda a, b: b * g.width + a  # noqa: E731
    last = np.zeros_like(valid)
    idx_last = valid.sum(axis=1) - 1
    last[np.arange(len(idx_last)), idx_last] = True
    occ_mask = inside & last & hit[:, None]
    occ = np.unique(flat(I[occ_mask], J[occ_mask]))
    free = np.unique(flat(I[inside & ~occ_mask], J[inside & ~occ_mask]))
    free = np.setdiff1d(free, occ, assume_unique=True)

    p = grid.params
    lo = grid.logodds.reshape(-1)
    lo[free] += p.l_free
    lo[occ] += p.l_occ
    np.clip(lo, p.l_min, p.l_max, out=lo)
    touched = np.concatenate([free, occ])
    grid.cells.reshape(-1)[touched] = logodds_to_value(lo[touched])
    return grid


# --------------------------------------------------------------------------- objects

@dataclass(frozen=True)
class Observation:
    class_label: str
    position: tuple
    footprint: np.ndarray
    height: float
    confidence: float = 1.0


@dataclass
class ObjectRecord:
    object_id: int
    class_label: str
    position: np.ndarray
    height: float
    footprint: np.ndarray
    observation_count: int = 1
    confidence: float = 1.0

    @property
    def weight(self) -> float:
        return max(self.confidence, 1e-6) * self.observation_count

    def to_dict(self) -> dict:
        return {
            "id": self.object_id, "class": self.class_label,
            "x": float(self.position[0]), "y": float(self.position[1]), "height": float(self.height),
            "footprint": [[float(a), float(b)] for a, b in self.footprint],
            "count": self.observation_count, "confidence": float(self.confidence),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectRecord":
        return cls(int(d["id"]), d["class"], np.array([d["x"], d["y"]], dtype=float), float(d["height"]),
                   np.array(d["footprint"], dtype=float).reshape(-1, 2), int(d["count"]), float(d["confidence"]))


class ObjectRegistry:
    """Objects seen so far; observations of one class within ``merge_radius`` merge."""

    def __init__(self, merge_radius: float = 0.5):
        self.merge_radius = merge_radius
        self.records: list[ObjectRecord] = []
        self._next_id = 1

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def get(self, object_id: int) -> ObjectRecord:
        for r in self.records:
            if r.object_id == object_id:
                return r
        raise KeyError(object_id)

    def register(self, obs: Observation) -> int:
        fp = np.asarray(obs.footprint, dtype=float).reshape(-1, 2)
        if not len(fp):
            raise EmptyCloud("observation has an empty footprint")
        pos = np.asarray(obs.position, dtype=float)
        best, best_d = None, math.inf
        for r in self.records:
            if r.class_label != obs.class_label:
                continue
            dist = float(np.hypot(*(r.position - pos)))
            if dist <= self.merge_radius and dist < best_d:
                best, best_d = r, dist
        if best is None:
            rec = ObjectRecord(self._next_id, obs.class_label, pos.copy(), float(obs.height), fp.copy(),
                               1, float(obs.confidence))
            self._next_id += 1
            self.records.append(rec)
            return rec.object_id
        w_old, w_new = best.weight, max(float(obs.confidence), 1e-6)
        total = w_old + w_new
        best.position = (w_old * best.position + w_new * pos) / total
        best.height = (w_old * best.height + w_new * float(obs.height)) / total
        best.footprint = footprint_hull(np.vstack([best.footprint, fp]))
        best.confidence = (best.confidence * best.observation_count + float(obs.confidence)) / (best.observation_count + 1)
        best.observation_count += 1
        return best.object_id

    def to_dict(self) -> dict:
        return {"schema": REGISTRY_SCHEMA, "objects": [r.to_dict() for r in self.records]}

    @classmethod
    def from_dict(cls, data: dict, merge_radius: float = 0.5) -> "ObjectRegistry":
        if data.get("schema") != REGISTRY_SCHEMA:
            raise SchemaVersionError(f"unsupported registry schema {data.get('schema')!r}")
        reg = cls(merge_radius)
        reg.records = [ObjectRecord.from_dict(d) for d in data["objects"]]
        reg._next_id = max((r.object_id for r in reg.records), default=0) + 1
        return reg


def register_object(registry: ObjectRegistry, observation: Observation) -> tuple[ObjectRegistry, int]:
    return registry, registry.register(observation)


def observation_from_footprint(class_label: str, footprint, height: float, confidence: float) -> Observation:
    """Observation located at the footprint's area centroid."""
    return Observation(class_label, tuple(polygon_centroid(footprint)), np.asarray(footprint), height, confidence)


@dataclass
class SemanticLayer:
    """Per-cell semantic occupancy with the id of the object that set it (0 = none)."""

    geometry: GridGeometry
    values: np.ndarray
    owners: np.ndarray

    @classmethod
    def empty(cls, geometry: GridGeometry) -> "SemanticLayer":
        return cls(geometry, np.zeros(geometry.shape, np.uint8), np.zeros(geometry.shape, np.int32))

    def copy(self) -> "SemanticLayer":
        return SemanticLayer(self.geometry, self.values.copy(), self.owners.copy())


def stamp_semantic_footprint(layer: SemanticLayer, record: ObjectRecord, sigma: float = 0.15) -> SemanticLayer:
    """Raise cells inside the footprint to 255 and around it by a Gaussian falloff.

    Cells whose centres are within ``3 * sigma`` of the polygon get
    ``round(255 * exp(-d^2 / (2 sigma^2)))`` unless they already hold more.
    Updated in place.
    """
    g = layer.geometry
    fp = np.asarray(record.footprint, dtype=float)
    reach = 3.0 * sigma
    lo = fp.min(axis=0) - reach
    hi = fp.max(axis=0) + reach
    i0, j0 = g.cell_of(lo[0], lo[1])
    i1, j1 = g.cell_of(hi[0], hi[1])
    i0, j0 = max(int(i0), 0), max(int(j0), 0)
    i1, j1 = min(int(i1), g.width - 1), min(int(j1), g.height - 1)
    fxmin, fymin = fp.min(axis=0)
    fxmax, fymax = fp.max(axis=0)
    gx0, gy0 = g.origin
    gx1, gy1 = gx0 + g.width * g.resolution, gy0 + g.height * g.resolution
    if fxmax < gx0 or fxmin > gx1 or fymax < gy0 or fymin > gy1:
        raise FootprintOutsideGrid(f"footprint of object {record.object_id} lies outside the grid")
    if i0 > i1 or j0 > j1:
        return layer
    jj, ii = np.mgrid[j0:j1 + 1, i0:i1 + 1]
    cx, cy = g.center_of(ii, jj)
    pts = np.column_stack([cx.ravel(), cy.ravel()])
    if len(fp) >= 3:
        inside = points_in_convex_polygon(pts, fp)
    else:
        inside = np.zeros(len(pts), dtype=bool)
    dist = distance_to_polygon(pts, fp)
    val = np.where(dist <= reach, np.floor(255.0 * np.exp(-dist ** 2 / (2 * sigma ** 2)) + 0.5), 0.0)
    val = np.where(inside, 255.0, val).astype(np.uint8).reshape(ii.shape)
    win = (slice(j0, j1 + 1), slice(i0, i1 + 1))
    old = layer.values[win]
    raised = val > old
    old[raised] = val[raised]
    layer.owners[win][raised] = record.object_id
    return layer


def compose_costmap(metric: OccupancyGrid, semantic: SemanticLayer) -> OccupancyGrid:
    """Cell-wise maximum of metric occupancy and semantic occupancy."""
    if metric.geometry != semantic.geometry:
        raise GeometryMismatch("metric grid and semantic layer differ in geometry")
    return OccupancyGrid(metric.geometry, np.maximum(metric.cells, semantic.values), None, metric.params)


# --------------------------------------------------------------------------- persistence

def write_pgm(path, image: np.ndarray) -> None:
    """Binary PGM (P5); uint8 as maxval 255, uint16 as big-endian maxval 65535."""
    img = np.asarray(image)
    if img.dtype == np.uint8:
        maxval, payload = 255, img.tobytes()
    elif img.dtype in (np.uint16, np.int32, np.int64) and img.min() >= 0 and img.max() <= 65535:
        maxval, payload = 65535, img.astype(">u2").tobytes()
    else:
        raise ValueError(f"cannot store dtype {img.dtype} in a PGM")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(payload)


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise MapFormatError(f"{path}: not a binary PGM (magic {data[:2]!r})")
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise MapFormatError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise MapFormatError(f"{path}: bad PGM header") from exc
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    n = w * h * np.dtype(dtype).itemsize
    if len(data) - pos < n:
        raise MapFormatError(f"{path}: truncated PGM payload")
    img = np.frombuffer(data[pos:pos + n], dtype=dtype).reshape(h, w)
    return img.astype(np.uint8 if maxval < 256 else np.int32)


def save_map(directory, grid: OccupancyGrid, semantic: SemanticLayer | None = None,
             registry: ObjectRegistry | None = None) -> Path:
    """Write ``map.json`` plus the PGM layers and registry it references.

    Images are stored top row = highest y, as map viewers expect.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"schema": MAP_SCHEMA, **grid.geometry.to_dict(), "metric": "metric.pgm"}
    write_pgm(out / "metric.pgm", np.flipud(grid.cells))
    if grid.logodds is not None:
        np.save(out / "metric_logodds.npy", grid.logodds)
        meta["logodds"] = "metric_logodds.npy"
        meta["logodds_params"] = vars(grid.params).copy()
    if semantic is not None:
        if semantic.geometry != grid.geometry:
            raise GeometryMismatch("semantic layer geometry differs from the metric grid")
        write_pgm(out / "semantic.pgm", np.flipud(semantic.values))
        write_pgm(out / "semantic_owner.pgm", np.flipud(semantic.owners.astype(np.int32)))
        meta["semantic"] = "semantic.pgm"
        meta["semantic_owner"] = "semantic_owner.pgm"
    if registry is not None:
        (out / "registry.json").write_text(json.dumps(registry.to_dict(), indent=1) + "\n")
        meta["registry"] = "registry.json"
    (out / "map.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return out / "map.json"


def load_map(path):
    """Inverse of :func:`save_map`; accepts the directory or its ``map.json``.

    Returns ``(grid, semantic_or_None, registry_or_None)``.
    """
    p = Path(path)
    meta_path = p / "map.json" if p.is_dir() else p
    base = meta_path.parent
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise MapFormatError(f"{meta_path}: invalid JSON") from exc
    if meta.get("schema") != MAP_SCHEMA:
        raise SchemaVersionError(f"{meta_path}: unsupported map schema {meta.get('schema')!r}")
    geom = GridGeometry(meta["resolution"], tuple(meta["origin"]), meta["width"], meta["height"])
    cells = np.flipud(read_pgm(base / meta["metric"])).copy()
    if cells.shape != geom.shape:
        raise MapFormatError(f"{meta_path}: metric image shape {cells.shape} != {geom.shape}")
    logodds = np.load(base / meta["logodds"]) if "logodds" in meta else None
    params = LogOddsParams(**meta["logodds_params"]) if "logodds_params" in meta else LogOddsParams()
    grid = OccupancyGrid(geom, cells, logodds, params)
    semantic = None
    if "semantic" in meta:
        values = np.flipud(read_pgm(base / meta["semantic"])).astype(np.uint8)
        owners = np.flipud(read_pgm(base / meta["semantic_owner"])).astype(np.int32)
        semantic = SemanticLayer(geom, values.copy(), owners.copy())
    registry = None
    if "registry" in meta:
        registry = ObjectRegistry.from_dict(json.loads((base / meta["registry"]).read_text()))
    return grid, semantic, registry
