"""Synthetic furniture world, z-depth ray caster and ground-truth detector.

Every object is a union of yaw-rotated boxes: a slab on four corner legs for
hollow-bottom furniture, the same plus a centre pedestal for partly-hollow
furniture, and a single box for solid furniture.  Walls are axis-aligned boxes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import ConfigError, EmptyTrajectory, SchemaVersionError
from .geometry import CameraModel, RigidTransform3, RobotPose2D, normalize_angle, rot_z

SCENE_SCHEMA = 1

HOLLOW = "hollow_bottom"
PARTLY_HOLLOW = "partly_hollow"
SOLID = "solid"

CLASS_STRUCTURE = {
    "chair": HOLLOW,
    "coffee_table": HOLLOW,
    "desk": HOLLOW,
    "whiteboard": HOLLOW,
    "conference_table": PARTLY_HOLLOW,
    "sofa": SOLID,
}


@dataclass(frozen=True)
class ShapeParams:
    """Object dimensions in metres, in the object's own frame.

    ``width`` runs along the object's x axis, ``depth`` along y.  For solid
    objects the slab is the whole body and ``top_height`` its height.
    """

    width: float
    depth: float
    top_height: float
    thickness: float
    leg_size: float = 0.04
    pedestal_width: float = 0.0
    pedestal_depth: float = 0.0

    def __post_init__(self):
        if self.width <= 0 or self.depth <= 0:
            raise ValueError("footprint dimensions must be positive")
        if not (self.top_height > self.thickness > 0):
            raise ValueError("need top_height > thickness > 0")
        if self.leg_size <= 0:
            raise ValueError("leg_size must be positive")


DEFAULT_SHAPES = {
    "chair": ShapeParams(0.45, 0.45, 0.45, 0.03, 0.03),
    "coffee_table": ShapeParams(1.0, 0.5, 0.45, 0.03, 0.04),
    "desk": ShapeParams(1.2, 0.6, 0.75, 0.03, 0.04),
    "whiteboard": ShapeParams(1.2, 0.05, 1.9, 0.9, 0.04),
    "conference_table": ShapeParams(2.0, 1.0, 0.75, 0.04, 0.05, 0.4, 0.4),
    "sofa": ShapeParams(1.8, 0.8, 0.8, 0.4),
}


@dataclass(frozen=True)
class Box:
    """Box with half extents ``half`` rotated by ``yaw`` about its vertical axis."""

    center: tuple
    half: tuple
    yaw: float = 0.0
    owner: object = None

    @property
    def zmin(self) -> float:
        return self.center[2] - self.half[2]

    @property
    def zmax(self) -> float:
        return self.center[2] + self.half[2]

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        local = signs * np.asarray(self.half)
        return local @ rot_z(self.yaw).T + np.asarray(self.center)

    def distance_xy(self, points: np.ndarray) -> np.ndarray:
        """Planar distance from (N, 2) points to the box's footprint rectangle."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        d = np.atleast_2d(points) - np.asarray(self.center[:2])
        lx = c * d[:, 0] + s * d[:, 1]
        ly = -s * d[:, 0] + c * d[:, 1]
        ex = np.maximum(np.abs(lx) - self.half[0], 0.0)
        ey = np.maximum(np.abs(ly) - self.half[1], 0.0)
        return np.hypot(ex, ey)


@dataclass(frozen=True)
class SceneObject:
    id: int
    class_label: str
    pose: RobotPose2D
    shape: ShapeParams

    def __post_init__(self):
        if self.class_label not in CLASS_STRUCTURE:
            raise ValueError(f"unknown object class {self.class_label!r}")
        if self.structure == PARTLY_HOLLOW and (self.shape.pedestal_width <= 0 or self.shape.pedestal_depth <= 0):
            raise ValueError("partly-hollow objects need a pedestal")

    @property
    def structure(self) -> str:
        return CLASS_STRUCTURE[self.class_label]

    def boxes(self) -> list[Box]:
        s, p = self.shape, self.pose
        rz = rot_z(p.theta)

        def place(lx, ly, z0, z1, hx, hy):
            cx, cy, _ = rz @ np.array([lx, ly, 0.0])
            return Box((p.x + cx, p.y + cy, (z0 + z1) / 2), (hx, hy, (z1 - z0) / 2), p.theta, self.id)

        if self.structure == SOLID:
            return [place(0, 0, 0.0, s.top_height, s.width / 2, s.depth / 2)]
        bottom = s.top_height - s.thickness
        out = [place(0, 0, bottom, s.top_height, s.width / 2, s.depth / 2)]
        lx = s.width / 2 - s.leg_size / 2
        ly = s.depth / 2 - s.leg_size / 2
        for sx in (-1, 1):
            for sy in (-1, 1):
                out.append(place(sx * lx, sy * ly, 0.0, bottom, s.leg_size / 2, s.leg_size / 2))
        if self.structure == PARTLY_HOLLOW:
            out.append(place(0, 0, 0.0, bottom, s.pedestal_width / 2, s.pedestal_depth / 2))
        return out


def object_footprint(obj: SceneObject) -> np.ndarray:
    """CCW corners (4, 2) of the object's largest horizontal cross-section."""
    hx, hy = obj.shape.width / 2, obj.shape.depth / 2
    local = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
    c, s = math.cos(obj.pose.theta), math.sin(obj.pose.theta)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([obj.pose.x, obj.pose.y])


@dataclass(frozen=True)
class SceneDescription:
    objects: tuple = ()
    walls: tuple = ()
    bounds: tuple = (-5.0, -5.0, 5.0, 5.0)

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "walls", tuple(self.walls))
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError("object ids must be unique")
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmin < xmax and ymin < ymax):
            raise ValueError("empty scene bounds")
        for o in self.objects:
            fp = object_footprint(o)
            if fp[:, 0].min() < xmin or fp[:, 0].max() > xmax or fp[:, 1].min() < ymin or fp[:, 1].max() > ymax:
                raise ValueError(f"object {o.id} extends outside the scene bounds")

    def boxes(self) -> list[Box]:
        out = [b for o in self.objects for b in o.boxes()]
        out.extend(self.walls)
        return out

    def object_by_id(self, oid) -> SceneObject:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)


def wall_box(lo, hi, name: str) -> Box:
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    if np.any(hi <= lo):
        raise ValueError(f"wall {name} has non-positive extent")
    return Box(tuple((lo + hi) / 2), tuple((hi - lo) / 2), 0.0, name)


def scene_from_dict(data: dict) -> SceneDescription:
    if data.get("schema") != SCENE_SCHEMA:
        raise SchemaVersionError(f"unsupported scene schema {data.get('schema')!r}, expected {SCENE_SCHEMA}")
    try:
        objects = []
        for o in data.get("objects", []):
            cls = o["class"]
            if cls not in DEFAULT_SHAPES:
                raise ConfigError(f"unknown object class {cls!r}")
            shape = replace(DEFAULT_SHAPES[cls], **o.get("shape", {}))
            objects.append(SceneObject(int(o["id"]), cls, RobotPose2D(o["x"], o["y"], o.get("yaw", 0.0)), shape))
        walls = [wall_box(w["min"], w["max"], w.get("name", f"wall{i}")) for i, w in enumerate(data.get("walls", []))]
        return SceneDescription(tuple(objects), tuple(walls), tuple(float(b) for b in data["bounds"]))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed scene description: {exc!r}") from exc


def scene_to_dict(scene: SceneDescription) -> dict:
    objects = []
    for o in scene.objects:
        objects.append({
            "id": o.id, "class": o.class_label, "x": o.pose.x, "y": o.pose.y, "yaw": o.pose.theta,
            "shape": {k: getattr(o.shape, k) for k in ShapeParams.__dataclass_fields__},
        })
    walls = [{"name": w.owner, "min": [c - h for c, h in zip(w.center, w.half)],
              "max": [c + h for c, h in zip(w.center, w.half)]} for w in scene.walls]
    return {"schema": SCENE_SCHEMA, "bounds": list(scene.bounds), "walls": walls, "objects": objects}


def load_scene(path) -> SceneDescription:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return scene_from_dict(data)


# --------------------------------------------------------------------------- rendering

NO_RETURN = 0.0


@dataclass(frozen=True)
class DepthImage:
    """Row-major z-depth image; ``NO_RETURN`` (0) marks pixels without a return."""

    width: int
    height: int
    depths: np.ndarray = field(repr=False)

    def __post_init__(self):
        d = np.asarray(self.depths, dtype=float)
        if d.shape != (self.height, self.width):
            raise ValueError(f"depth array shape {d.shape} != ({self.height}, {self.width})")
        object.__setattr__(self, "depths", d)

    @property
    def valid(self) -> np.ndarray:
        return self.depths != NO_RETURN


@lru_cache(maxsize=8)
def _camera_rays(cam: CameraModel) -> np.ndarray:
    """Camera-frame ray directions (H, W, 3) scaled so that z = 1."""
    u = np.arange(cam.width, dtype=float)
    v = np.arange(cam.height, dtype=float)
    uu, vv = np.meshgrid(u, v)
    rays = np.stack([(uu - cam.cx) / cam.fx, (vv - cam.cy) / cam.fy, np.ones_like(uu)], axis=-1)
    rays.setflags(write=False)
    return rays


_BOX_EDGES = [(a, b) for a in range(8) for b in range(a + 1, 8) if bin(a ^ b).count("1") == 1]
_NEAR = 1e-3


def _pixel_window(box: Box, camera_pose: RigidTransform3, cam: CameraModel):
    """Image rows/cols that can see ``box``; None when it cannot appear in the image."""
    inv = camera_pose.inverse()
    pc = box.corners() @ inv.rotation.T + inv.translation
    z = pc[:, 2]
    if np.all(z <= _NEAR):
        return None
    pts = [pc[z > _NEAR]]
    if np.any(z <= _NEAR):
        # clip edges crossing the near plane so the window covers only the visible part
        cut = []
        for a, b in _BOX_EDGES:
            za, zb = z[a], z[b]
            if (za > _NEAR) != (zb > _NEAR):
                t = (_NEAR - za) / (zb - za)
                cut.append(pc[a] + t * (pc[b] - pc[a]))
        pts.append(np.array(cut).reshape(-1, 3))
    p = np.vstack(pts)
    u = cam.fx * p[:, 0] / p[:, 2] + cam.cx
    v = cam.fy * p[:, 1] / p[:, 2] + cam.cy
    u0, u1 = max(int(math.floor(u.min())), 0), min(int(math.ceil(u.max())) + 1, cam.width)
    v0, v1 = max(int(math.floor(v.min())), 0), min(int(math.ceil(v.max())) + 1, cam.height)
    if u0 >= u1 or v0 >= v1:
        return None
    return slice(v0, v1), slice(u0, u1)


def _box_depth(box: Box, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Ray parameter of the first entry into ``box`` (inf on miss) for world rays."""
    rinv = rot_z(box.yaw).T
    o = rinv @ (origin - np.asarray(box.center))
    d = dirs @ rinv.T
    half = np.asarray(box.half)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
    lo = np.fmin(t1, t2)
    hi = np.fmax(t1, t2)
    # axis-parallel rays: inside the slab -> unbounded, outside -> miss
    parallel = d == 0
    if parallel.any():
        inside = np.abs(o) <= half
        lo = np.where(parallel, np.where(inside, -np.inf, np.inf), lo)
        hi = np.where(parallel, np.where(inside, np.inf, -np.inf), hi)
    tmin = lo.max(axis=-1)
    tmax = hi.min(axis=-1)
    hit = (tmax >= tmin) & (tmin > 0)
    return np.where(hit, tmin, np.inf)


@dataclass
class _RenderLayers:
    depth: np.ndarray                  # nearest z-depth, inf on miss
    owner: np.ndarray                  # index into owners, -1 on miss
    owners: list
    own_depth: dict                    # owner -> (window, z-depth of that owner alone)


def _render_layers(scene: SceneDescription, camera_pose: RigidTransform3, cam: CameraModel) -> _RenderLayers:
    world_rays = _camera_rays(cam) @ camera_pose.rotation.T
    origin = np.asarray(camera_pose.translation)
    depth = np.full((cam.height, cam.width), np.inf)
    owner = np.full((cam.height, cam.width), -1, dtype=int)
    owners: list = []
    own_depth: dict = {}
    for box in scene.boxes():
        win = _pixel_window(box, camera_pose, cam)
        if win is None:
            continue
        t = _box_depth(box, origin, world_rays[win])
        if not np.isfinite(t).any():
            continue
        if box.owner not in own_depth:
            owners.append(box.owner)
        idx = owners.index(box.owner)
        prev = own_depth.get(box.owner)
        own_depth[box.owner] = _merge_window(prev, win, t)
        sub_d = depth[win]
        closer = t < sub_d
        sub_d[closer] = t[closer]
        owner[win][closer] = idx
    return _RenderLayers(depth, owner, owners, own_depth)


def _merge_window(prev, win, t):
    if prev is None:
        return win, t
    (pr, pc), pt = prev
    r0, r1 = min(pr.start, win[0].start), max(pr.stop, win[0].stop)
    c0, c1 = min(pc.start, win[1].start), max(pc.stop, win[1].stop)
    out = np.full((r1 - r0, c1 - c0), np.inf)
    out[pr.start - r0:pr.stop - r0, pc.start - c0:pc.stop - c0] = pt
    sub = out[win[0].start - r0:win[0].stop - r0, win[1].start - c0:win[1].stop - c0]
    np.minimum(sub, t, out=sub)
    return (slice(r0, r1), slice(c0, c1)), out


def render_depth(scene: SceneDescription, camera_pose: RigidTransform3, cam: CameraModel,
                 noise_sigma: float = 0.0, seed: int = 0) -> DepthImage:
    """Z-depth image of ``scene`` seen from ``camera_pose`` (camera-to-world)."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    layers = _render_layers(scene, camera_pose, cam)
    return _to_depth_image(layers.depth, cam, noise_sigma, seed)


def _to_depth_image(z: np.ndarray, cam: CameraModel, noise_sigma: float, seed: int) -> DepthImage:
    valid = (z >= cam.depth_min) & (z <= cam.depth_max)
    out = np.where(valid, z, NO_RETURN)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        noisy = out + rng.normal(0.0, noise_sigma, size=out.shape)
        out = np.where(valid, np.clip(noisy, cam.depth_min, cam.depth_max), NO_RETURN)
    return DepthImage(cam.width, cam.height, out)


@dataclass(frozen=True)
class Detection:
    """Axis-aligned box ``(cx, cy, w, h)`` in pixels; pixel u spans [u - 0.5, u + 0.5]."""

    bbox: tuple
    class_label: str
    confidence: float = 1.0
    object_id: object = None

    def __post_init__(self):
        cx, cy, w, h = (float(b) for b in self.bbox)
        if w <= 0 or h <= 0:
            raise ValueError("bbox width and height must be positive")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")
        object.__setattr__(self, "bbox", (cx, cy, w, h))

    def corners(self):
        cx, cy, w, h = self.bbox
        return cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2

    def touches_border(self, cam: CameraModel, margin: float = 0.5) -> bool:
        x0, y0, x1, y1 = self.corners()
        return x0 <= -0.5 + margin or y0 <= -0.5 + margin or x1 >= cam.width - 0.5 - margin or y1 >= cam.height - 0.5 - margin


def oracle_detect(scene: SceneDescription, camera_pose: RigidTransform3, cam: CameraModel,
                  min_pixels: int = 50, seed: int = 0, bbox_sigma: float = 0.0) -> list[Detection]:
    """Ground-truth detections of every object with at least ``min_pixels`` visible pixels.

    Visibility comes from the depth buffer: a pixel belongs to an object when
    that object is the nearest surface there.  ``bbox_sigma`` jitters box
    centres and sizes with seeded Gaussian noise.
    """
    layers = _render_layers(scene, camera_pose, cam)
    return _detect_from_layers(scene, layers, cam, min_pixels, seed, bbox_sigma)


def _detect_from_layers(scene, layers: _RenderLayers, cam, min_pixels, seed, bbox_sigma) -> list[Detection]:
    rng = np.random.default_rng(seed)
    in_range = (layers.depth >= cam.depth_min) & (layers.depth <= cam.depth_max)
    out = []
    for obj in scene.objects:
        if obj.id not in layers.own_depth:
            continue
        idx = layers.owners.index(obj.id)
        visible = (layers.owner == idx) & in_range
        n_vis = int(visible.sum())
        if n_vis < min_pixels:
            continue
        _, own = layers.own_depth[obj.id]
        n_all = int(((own >= cam.depth_min) & (own <= cam.depth_max)).sum())
        rows = np.flatnonzero(visible.any(axis=1))
        cols = np.flatnonzero(visible.any(axis=0))
        x0, x1 = cols[0] - 0.5, cols[-1] + 0.5
        y0, y1 = rows[0] - 0.5, rows[-1] + 0.5
        if bbox_sigma > 0:
            x0, x1, y0, y1 = np.array([x0, x1, y0, y1]) + rng.normal(0.0, bbox_sigma, 4)
            x0, x1 = max(x0, -0.5), min(x1, cam.width - 0.5)
            y0, y1 = max(y0, -0.5), min(y1, cam.height - 0.5)
            if x1 - x0 < 1 or y1 - y0 < 1:
                continue
        bbox = ((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)
        out.append(Detection(bbox, obj.class_label, min(1.0, n_vis / max(n_all, 1)), obj.id))
    return out


def render_and_detect(scene, camera_pose, cam, noise_sigma=0.0, seed=0, min_pixels=50, bbox_sigma=0.0):
    """One ray cast producing both the depth image and oracle detections."""
    layers = _render_layers(scene, camera_pose, cam)
    depth = _to_depth_image(layers.depth, cam, noise_sigma, seed)
    return depth, _detect_from_layers(scene, layers, cam, min_pixels, seed, bbox_sigma)


# --------------------------------------------------------------------------- trajectories

def sample_trajectory(waypoints, speed: float, dt: float, pose_noise=(0.0, 0.0), seed: int = 0,
                      turn_rate: float = 1.0) -> list[tuple[float, RobotPose2D]]:
    """Constant-speed poses every ``dt`` seconds along a polyline of waypoints.

    Heading follows the shortest arc between consecutive waypoint headings; a
    segment lasts long enough for both the translation at ``speed`` and the
    turn at ``turn_rate``.  ``pose_noise`` is (sigma_xy, sigma_theta).
    """
    waypoints = list(waypoints)
    if not waypoints:
        raise EmptyTrajectory("trajectory needs at least one waypoint")
    if speed <= 0 or dt <= 0 or turn_rate <= 0:
        raise ValueError("speed, dt and turn_rate must be positive")
    segments = []
    t0 = 0.0
    for a, b in zip(waypoints, waypoints[1:]):
        dtheta = normalize_angle(b.theta - a.theta)
        dur = max(math.hypot(b.x - a.x, b.y - a.y) / speed, abs(dtheta) / turn_rate)
        segments.append((t0, dur, a, b, dtheta))
        t0 += dur
    total = t0
    n = int(math.floor(total / dt + 1e-9))
    times = [k * dt for k in range(n + 1)]
    if total - times[-1] > 1e-9:
        times.append(total)

    rng = np.random.default_rng(seed)
    sxy, sth = pose_noise
    out = []
    seg = 0
    for t in times:
        if not segments:
            p = waypoints[0]
            x, y, th = p.x, p.y, p.theta
        else:
            while seg < len(segments) - 1 and t > segments[seg][0] + segments[seg][1] + 1e-12:
                seg += 1
            s0, dur, a, b, dth = segments[seg]
            f = 1.0 if dur == 0 else min(max((t - s0) / dur, 0.0), 1.0)
            x, y, th = a.x + f * (b.x - a.x), a.y + f * (b.y - a.y), a.theta + f * dth
        if sxy > 0 or sth > 0:
            x += rng.normal(0.0, sxy) if sxy > 0 else 0.0
            y += rng.normal(0.0, sxy) if sxy > 0 else 0.0
            th += rng.normal(0.0, sth) if sth > 0 else 0.0
        out.append((t, RobotPose2D(x, y, th)))
    return out
