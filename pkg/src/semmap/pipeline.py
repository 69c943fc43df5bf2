"""Scenario runner: render -> detect -> track -> cloud -> plane -> map -> plan -> evaluate.

Frames are processed in trajectory order by a single worker, which is also the
only writer of the map state (grid, semantic layer, registry).
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cloud as pc
from .errors import ConfigError, NoPath, SchemaVersionError, SemMapError, StartOrGoalLethal
from .geometry import CameraModel, RobotPose2D, apply_transform, camera_mount, camera_pose_in_map
from .plane import RansacParams, footprint_hull, project_inliers_to_map, ransac_plane
from .planner import PlanRequest, plan, validate_path, write_paths_csv
from .polygon import polygon_centroid
from .scene import Detection, SceneDescription, load_scene, object_footprint, oracle_detect, render_depth, \
    sample_trajectory
from .semantic_map import (GridGeometry, LogOddsParams, ObjectRegistry, OccupancyGrid, SemanticLayer,
                           compose_costmap, depth_to_scan, integrate_scan, observation_from_footprint, save_map,
                           stamp_semantic_footprint, write_pgm)
from .tracking import NoiseModel, Tracker, TrackerParams

log = logging.getLogger(__name__)

CONFIG_SCHEMA = 1
REPORT_SCHEMA = 1
DETECTIONS_SCHEMA = 1

STAGES = ("render", "detection", "tracking", "cloud", "plane", "mapping", "planning")

# classes whose dominant surface is not horizontal
_UPRIGHT_CLASSES = {"whiteboard"}


def _block(cls, data: dict | None, name: str):
    data = dict(data or {})
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in '{name}' block: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{name}' block: {exc}") from exc


@dataclass(frozen=True)
class CameraConfig:
    width: int = 640
    height: int = 480
    hfov_deg: float = 90.0
    vfov_deg: float = 58.0
    depth_min: float = 0.2
    depth_max: float = 8.0
    mount_height: float = 0.3
    mount_forward: float = 0.0
    mount_pitch_deg: float = 0.0
    noise_sigma: float = 0.0

    def model(self) -> CameraModel:
        return CameraModel.from_fov(self.width, self.height, self.hfov_deg, self.vfov_deg,
                                    depth_min=self.depth_min, depth_max=self.depth_max)

    def mount(self):
        return camera_mount(self.mount_height, self.mount_forward, math.radians(self.mount_pitch_deg))


@dataclass(frozen=True)
class TrajectoryConfig:
    waypoints: tuple = ()
    speed: float = 0.5
    dt: float = 0.2
    turn_rate: float = 0.5
    pose_noise: tuple = (0.0, 0.0)


@dataclass(frozen=True)
class DetectorConfig:
    type: str = "oracle"
    min_pixels: int = 50
    bbox_sigma: float = 0.0
    path: str | None = None


@dataclass(frozen=True)
class TrackerConfig:
    n_init: int = 3
    max_age: int = 5
    iou_min: float = 0.3
    sigma_px: float = 2.0

    def params(self) -> TrackerParams:
        return TrackerParams(self.n_init, self.max_age, self.iou_min, NoiseModel(std_measurement_px=self.sigma_px))


@dataclass(frozen=True)
class CloudConfig:
    epsilon: float = 0.10
    min_cluster_size: int = 30
    stride: int = 2
    bin_size: float = 0.05
    gap_bins: int = 2


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 200
    inlier_threshold: float = 0.01
    min_inlier_ratio: float = 0.4
    min_normal_z: float = 0.7


@dataclass(frozen=True)
class MapConfig:
    resolution: float = 0.05
    l_occ: float = 0.85
    l_free: float = -0.4
    l_min: float = -7.0
    l_max: float = 7.0
    sigma: float = 0.15
    merge_radius: float = 0.5
    scan_band: int = 0
    min_confidence: float = 0.5
    skip_truncated: bool = True


@dataclass(frozen=True)
class PlannerConfig:
    start: tuple = (0.0, 0.0)
    goal: tuple = (1.0, 0.0)
    lethal_threshold: int = 200
    cost_weight: float = 3.0
    robot_radius: float = 0.25
    flight_height: float = 0.8
    vertical_half_extent: float = 0.10


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    scene_path: Path
    seed: int
    camera: CameraConfig = field(default_factory=CameraConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    cloud: CloudConfig = field(default_factory=CloudConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    map: MapConfig = field(default_factory=MapConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    output: Path | None = None


def config_from_dict(data: dict, base_dir=".") -> ScenarioConfig:
    base = Path(base_dir)
    if data.get("schema") != CONFIG_SCHEMA:
        raise SchemaVersionError(f"unsupported config schema {data.get('schema')!r}, expected {CONFIG_SCHEMA}")
    if "seed" not in data:
        raise ConfigError("config must set 'seed'")
    if "scene" not in data:
        raise ConfigError("config must name a 'scene' file")
    scene_path = base / data["scene"]
    if not scene_path.is_file():
        raise ConfigError(f"scene file not found: {scene_path}")
    det = _block(DetectorConfig, data.get("detector"), "detector")
    if det.type not in ("oracle", "external"):
        raise ConfigError(f"unknown detector type {det.type!r}")
    if det.type == "external":
        if not det.path:
            raise ConfigError("external detector needs a 'path'")
        det_path = base / det.path
        if not det_path.is_file():
            raise ConfigError(f"detections file not found: {det_path}")
        det = dataclasses.replace(det, path=str(det_path))
    traj = _block(TrajectoryConfig, data.get("trajectory"), "trajectory")
    if not traj.waypoints:
        raise ConfigError("trajectory needs at least one waypoint")
    traj = dataclasses.replace(traj, waypoints=tuple(tuple(w) for w in traj.waypoints),
                               pose_noise=tuple(traj.pose_noise))
    pl = _block(PlannerConfig, data.get("planner"), "planner")
    pl = dataclasses.replace(pl, start=tuple(pl.start), goal=tuple(pl.goal))
    out = data.get("output")
    return ScenarioConfig(
        name=data.get("name", scene_path.stem),
        scene_path=scene_path,
        seed=int(data["seed"]),
        camera=_block(CameraConfig, data.get("camera"), "camera"),
        trajectory=traj,
        detector=det,
        tracker=_block(TrackerConfig, data.get("tracker"), "tracker"),
        cloud=_block(CloudConfig, data.get("cluster", data.get("cloud")), "cluster"),
        ransac=_block(RansacConfig, data.get("ransac"), "ransac"),
        map=_block(MapConfig, data.get("map"), "map"),
        planner=pl,
        output=(base / out) if out else None,
    )


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data, path.parent)


def load_external_detections(path) -> dict[int, list[Detection]]:
    """Per-frame detections from ``{"schema": 1, "frames": [{"frame", "detections"}]}``."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if data.get("schema") != DETECTIONS_SCHEMA:
        raise SchemaVersionError(f"{path}: unsupported detections schema {data.get('schema')!r}")
    out: dict[int, list[Detection]] = {}
    try:
        for fr in data["frames"]:
            dets = [Detection(tuple(d["bbox"]), d["class"], float(d.get("confidence", 1.0)))
                    for d in fr["detections"]]
            out[int(fr["frame"])] = dets
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed detections ({exc})") from exc
    return out


def _truncated(det: Detection, cam: CameraModel) -> bool:
    # the bottom edge is allowed: with the camera above a surface only supports get cut there
    x0, y0, x1, _ = det.corners()
    return x0 <= 0.0 or y0 <= 0.0 or x1 >= cam.width - 1.0


class _Timer:
    def __init__(self):
        self.totals = defaultdict(float)
        self.counts = defaultdict(int)

    def add(self, stage: str, seconds: float):
        self.totals[stage] += seconds
        self.counts[stage] += 1

    def per_frame_ms(self, frames: int) -> dict:
        return {s: 1000.0 * self.totals.get(s, 0.0) / max(frames, 1) for s in STAGES}


def _observe_track(track, depth, cam, cam_pose, cfg: ScenarioConfig, seed: int, dump_dir, frame):
    """Map-frame footprint observation for one tracked detection."""
    det = track.last_detection
    params = pc.ClusterParams(cfg.cloud.epsilon, cfg.cloud.min_cluster_size, cfg.cloud.stride)
    t0 = time.perf_counter()
    roi = pc.extract_roi_cloud(depth, det.bbox, cam, params.stride)
    fg = pc.remove_background(roi, cfg.cloud.bin_size, cfg.cloud.gap_bins)
    clusters = pc.euclidean_cluster(fg, params)
    obj_cam = fg.subset(pc.largest_cluster(fg, clusters))
    obj_map = obj_cam.transformed(cam_pose, pc.MAP)
    height = pc.object_height(obj_map)
    t1 = time.perf_counter()
    if dump_dir is not None:
        pc.write_xyz(dump_dir / f"frame{frame:04d}_track{track.track_id}.xyz", obj_map)
    rp = RansacParams(cfg.ransac.iterations, cfg.ransac.inlier_threshold, cfg.ransac.min_inlier_ratio, seed,
                      0.0 if track.class_label in _UPRIGHT_CLASSES else cfg.ransac.min_normal_z)
    _, inliers = ransac_plane(obj_map, rp)
    flat = project_inliers_to_map(obj_map.subset(inliers))
    hull = footprint_hull(flat)
    t2 = time.perf_counter()
    obs = observation_from_footprint(track.class_label, hull, height, det.confidence)
    return obs, t1 - t0, t2 - t1


def _gt_errors(registry: ObjectRegistry, scene: SceneDescription) -> list[dict]:
    rows = []
    for rec in registry:
        cands = [o for o in scene.objects if o.class_label == rec.class_label]
        if not cands:
            rows.append({"id": rec.object_id, "class": rec.class_label, "gt_id": None,
                         "position_error": None, "height_error": None})
            continue
        dists = [float(np.hypot(*(polygon_centroid(object_footprint(o)) - rec.position))) for o in cands]
        k = int(np.argmin(dists))
        gt = cands[k]
        rows.append({"id": rec.object_id, "class": rec.class_label, "gt_id": gt.id,
                     "position_error": dists[k], "height_error": abs(rec.height - gt.shape.top_height)})
    return rows


def _plan_and_check(costmap, cfg: ScenarioConfig, scene) -> tuple[dict, object]:
    p = cfg.planner
    req = PlanRequest(p.start, p.goal, p.lethal_threshold, p.cost_weight, p.robot_radius, p.flight_height)
    try:
        path = plan(costmap, req)
    except (NoPath, StartOrGoalLethal) as exc:
        return {"status": type(exc).__name__, "collided": None, "object": None, "index": None,
                "cost": None, "length": None}, None
    rep = validate_path(path, scene, p.flight_height, p.robot_radius, p.vertical_half_extent)
    return {"status": "ok", "collided": rep.collided, "object": rep.object_id, "index": rep.index,
            "cost": path.cost, "length": path.length()}, path


@dataclass
class RunResult:
    report: dict
    grid: OccupancyGrid
    semantic: SemanticLayer
    registry: ObjectRegistry
    paths: dict
    out_dir: Path | None


def run_pipeline(cfg: ScenarioConfig, out_dir=None, metric_only: bool = False, trace: bool = False,
                 dump_clouds: bool = False) -> RunResult:
    """Run one scenario end to end and, if ``out_dir`` is given, write its artifacts."""
    scene = load_scene(cfg.scene_path)
    cam = cfg.camera.model()
    mount = cfg.camera.mount()
    out = Path(out_dir) if out_dir is not None else cfg.output
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    dump_dir = None
    if dump_clouds and out is not None:
        dump_dir = out / "clouds"
        dump_dir.mkdir(exist_ok=True)

    geom = GridGeometry.covering(scene.bounds, cfg.map.resolution)
    m = cfg.map
    grid = OccupancyGrid.empty(geom, LogOddsParams(m.l_occ, m.l_free, m.l_min, m.l_max))
    semantic = SemanticLayer.empty(geom)
    registry = ObjectRegistry(m.merge_radius)
    tracker = Tracker(cfg.tracker.params())
    external = load_external_detections(cfg.detector.path) if cfg.detector.type == "external" else None

    t = cfg.trajectory
    poses = sample_trajectory([RobotPose2D(*w) for w in t.waypoints], t.speed, t.dt, t.pose_noise,
                              cfg.seed, t.turn_rate)
    timer = _Timer()
    trace_rows = []
    dropped = 0
    n_obs = 0
    for frame, (_, pose) in enumerate(poses):
        cam_pose = camera_pose_in_map(pose, mount)
        fseed = cfg.seed * 100003 + frame
        t0 = time.perf_counter()
        depth = render_depth(scene, cam_pose, cam, cfg.camera.noise_sigma, fseed)
        timer.add("render", time.perf_counter() - t0)

        t0 = time.perf_counter()
        sensor = apply_transform(cam_pose, np.zeros(3))
        sensor_pose = RobotPose2D(float(sensor[0]), float(sensor[1]), pose.theta)
        try:
            integrate_scan(grid, sensor_pose, depth_to_scan(depth, cam, m.scan_band))
        except SemMapError as exc:
            log.warning("frame %d: scan dropped (%s)", frame, exc)
        timer.add("mapping", time.perf_counter() - t0)

        if metric_only:
            continue

        t0 = time.perf_counter()
        if external is not None:
            dets = external.get(frame, [])
        else:
            dets = oracle_detect(scene, cam_pose, cam, cfg.detector.min_pixels, fseed, cfg.detector.bbox_sigma)
        timer.add("detection", time.perf_counter() - t0)
        t0 = time.perf_counter()
        confirmed = tracker.step(dets, frame)
        timer.add("tracking", time.perf_counter() - t0)

        cloud_s = plane_s = map_s = 0.0
        for trk in confirmed:
            if trace:
                x, y, w, h = trk.state.bbox
                trace_rows.append([frame, trk.track_id, trk.class_label, f"{x:.2f}", f"{y:.2f}", f"{w:.2f}", f"{h:.2f}"])
            if not trk.matched:
                continue
            det = trk.last_detection
            if det.confidence < m.min_confidence or (m.skip_truncated and _truncated(det, cam)):
                continue
            try:
                obs, c_s, p_s = _observe_track(trk, depth, cam, cam_pose, cfg, fseed + 7919 * trk.track_id,
                                               dump_dir, frame)
            except SemMapError as exc:
                dropped += 1
                log.info("frame %d track %d dropped: %s", frame, trk.track_id, exc)
                continue
            cloud_s += c_s
            plane_s += p_s
            t0 = time.perf_counter()
            oid = registry.register(obs)
            try:
                stamp_semantic_footprint(semantic, registry.get(oid), m.sigma)
            except SemMapError as exc:
                log.warning("frame %d: footprint of object %d not stamped (%s)", frame, oid, exc)
            map_s += time.perf_counter() - t0
            n_obs += 1
        timer.add("cloud", cloud_s)
        timer.add("plane", plane_s)
        timer.add("mapping", map_s)

    t0 = time.perf_counter()
    costmap = compose_costmap(grid, semantic)
    metric_res, metric_path = _plan_and_check(grid, cfg, scene)
    if metric_only:
        semantic_res, semantic_path = {"status": "skipped"}, None
    else:
        semantic_res, semantic_path = _plan_and_check(costmap, cfg, scene)
    timer.add("planning", time.perf_counter() - t0)

    frames = len(poses)
    report = {
        "schema": REPORT_SCHEMA,
        "scenario": cfg.name,
        "seed": cfg.seed,
        "frames": frames,
        "observations": n_obs,
        "dropped_observations": dropped,
        "objects": _gt_errors(registry, scene),
        "paths": {"metric": metric_res, "semantic": semantic_res},
        "timings_ms": timer.per_frame_ms(frames),
    }
    paths = {"metric": metric_path, "semantic": semantic_path}
    if out is not None:
        save_map(out, grid, None if metric_only else semantic, None if metric_only else registry)
        if not metric_only:
            write_pgm(out / "costmap.pgm", np.flipud(costmap.cells))
        write_paths_csv(out / "paths.csv", paths)
        (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
        if trace:
            with open(out / "tracks.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["frame", "id", "class", "x", "y", "w", "h"])
                w.writerows(trace_rows)
    return RunResult(report, grid, semantic, registry, paths, out)


# --------------------------------------------------------------------------- reports

EVAL_COLUMNS = ["scenario", "objects", "max_position_error_m", "max_height_error_m", "metric_collided",
                "semantic_collided", "detect_track_ms", "cloud_plane_ms"]


def load_report(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return data


def eval_reports(paths) -> list[dict]:
    """One summary row per report; all reports must share one schema version."""
    paths = list(paths)
    if not paths:
        raise ConfigError("eval needs at least one report")
    reports = [load_report(p) for p in paths]
    versions = {r.get("schema") for r in reports}
    if len(versions) != 1:
        raise SchemaVersionError(f"reports mix schema versions {sorted(map(str, versions))}")
    if versions != {REPORT_SCHEMA}:
        raise SchemaVersionError(f"unsupported report schema {versions.pop()!r}")
    rows = []
    for r in reports:
        pos = [o["position_error"] for o in r["objects"] if o["position_error"] is not None]
        hgt = [o["height_error"] for o in r["objects"] if o["height_error"] is not None]
        tm = r["timings_ms"]
        rows.append({
            "scenario": r["scenario"],
            "objects": len(r["objects"]),
            "max_position_error_m": max(pos) if pos else None,
            "max_height_error_m": max(hgt) if hgt else None,
            "metric_collided": r["paths"]["metric"].get("collided"),
            "semantic_collided": r["paths"]["semantic"].get("collided"),
            "detect_track_ms": tm["detection"] + tm["tracking"],
            "cloud_plane_ms": tm["cloud"] + tm["plane"],
        })
    return rows
