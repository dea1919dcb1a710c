"""Synthetic multi-camera pedestrian scenes with controllable corruption.

People are vertical cylinders following waypoints on a flat ground plane;
walls are extruded occluders. Detections are cylinder projections with
configurable bbox/world jitter, misses, and uniformly scattered false
positives, so the whole pipeline can be trained and scored reproducibly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io as gio
from .geometry import (
    CameraModel,
    NoIntersectionError,
    TriMesh,
    look_at_camera,
    pixel_ray,
    ray_ground,
    save_calibration,
    visibility,
)
from .graph import Detection

DEFAULT_GATE_SPEED = 3.0  # m/s; the tracker's physical speed gate


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    name: str = "custom"
    ground: tuple[float, float, float, float] = (-6.0, 6.0, -6.0, 6.0)  # xmin,xmax,ymin,ymax
    walls: tuple[tuple[float, float, float, float], ...] = ()  # (x1,y1,x2,y2) segments
    wall_height: float = 2.5
    n_cameras: int = 3
    camera_distance: float = 10.0
    camera_height: float = 2.8
    camera_angle_offset: float = 0.4
    camera_positions: Optional[tuple[tuple[float, float, float], ...]] = None
    image_width: int = 1280
    image_height: int = 720
    focal: float = 900.0
    fps: float = 10.0
    duration: float = 60.0
    n_people: int = 8
    speed_range: tuple[float, float] = (0.5, 2.0)
    waypoint_churn: float = 0.02
    person_radius: float = 0.3
    person_height: float = 1.7
    bbox_jitter: float = 0.0  # px std
    world_jitter: float = 0.0  # m std
    miss_rate: float = 0.0
    fp_rate: float = 0.0  # expected false positives per frame per camera
    conf_true: tuple[float, float] = (0.88, 0.06)
    conf_fp: tuple[float, float] = (0.45, 0.18)
    gate_speed: float = DEFAULT_GATE_SPEED

    def __post_init__(self):
        if self.speed_range[1] > 0.8 * self.gate_speed:
            raise SceneError("walker speeds must stay below 0.8x the speed gate")
        if self.speed_range[0] <= 0 or self.speed_range[0] > self.speed_range[1]:
            raise SceneError("bad speed range")
        if self.fps <= 0 or self.duration <= 0 or self.n_people < 1:
            raise SceneError("fps, duration and n_people must be positive")
        x0, x1, y0, y1 = self.ground
        if x0 >= x1 or y0 >= y1:
            raise SceneError("degenerate ground extent")

    @property
    def n_frames(self) -> int:
        return round(self.duration * self.fps)

    @property
    def bounds(self) -> tuple[tuple[float, float], ...]:
        x0, x1, y0, y1 = self.ground
        return ((x0 - 1.0, x1 + 1.0), (y0 - 1.0, y1 + 1.0), (0.0, 3.0))


@dataclass
class SimOutput:
    config: SceneConfig
    cameras: list[CameraModel]
    mesh: Optional[TriMesh]
    detections: list[Detection]
    gt3d: dict[int, dict[int, tuple[float, float, float]]]
    gt2d: list[tuple[int, int, int, float, float, float, float]]
    seed: int

    def frames(self) -> list[tuple[int, list[Detection]]]:
        return gio.group_by_frame(self.detections, first=0, last=self.config.n_frames - 1)

    def scene_meta(self) -> dict:
        return {
            "config": asdict(self.config),
            "seed": self.seed,
            "n_frames": self.config.n_frames,
            "n_cameras": self.config.n_cameras,
            "fps": self.config.fps,
            "image_width": self.config.image_width,
            "image_height": self.config.image_height,
            "bounds": [list(b) for b in self.config.bounds],
            "has_mesh": self.mesh is not None,
        }

    def write(self, outdir: str | Path) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        gio.write_detections(outdir / "detections.csv", self.detections)
        rows = [(f, pid, *pt) for f, objs in self.gt3d.items() for pid, pt in objs.items()]
        gio.write_trajectories_3d(outdir / "gt3d.csv", rows, id_col="gt_id")
        gio.write_gt_boxes(outdir / "gt2d.csv", self.gt2d)
        save_calibration(outdir / "calibration.json", self.cameras)
        if self.mesh is not None:
            self.mesh.to_obj(outdir / "walls.obj")
        gio.dump_json(outdir / "scene.json", self.scene_meta())


def walls_to_mesh(walls: Sequence[tuple[float, float, float, float]], height: float) -> Optional[TriMesh]:
    if not walls:
        return None
    verts, tris = [], []
    for x1, y1, x2, y2 in walls:
        base = len(verts)
        verts += [(x1, y1, 0.0), (x2, y2, 0.0), (x2, y2, height), (x1, y1, height)]
        tris += [(base, base + 1, base + 2), (base, base + 2, base + 3)]
    return TriMesh(np.array(verts), np.array(tris, dtype=np.int64))


def place_cameras(cfg: SceneConfig) -> list[CameraModel]:
    K = np.array([
        [cfg.focal, 0.0, cfg.image_width / 2.0],
        [0.0, cfg.focal, cfg.image_height / 2.0],
        [0.0, 0.0, 1.0],
    ])
    cams = []
    if cfg.camera_positions is not None:
        positions = [np.asarray(p, dtype=float) for p in cfg.camera_positions]
        if len(positions) != cfg.n_cameras:
            raise SceneError("camera_positions length must equal n_cameras")
    else:
        positions = []
        for i in range(cfg.n_cameras):
            ang = cfg.camera_angle_offset + 2 * math.pi * i / cfg.n_cameras
            positions.append(np.array([
                cfg.camera_distance * math.cos(ang),
                cfg.camera_distance * math.sin(ang),
                cfg.camera_height,
            ]))
    for i, pos in enumerate(positions):
        cams.append(look_at_camera(f"cam{i}", pos, (0.0, 0.0, 0.0), K,
                                   cfg.image_width, cfg.image_height))
    for cam in cams:
        _check_ground_coverage(cam, cfg)
    return cams


def _check_ground_coverage(cam: CameraModel, cfg: SceneConfig) -> None:
    x0, x1, y0, y1 = cfg.ground
    visible = 0
    for gx in np.linspace(x0, x1, 15):
        for gy in np.linspace(y0, y1, 15):
            u, v, depth = cam.project(np.array([gx, gy, 0.0]))
            if depth > 0 and cam.in_image(u, v):
                visible += 1
    if visible == 0:
        raise SceneError(f"{cam.name} sees no ground area")


def cylinder_bbox(cam: CameraModel, center_xy, radius: float, height: float):
    """Project a person cylinder to (x1,y1,x2,y2); the bbox base point is the
    exact projection of the ground point. None when not projectable."""
    x, y = float(center_xy[0]), float(center_xy[1])
    feet = np.array([x, y, 0.0])
    head = np.array([x, y, height])
    uf, vf, df = cam.project(feet)
    uh, vh, dh = cam.project(head)
    if df <= 0.2 or dh <= 0.2 or vh >= vf:
        return None
    to_cam = cam.position[:2] - np.array([x, y])
    norm = np.linalg.norm(to_cam)
    if norm < 1e-6:
        return None
    right = np.array([-to_cam[1], to_cam[0]]) / norm
    half_width = 0.0
    for z in (0.0, height):
        for sign in (-1.0, 1.0):
            p = np.array([x + sign * radius * right[0], y + sign * radius * right[1], z])
            u, _, d = cam.project(p)
            if d <= 0.0:
                return None
            half_width = max(half_width, abs(u - uf))
    if half_width < 1.0:
        half_width = 1.0
    return uf - half_width, vh, uf + half_width, vf


class _Walker:
    def __init__(self, rng, cfg: SceneConfig):
        x0, x1, y0, y1 = cfg.ground
        margin = 0.3
        self.pos = np.array([rng.uniform(x0 + margin, x1 - margin),
                             rng.uniform(y0 + margin, y1 - margin)])
        self.speed = rng.uniform(*cfg.speed_range)
        self.cfg = cfg
        self.waypoint = self._new_waypoint(rng)

    def _new_waypoint(self, rng):
        x0, x1, y0, y1 = self.cfg.ground
        margin = 0.3
        return np.array([rng.uniform(x0 + margin, x1 - margin),
                         rng.uniform(y0 + margin, y1 - margin)])

    def step(self, rng):
        if rng.uniform() < self.cfg.waypoint_churn:
            self.waypoint = self._new_waypoint(rng)
        to_wp = self.waypoint - self.pos
        dist = np.linalg.norm(to_wp)
        step_len = self.speed / self.cfg.fps
        if dist <= step_len:
            self.pos = self.waypoint.copy()
            self.waypoint = self._new_waypoint(rng)
        else:
            self.pos = self.pos + to_wp / dist * step_len


def _confidence(rng, mean_std) -> float:
    mean, std = mean_std
    return float(np.clip(rng.normal(mean, std), 0.05, 0.999))


def simulate(cfg: SceneConfig, seed: int) -> SimOutput:
    """Fully seeded scene generation; identical seeds give identical output."""
    rng = np.random.default_rng(seed)
    cameras = place_cameras(cfg)
    mesh = walls_to_mesh(cfg.walls, cfg.wall_height)
    walkers = [_Walker(rng, cfg) for _ in range(cfg.n_people)]

    detections: list[Detection] = []
    gt3d: dict[int, dict[int, tuple[float, float, float]]] = {}
    gt2d: list[tuple[int, int, int, float, float, float, float]] = []
    next_id = 0

    for frame in range(cfg.n_frames):
        if frame > 0:
            for w in walkers:
                w.step(rng)
        gt3d[frame] = {pid: (float(w.pos[0]), float(w.pos[1]), 0.0)
                       for pid, w in enumerate(walkers)}
        for cam_idx, cam in enumerate(cameras):
            for pid, w in enumerate(walkers):
                feet = np.array([w.pos[0], w.pos[1], 0.0])
                box = cylinder_bbox(cam, w.pos, cfg.person_radius, cfg.person_height)
                if box is None:
                    continue
                u_base, v_base = (box[0] + box[2]) / 2.0, box[3]
                if not cam.in_image(u_base, v_base):
                    continue
                if not visibility(cam, feet, mesh):
                    continue  # occluded ground truth is always a miss
                gt2d.append((frame, cam_idx, pid, *box))
                if rng.uniform() < cfg.miss_rate:
                    continue
                d = _make_detection(rng, cfg, cam, cam_idx, frame, next_id, box,
                                    gt_identity=pid, conf_model=cfg.conf_true)
                if d is not None:
                    detections.append(d)
                    next_id += 1
            if cfg.fp_rate > 0:
                for _ in range(rng.poisson(cfg.fp_rate)):
                    d = _make_false_positive(rng, cfg, cam, cam_idx, frame, next_id, mesh)
                    if d is not None:
                        detections.append(d)
                        next_id += 1
    return SimOutput(config=cfg, cameras=cameras, mesh=mesh, detections=detections,
                     gt3d=gt3d, gt2d=gt2d, seed=seed)


def _make_detection(rng, cfg: SceneConfig, cam, cam_idx, frame, det_id, box,
                    gt_identity, conf_model) -> Optional[Detection]:
    x1, y1, x2, y2 = box
    if cfg.bbox_jitter > 0:
        x1, y1, x2, y2 = (v + rng.normal(0, cfg.bbox_jitter) for v in (x1, y1, x2, y2))
        x2 = max(x2, x1 + 2.0)
        y2 = max(y2, y1 + 2.0)
    try:
        origin, direction = pixel_ray(cam, (x1, y1, x2, y2))
        world = ray_ground(origin, direction)
    except NoIntersectionError:
        return None
    if cfg.world_jitter > 0:
        world = world + np.array([rng.normal(0, cfg.world_jitter),
                                  rng.normal(0, cfg.world_jitter), 0.0])
    return Detection(
        id=det_id, camera=cam_idx, frame=frame,
        bbox=(float(x1), float(y1), float(x2), float(y2)),
        world=(float(world[0]), float(world[1]), 0.0),
        confidence=_confidence(rng, conf_model),
        gt_identity=gt_identity,
    )


def _make_false_positive(rng, cfg: SceneConfig, cam, cam_idx, frame, det_id, mesh) -> Optional[Detection]:
    x0, x1, y0, y1 = cfg.ground
    for _ in range(40):
        p = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])
        scale = rng.uniform(0.8, 1.2)
        box = cylinder_bbox(cam, p, cfg.person_radius * scale, cfg.person_height * scale)
        if box is None:
            continue
        u_base, v_base = (box[0] + box[2]) / 2.0, box[3]
        if not cam.in_image(u_base, v_base):
            continue
        if not visibility(cam, np.array([p[0], p[1], 0.0]), mesh):
            continue
        return _make_detection(rng, cfg, cam, cam_idx, frame, det_id, box,
                               gt_identity=None, conf_model=cfg.conf_fp)
    return None


def difficulty_suite() -> list[SceneConfig]:
    """Fixed tiers used by the acceptance experiments (easy first)."""
    easy = SceneConfig(name="easy", n_people=5, duration=60.0)
    medium = SceneConfig(
        name="medium", n_people=8, duration=240.0,
        bbox_jitter=2.0, world_jitter=0.05, miss_rate=0.05,
    )
    hard = SceneConfig(
        name="hard", n_people=8, duration=120.0,
        walls=((-4.0, 1.0, -1.0, 2.5), (0.5, -2.5, 3.5, -1.0)),
        bbox_jitter=3.0, world_jitter=0.08, miss_rate=0.15, fp_rate=0.3,
    )
    return [easy, medium, hard]
