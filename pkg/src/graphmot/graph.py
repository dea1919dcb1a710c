"""Dynamic spatiotemporal detection graph: gating, rolling window, labels."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Optional, Sequence


class GraphError(ValueError):
    pass


class FrameOrderError(GraphError):
    """Raised when frames arrive out of order; input is never reordered silently."""


@dataclass(frozen=True)
class Detection:
    """One detector output: bbox in pixels, world point in meters (NaN if unknown)."""

    id: int
    camera: int
    frame: int
    bbox: tuple[float, float, float, float]
    world: tuple[float, float, float] = (math.nan, math.nan, math.nan)
    confidence: float = 1.0
    gt_identity: Optional[int] = None

    def __post_init__(self):
        x1, y1, x2, y2 = self.bbox
        if not (x1 < x2 and y1 < y2):
            raise GraphError(f"detection {self.id}: degenerate bbox {self.bbox}")
        if self.frame < 0:
            raise GraphError(f"detection {self.id}: negative frame")
        if not 0.0 <= self.confidence <= 1.0:
            raise GraphError(f"detection {self.id}: confidence outside [0,1]")

    @property
    def has_world(self) -> bool:
        return not math.isnan(self.world[0])

    @property
    def base_point(self) -> tuple[float, float]:
        """Bottom-center pixel of the bbox."""
        x1, _, x2, y2 = self.bbox
        return (x1 + x2) / 2.0, y2


class EdgeKind(str, Enum):
    TEMPORAL = "temporal"
    VIEW = "view"
    CONTEXTUAL = "contextual"
    CAMERA = "camera"


# (kind, src, dst); src/dst follow a fixed orientation so MLP inputs are
# deterministic: temporal = earlier frame first, view = lower camera first,
# contextual = lower id first, camera = camera index first.
EdgeKey = tuple[EdgeKind, int, int]


@dataclass(frozen=True)
class GraphConfig:
    w: int = 10
    fps: float = 10.0
    max_speed: float = 3.0
    max_view_dist: float = 1.0
    max_temporal_gap_train: int = 4
    max_temporal_gap_infer: int = 6
    context_radius: float = 2.0
    use_camera_vertices: bool = False
    image_width: int = 1280
    image_height: int = 720
    # pixel-space fallbacks used when detections carry no world coordinates
    pixel_speed_frac: float = 0.1
    pixel_radius_frac: float = 0.15

    def __post_init__(self):
        if self.w < 2:
            raise GraphError("window length must be >= 2")
        if self.max_temporal_gap_train >= self.w or self.max_temporal_gap_infer >= self.w:
            raise GraphError("temporal gaps must be < window length")
        if self.max_speed <= 0 or self.fps <= 0:
            raise GraphError("max_speed and fps must be positive")

    def gap(self, mode: str) -> int:
        if mode == "train":
            return self.max_temporal_gap_train
        if mode == "infer":
            return self.max_temporal_gap_infer
        raise GraphError(f"unknown mode {mode!r}")


def world_distance(a: Detection, b: Detection) -> float:
    return math.dist(a.world, b.world)


def pixel_distance(a: Detection, b: Detection) -> float:
    return math.dist(a.base_point, b.base_point)


def temporal_gate(a: Detection, b: Detection, cfg: GraphConfig, mode: str) -> bool:
    """Same-camera pair across frames: gap and implied speed must be admissible."""
    dt = abs(a.frame - b.frame)
    if dt == 0 or dt > cfg.gap(mode):
        return False
    if a.has_world and b.has_world:
        return world_distance(a, b) / (dt / cfg.fps) <= cfg.max_speed
    return pixel_distance(a, b) / dt <= cfg.pixel_speed_frac * cfg.image_width


def view_gate(a: Detection, b: Detection, cfg: GraphConfig) -> bool:
    """Different-camera, same-frame pair: world points must be close."""
    if a.has_world and b.has_world:
        return world_distance(a, b) <= cfg.max_view_dist
    return pixel_distance(a, b) <= cfg.pixel_radius_frac * cfg.image_width


def context_gate(a: Detection, b: Detection, cfg: GraphConfig) -> bool:
    """Same-camera, same-frame pair: nearby detections share context."""
    if a.has_world and b.has_world:
        return world_distance(a, b) <= cfg.context_radius
    return pixel_distance(a, b) <= cfg.pixel_radius_frac * cfg.image_width


def make_edge_key(kind: EdgeKind, a: Detection, b: Detection) -> EdgeKey:
    if kind is EdgeKind.TEMPORAL:
        if a.frame == b.frame:
            raise GraphError("temporal edge endpoints share a frame")
        src, dst = (a, b) if a.frame < b.frame else (b, a)
    elif kind is EdgeKind.VIEW:
        if a.camera == b.camera:
            raise GraphError("view edge endpoints share a camera")
        src, dst = (a, b) if a.camera < b.camera else (b, a)
    elif kind is EdgeKind.CONTEXTUAL:
        if a.id == b.id:
            raise GraphError("self-edge")
        src, dst = (a, b) if a.id < b.id else (b, a)
    else:
        raise GraphError("camera edge keys are built by STGraph")
    return (kind, src.id, dst.id)


@dataclass
class GroundTruthLabels:
    edge_labels: dict[EdgeKey, int] = field(default_factory=dict)
    vertex_labels: dict[int, int] = field(default_factory=dict)


class STGraph:
    """Rolling-window graph of detections plus optional stationary camera vertices.

    Mutation is single-writer; traversal between mutations is read-only.
    """

    def __init__(self, config: GraphConfig, cameras: Sequence[int] = (), mode: str = "infer"):
        config.gap(mode)  # validates the mode string
        self.config = config
        self.mode = mode
        self.camera_vertices: tuple[int, ...] = (
            tuple(cameras) if config.use_camera_vertices else ()
        )
        self.vertices: dict[int, Detection] = {}
        self.edges: set[EdgeKey] = set()
        self._incident: dict[int, set[EdgeKey]] = {}
        self._frames: dict[int, list[int]] = {}
        self._max_id = -1

    # ------------------------------------------------------------------ info

    @property
    def window_frames(self) -> list[int]:
        return sorted(self._frames)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def edges_of_kind(self, kind: EdgeKind) -> Iterator[EdgeKey]:
        return (k for k in self.edges if k[0] is kind)

    def detections_in_frame(self, frame: int) -> list[Detection]:
        return [self.vertices[i] for i in self._frames.get(frame, [])]

    # ------------------------------------------------------------- mutation

    def add_frame(self, frame: int, dets: Sequence[Detection], mode: Optional[str] = None) -> list[EdgeKey]:
        """Append one frame of detections, creating all gated edges.

        Returns the created edge keys. Frames must arrive in strictly
        increasing order; an empty detection list still advances the window.
        """
        mode = mode or self.mode
        if self._frames and frame <= max(self._frames):
            raise FrameOrderError(
                f"frame {frame} is not newer than {max(self._frames)}; input must be ordered"
            )
        for d in dets:
            if d.frame != frame:
                raise GraphError(f"detection {d.id} carries frame {d.frame}, expected {frame}")
            if d.id <= self._max_id:
                raise GraphError(f"detection id {d.id} reused or not increasing")
            self._max_id = d.id

        created: list[EdgeKey] = []
        gap = self.config.gap(mode)
        candidate_frames = [f for f in self._frames if frame - f <= gap]
        for d in dets:
            for f in candidate_frames:
                for other_id in self._frames[f]:
                    other = self.vertices[other_id]
                    if other.camera == d.camera and temporal_gate(other, d, self.config, mode):
                        created.append(make_edge_key(EdgeKind.TEMPORAL, other, d))
        for i, d in enumerate(dets):
            for other in dets[:i]:
                if other.camera == d.camera:
                    if context_gate(other, d, self.config):
                        created.append(make_edge_key(EdgeKind.CONTEXTUAL, other, d))
                elif view_gate(other, d, self.config):
                    created.append(make_edge_key(EdgeKind.VIEW, other, d))
        for cam in self.camera_vertices:
            for d in dets:
                created.append((EdgeKind.CAMERA, cam, d.id))

        self._frames[frame] = [d.id for d in dets]
        for d in dets:
            self.vertices[d.id] = d
            self._incident[d.id] = set()
        for key in created:
            self._insert_edge(key)
        return created

    def _insert_edge(self, key: EdgeKey) -> None:
        self.edges.add(key)
        kind, src, dst = key
        if kind is not EdgeKind.CAMERA:
            self._incident[src].add(key)
        self._incident[dst].add(key)

    def remove_edges(self, keys: Iterable[EdgeKey]) -> None:
        for key in keys:
            if key not in self.edges:
                continue
            self.edges.discard(key)
            kind, src, dst = key
            if kind is not EdgeKind.CAMERA and src in self._incident:
                self._incident[src].discard(key)
            if dst in self._incident:
                self._incident[dst].discard(key)

    def prune_oldest(self) -> tuple[list[int], list[EdgeKey]]:
        """Drop the oldest frame when the window spans more than W timesteps.

        No-op (empty result) otherwise. Camera vertices persist.
        """
        if not self._frames:
            return [], []
        frames = self.window_frames
        if frames[-1] - frames[0] < self.config.w:
            return [], []
        oldest = frames[0]
        removed_vertices = self._frames.pop(oldest)
        removed_edges: set[EdgeKey] = set()
        for vid in removed_vertices:
            removed_edges |= self._incident.pop(vid)
            del self.vertices[vid]
        self.remove_edges(removed_edges)
        return removed_vertices, sorted(removed_edges)

    # --------------------------------------------------------------- labels

    def derive_labels(self) -> GroundTruthLabels:
        """Binary targets: classified edges are positive iff the endpoints share
        a (non-null) identity; vertices are positive iff they carry one."""
        labels = GroundTruthLabels()
        for vid, det in self.vertices.items():
            labels.vertex_labels[vid] = int(det.gt_identity is not None)
        for key in self.edges:
            kind, src, dst = key
            if kind is EdgeKind.TEMPORAL or kind is EdgeKind.VIEW:
                a, b = self.vertices[src], self.vertices[dst]
                same = a.gt_identity is not None and a.gt_identity == b.gt_identity
                labels.edge_labels[key] = int(same)
        return labels

    # --------------------------------------------------------------- export

    def to_json_dict(self, edge_probs=None, vertex_probs=None) -> dict:
        edge_probs = edge_probs or {}
        vertex_probs = vertex_probs or {}
        verts = []
        for vid in sorted(self.vertices):
            d = self.vertices[vid]
            entry = {
                "id": vid,
                "camera": d.camera,
                "frame": d.frame,
                "bbox": list(d.bbox),
                "world": list(d.world),
                "confidence": d.confidence,
            }
            if vid in vertex_probs:
                entry["prob"] = vertex_probs[vid]
            verts.append(entry)
        edges = []
        for key in sorted(self.edges, key=lambda k: (k[0].value, k[1], k[2])):
            entry = {"kind": key[0].value, "src": key[1], "dst": key[2]}
            if key in edge_probs:
                entry["prob"] = edge_probs[key]
            edges.append(entry)
        return {
            "window_frames": self.window_frames,
            "camera_vertices": list(self.camera_vertices),
            "vertices": verts,
            "edges": edges,
        }


def check_invariants(g: STGraph) -> None:
    """Exhaustive structural re-check; raises AssertionError on violation."""
    frames = g.window_frames
    if frames:
        assert frames[-1] - frames[0] < g.config.w, "window spans more than W timesteps"
    for key in g.edges:
        kind, src, dst = key
        if kind is EdgeKind.CAMERA:
            assert src in g.camera_vertices and dst in g.vertices
            continue
        assert src in g.vertices and dst in g.vertices, "dangling edge endpoint"
        a, b = g.vertices[src], g.vertices[dst]
        assert src != dst, "self-edge"
        if kind is EdgeKind.TEMPORAL:
            assert a.camera == b.camera and a.frame != b.frame
            assert temporal_gate(a, b, g.config, g.mode), "temporal gate violated"
        elif kind is EdgeKind.VIEW:
            assert a.camera != b.camera and a.frame == b.frame
            assert view_gate(a, b, g.config), "view gate violated"
        elif kind is EdgeKind.CONTEXTUAL:
            assert a.camera == b.camera and a.frame == b.frame
    seen = set()
    for kind, src, dst in g.edges:
        if kind is EdgeKind.CAMERA:
            continue  # camera indices and detection ids are separate namespaces
        pair = (kind, frozenset((src, dst)))
        assert pair not in seen, "duplicate edge for unordered pair"
        seen.add(pair)
