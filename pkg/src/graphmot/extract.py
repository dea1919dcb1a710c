"""Greedy trajectory extraction with a disjoint set and occupancy constraints.

Vertices below the confidence threshold are discarded; surviving classified
edges are processed in descending probability and merged whenever the two
trajectories share no (frame, camera) slot. A streaming wrapper keeps one
global disjoint set across window shifts and freezes labels once detections
leave the window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .graph import Detection, EdgeKey, EdgeKind, STGraph

COST_EPS = 1e-7


class ExtractError(ValueError):
    pass


@dataclass(frozen=True)
class ExtractConfig:
    tau_vertex: float = 0.5
    tau_edge: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.tau_vertex < 1.0 and 0.0 < self.tau_edge < 1.0):
            raise ExtractError("thresholds must lie strictly inside (0, 1)")


class TrajectorySet:
    """Disjoint set over detection ids with per-root (frame, camera) occupancy."""

    def __init__(self):
        self._parent: dict[int, int] = {}
        self._size: dict[int, int] = {}
        self._occupancy: dict[int, set[tuple[int, int]]] = {}
        self.processed_edges: set[EdgeKey] = set()

    def __contains__(self, det_id: int) -> bool:
        return det_id in self._parent

    def __len__(self) -> int:
        return len(self._parent)

    def add(self, det_id: int, frame: int, camera: int) -> None:
        if det_id in self._parent:
            return
        self._parent[det_id] = det_id
        self._size[det_id] = 1
        self._occupancy[det_id] = {(frame, camera)}

    def find(self, det_id: int) -> int:
        root = det_id
        while self._parent[root] != root:
            root = self._parent[root]
        while self._parent[det_id] != root:  # path compression
            self._parent[det_id], det_id = root, self._parent[det_id]
        return root

    def valid_merge(self, u: int, v: int) -> bool:
        """True iff merging cannot place two detections in one (frame, camera)."""
        ru, rv = self.find(u), self.find(v)
        if ru == rv:
            return True
        return self._occupancy[ru].isdisjoint(self._occupancy[rv])

    def union(self, u: int, v: int) -> bool:
        ru, rv = self.find(u), self.find(v)
        if ru == rv:
            return True
        if not self._occupancy[ru].isdisjoint(self._occupancy[rv]):
            return False
        if (self._size[ru], -ru) < (self._size[rv], -rv):
            ru, rv = rv, ru
        self._parent[rv] = ru
        self._size[ru] += self._size.pop(rv)
        self._occupancy[ru] |= self._occupancy.pop(rv)
        return True

    def occupancy(self, det_id: int) -> set[tuple[int, int]]:
        return set(self._occupancy[self.find(det_id)])

    def groups(self) -> list[list[int]]:
        by_root: dict[int, list[int]] = {}
        for det_id in self._parent:
            by_root.setdefault(self.find(det_id), []).append(det_id)
        return sorted((sorted(g) for g in by_root.values()), key=lambda g: g[0])

    def labels(self) -> dict[int, int]:
        """Contiguous trajectory labels, numbered by each group's lowest id."""
        out = {}
        for label, group in enumerate(self.groups()):
            for det_id in group:
                out[det_id] = label
        return out


def greedy_step(ts: TrajectorySet, edge_probs: dict[EdgeKey, float],
                vertex_probs: dict[int, float],
                det_meta: dict[int, tuple[int, int]], cfg: ExtractConfig) -> TrajectorySet:
    """Admit confident vertices, then merge unprocessed confident edges greedily.

    det_meta maps detection id -> (frame, camera). Ties in probability break on
    ascending (src, dst). Admission is permanent and each edge is attempted at
    most once.
    """
    for vid in sorted(det_meta):
        if vid not in ts and vertex_probs.get(vid, 0.0) > cfg.tau_vertex:
            frame, camera = det_meta[vid]
            ts.add(vid, frame, camera)
    ranked = [
        (key, p)
        for key, p in edge_probs.items()
        if p > cfg.tau_edge and key not in ts.processed_edges
        and key[1] in ts and key[2] in ts
    ]
    ranked.sort(key=lambda kp: (-kp[1], kp[0][1], kp[0][2]))
    for key, _ in ranked:
        ts.union(key[1], key[2])
        ts.processed_edges.add(key)
    return ts


def streaming_extract(ts: TrajectorySet, edge_probs: dict[EdgeKey, float],
                      vertex_probs: dict[int, float], g: STGraph,
                      cfg: ExtractConfig) -> TrajectorySet:
    """One online step over the current window.

    The disjoint set persists across steps; labels of pruned detections are
    frozen simply because nothing re-touches them.
    """
    meta = {vid: (d.frame, d.camera) for vid, d in g.vertices.items()}
    window_probs = {k: p for k, p in edge_probs.items()
                    if k in g.edges and k[0] in (EdgeKind.TEMPORAL, EdgeKind.VIEW)}
    return greedy_step(ts, window_probs, vertex_probs, meta, cfg)


def extract(edge_probs: dict[EdgeKey, float], vertex_probs: dict[int, float],
            g: STGraph, cfg: ExtractConfig) -> TrajectorySet:
    """Batch extraction of one scored graph (the single-window case)."""
    return streaming_extract(TrajectorySet(), edge_probs, vertex_probs, g, cfg)


def extract_scores(edge_probs: dict[EdgeKey, float], vertex_probs: dict[int, float],
                   det_meta: dict[int, tuple[int, int]], cfg: ExtractConfig) -> TrajectorySet:
    """Batch extraction directly from score maps (no graph required)."""
    return greedy_step(TrajectorySet(), edge_probs, vertex_probs, det_meta, cfg)


# ------------------------------------------------------------------ costs


def edge_cost(p: float, eps: float = COST_EPS) -> float:
    """Negative log-likelihood ratio; negative for p > 0.5."""
    p = min(max(p, eps), 1.0 - eps)
    return -math.log(p / (1.0 - p))


@dataclass
class CostGraph:
    costs: dict[EdgeKey, float] = field(default_factory=dict)

    @classmethod
    def from_probs(cls, edge_probs: dict[EdgeKey, float]) -> "CostGraph":
        return cls({k: edge_cost(edge_probs[k]) for k in sorted(edge_probs)})


def lower_bound(cg: CostGraph) -> float:
    """Sum of all negative edge costs: no feasible solution can cost less."""
    return sum(c for _, c in sorted(cg.costs.items()) if c < 0.0)


def solution_cost(labels: dict[int, int], edge_probs: dict[EdgeKey, float],
                  cfg: ExtractConfig) -> float:
    """Total cost of threshold-passing edges whose endpoints share a label."""
    total = 0.0
    for key in sorted(edge_probs):
        p = edge_probs[key]
        if p <= cfg.tau_edge:
            continue
        a, b = labels.get(key[1]), labels.get(key[2])
        if a is not None and a == b:
            total += edge_cost(p)
    return total


def optimality_gap(sol_cost: float, lb: float) -> Optional[float]:
    """Relative excess over the lower bound; None when the bound is zero."""
    if lb == 0.0:
        return None
    return (sol_cost - lb) / abs(lb)


def gap_report(labels: dict[int, int], edge_probs: dict[EdgeKey, float],
               cfg: ExtractConfig) -> dict:
    cg = CostGraph.from_probs(edge_probs)
    lb = lower_bound(cg)
    sol = solution_cost(labels, edge_probs, cfg)
    gap = optimality_gap(sol, lb)
    return {
        "solution_cost": sol,
        "lower_bound": lb,
        "gap": gap,
        "applicable": gap is not None,
    }


# ------------------------------------------------------------------ outputs


def trajectory_points_3d(labels: dict[int, int], dets: dict[int, Detection]):
    """Mean world point per (trajectory, frame) across cameras."""
    acc: dict[tuple[int, int], list[tuple[float, float, float]]] = {}
    for det_id, label in labels.items():
        d = dets[det_id]
        if d.has_world:
            acc.setdefault((d.frame, label), []).append(d.world)
    rows = []
    for (frame, label), pts in sorted(acc.items()):
        n = len(pts)
        rows.append((frame, label,
                     sum(p[0] for p in pts) / n,
                     sum(p[1] for p in pts) / n,
                     sum(p[2] for p in pts) / n))
    return rows


def trajectory_boxes_2d(labels: dict[int, int], dets: dict[int, Detection], camera: int):
    """Per-camera MOT rows (frame, traj, x1, y1, w, h, conf)."""
    rows = []
    for det_id, label in sorted(labels.items()):
        d = dets[det_id]
        if d.camera != camera:
            continue
        x1, y1, x2, y2 = d.bbox
        rows.append((d.frame, label, x1, y1, x2 - x1, y2 - y1, d.confidence))
    return rows
