"""CSV/JSON interchange formats shared across the pipeline."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .graph import Detection, EdgeKey, EdgeKind

DETECTION_HEADER = ["frame", "camera", "id", "x1", "y1", "x2", "y2", "conf", "wx", "wy", "wz", "gt_id"]


class FormatError(ValueError):
    pass


def write_detections(path: str | Path, dets: Iterable[Detection]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DETECTION_HEADER)
        for d in sorted(dets, key=lambda d: (d.frame, d.id)):
            writer.writerow(
                [
                    d.frame,
                    d.camera,
                    d.id,
                    f"{d.bbox[0]:.4f}",
                    f"{d.bbox[1]:.4f}",
                    f"{d.bbox[2]:.4f}",
                    f"{d.bbox[3]:.4f}",
                    f"{d.confidence:.6f}",
                    f"{d.world[0]:.6f}",
                    f"{d.world[1]:.6f}",
                    f"{d.world[2]:.6f}",
                    -1 if d.gt_identity is None else d.gt_identity,
                ]
            )


def read_detections(path: str | Path) -> list[Detection]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != DETECTION_HEADER:
            raise FormatError(f"{path}: expected header {','.join(DETECTION_HEADER)}")
        dets = []
        for row in reader:
            if not row:
                continue
            gt = int(row[11])
            dets.append(
                Detection(
                    id=int(row[2]),
                    camera=int(row[1]),
                    frame=int(row[0]),
                    bbox=(float(row[3]), float(row[4]), float(row[5]), float(row[6])),
                    world=(float(row[8]), float(row[9]), float(row[10])),
                    confidence=float(row[7]),
                    gt_identity=None if gt < 0 else gt,
                )
            )
    return sorted(dets, key=lambda d: (d.frame, d.id))


def group_by_frame(dets: Sequence[Detection], first: Optional[int] = None, last: Optional[int] = None) -> list[tuple[int, list[Detection]]]:
    """Frame-indexed view including empty frames between first and last."""
    by_frame: dict[int, list[Detection]] = {}
    for d in dets:
        by_frame.setdefault(d.frame, []).append(d)
    if not by_frame and first is None:
        return []
    lo = first if first is not None else min(by_frame)
    hi = last if last is not None else max(by_frame)
    return [(f, sorted(by_frame.get(f, []), key=lambda d: d.id)) for f in range(lo, hi + 1)]


def write_scores(path: str | Path, edge_probs: dict[EdgeKey, float], vertex_probs: dict[int, float]) -> None:
    """Score dump: one `kind,src,dst,prob` row per classified edge plus
    `vertex,id,prob` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "src", "dst", "prob"])
        for key in sorted(edge_probs, key=lambda k: (k[0].value, k[1], k[2])):
            writer.writerow([key[0].value, key[1], key[2], f"{edge_probs[key]:.9f}"])
        for vid in sorted(vertex_probs):
            writer.writerow(["vertex", vid, f"{vertex_probs[vid]:.9f}"])


def read_scores(path: str | Path) -> tuple[dict[EdgeKey, float], dict[int, float]]:
    edge_probs: dict[EdgeKey, float] = {}
    vertex_probs: dict[int, float] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["kind", "src", "dst", "prob"]:
            raise FormatError(f"{path}: bad scores header")
        for row in reader:
            if not row:
                continue
            if row[0] == "vertex":
                vertex_probs[int(row[1])] = float(row[2])
            else:
                edge_probs[(EdgeKind(row[0]), int(row[1]), int(row[2]))] = float(row[3])
    return edge_probs, vertex_probs


def write_assignments(path: str | Path, labels: dict[int, int], dets: dict[int, Detection]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["det_id", "traj_id", "frame", "camera"])
        for det_id in sorted(labels):
            d = dets[det_id]
            writer.writerow([det_id, labels[det_id], d.frame, d.camera])


def read_assignments(path: str | Path) -> dict[int, int]:
    labels: dict[int, int] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["det_id", "traj_id"]:
            raise FormatError(f"{path}: bad assignments header")
        for row in reader:
            if row:
                labels[int(row[0])] = int(row[1])
    return labels


def write_trajectories_3d(path: str | Path, rows: Iterable[tuple[int, int, float, float, float]],
                          id_col: str = "traj_id") -> None:
    """Multi-view output: one `frame,<id>,wx,wy,wz` row per trajectory-frame."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", id_col, "wx", "wy", "wz"])
        for frame, tid, wx, wy, wz in sorted(rows):
            writer.writerow([frame, tid, f"{wx:.6f}", f"{wy:.6f}", f"{wz:.6f}"])


def read_points_3d(path: str | Path, id_col: str) -> dict[int, dict[int, tuple[float, float, float]]]:
    """Read `frame,<id_col>,wx,wy,wz` into frame -> id -> point."""
    out: dict[int, dict[int, tuple[float, float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["frame", id_col, "wx", "wy", "wz"]:
            raise FormatError(f"{path}: expected header frame,{id_col},wx,wy,wz")
        for row in reader:
            if not row:
                continue
            frame, tid = int(row[0]), int(row[1])
            out.setdefault(frame, {})[tid] = (float(row[2]), float(row[3]), float(row[4]))
    return out


def write_trajectories_mot(path: str | Path, rows: Iterable[tuple[int, int, float, float, float, float, float]]) -> None:
    """MOTChallenge-style per-camera output: frame,traj_id,x1,y1,w,h,conf,-1,-1,-1."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for frame, tid, x1, y1, w, h, conf in sorted(rows):
            writer.writerow([frame, tid, f"{x1:.3f}", f"{y1:.3f}", f"{w:.3f}", f"{h:.3f}", f"{conf:.6f}", -1, -1, -1])


def read_boxes_2d(path: str | Path) -> dict[int, dict[int, tuple[float, float, float, float]]]:
    """Read MOT rows into frame -> id -> (x1,y1,x2,y2)."""
    out: dict[int, dict[int, tuple[float, float, float, float]]] = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            frame, tid = int(row[0]), int(row[1])
            x1, y1, w, h = (float(v) for v in row[2:6])
            out.setdefault(frame, {})[tid] = (x1, y1, x1 + w, y1 + h)
    return out


def write_gt_boxes(path: str | Path, rows: Iterable[tuple[int, int, int, float, float, float, float]]) -> None:
    """Ground-truth 2D boxes: frame,camera,gt_id,x1,y1,x2,y2."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "camera", "gt_id", "x1", "y1", "x2", "y2"])
        for frame, cam, gid, x1, y1, x2, y2 in sorted(rows):
            writer.writerow([frame, cam, gid, f"{x1:.3f}", f"{y1:.3f}", f"{x2:.3f}", f"{y2:.3f}"])


def read_gt_boxes(path: str | Path) -> dict[int, dict[int, dict[int, tuple[float, float, float, float]]]]:
    """Read GT boxes into camera -> frame -> gt_id -> (x1,y1,x2,y2)."""
    out: dict[int, dict[int, dict[int, tuple[float, float, float, float]]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["frame", "camera", "gt_id", "x1", "y1", "x2", "y2"]:
            raise FormatError(f"{path}: bad gt-box header")
        for row in reader:
            if not row:
                continue
            frame, cam, gid = int(row[0]), int(row[1]), int(row[2])
            box = tuple(float(v) for v in row[3:7])
            out.setdefault(cam, {}).setdefault(frame, {})[gid] = box  # type: ignore[assignment]
    return out


def dump_json(path: str | Path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
