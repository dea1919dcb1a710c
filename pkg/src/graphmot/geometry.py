"""Pinhole camera math: pixel rays, ground/mesh intersection, line-of-sight tests."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

# Ray-triangle determinant below this is treated as parallel.
TRIANGLE_DET_EPS = 1e-12
# Fraction of the camera->point segment excluded at both ends when testing
# occlusion, so that hits at the endpoints never count as occluders.
VIS_MARGIN = 1e-4
MIN_TRIANGLE_AREA = 1e-12


class GeometryError(ValueError):
    pass


class NoIntersectionError(GeometryError):
    pass


@dataclass(eq=False)
class CameraModel:
    """Calibrated pinhole camera: x_cam = R @ x_world + t, pixel = K @ x_cam / z."""

    name: str
    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=np.float64).reshape(3, 3)
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if abs(np.linalg.det(self.K)) < 1e-12:
            raise GeometryError(f"camera {self.name}: singular intrinsic matrix")
        if not np.allclose(self.R @ self.R.T, np.eye(3), atol=1e-6):
            raise GeometryError(f"camera {self.name}: R is not orthonormal")
        if np.linalg.det(self.R) < 0:
            raise GeometryError(f"camera {self.name}: R has negative determinant")

    @property
    def position(self) -> np.ndarray:
        """Optical center in world coordinates."""
        return -self.R.T @ self.t

    def project(self, point: np.ndarray) -> tuple[float, float, float]:
        """World point -> (u, v, depth). depth <= 0 means behind the camera."""
        x_cam = self.R @ np.asarray(point, dtype=np.float64) + self.t
        z = x_cam[2]
        if z == 0.0:
            return np.inf, np.inf, 0.0
        uvw = self.K @ x_cam
        return uvw[0] / z, uvw[1] / z, z

    def in_image(self, u: float, v: float) -> bool:
        return 0.0 <= u < self.width and 0.0 <= v < self.height


def look_at_camera(
    name: str,
    position: Sequence[float],
    target: Sequence[float],
    K: np.ndarray,
    width: int,
    height: int,
) -> CameraModel:
    """Build a camera at `position` looking at `target` (image y pointing down)."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    norm = np.linalg.norm(forward)
    if norm < 1e-9:
        raise GeometryError("camera position and target coincide")
    forward /= norm
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        # Looking straight up/down: pick an arbitrary horizontal right axis.
        right = np.array([1.0, 0.0, 0.0])
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    t = -R @ position
    return CameraModel(name=name, K=K, R=R, t=t, width=width, height=height)


def pixel_ray(cam: CameraModel, bbox: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Ray through the bbox base point (bottom-center pixel).

    Returns (origin, direction) where origin is the optical center; the
    direction is unnormalized.
    """
    x1, y1, x2, y2 = bbox
    u = np.array([(x1 + x2) / 2.0, y2, 1.0])
    direction = cam.R.T @ np.linalg.solve(cam.K, u)
    return cam.position, direction


def ray_ground(origin: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Intersect a ray with the z=0 plane; the result has z set to exactly 0."""
    oz, dz = float(origin[2]), float(direction[2])
    if dz == 0.0:
        raise NoIntersectionError("ray is parallel to the ground plane")
    lam = -oz / dz
    if lam <= 0.0:
        raise NoIntersectionError("ground plane is behind the ray origin")
    p = np.asarray(origin, dtype=np.float64) + lam * np.asarray(direction, dtype=np.float64)
    p[2] = 0.0
    return p


@dataclass(eq=False)
class TriMesh:
    """Triangle soup in meters."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size:
            if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
                raise GeometryError("triangle index out of range")
            a = self.vertices[self.triangles[:, 0]]
            b = self.vertices[self.triangles[:, 1]]
            c = self.vertices[self.triangles[:, 2]]
            areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
            if np.any(areas <= MIN_TRIANGLE_AREA):
                raise GeometryError("degenerate triangle (area below cutoff)")

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @classmethod
    def empty(cls) -> "TriMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    @classmethod
    def from_obj(cls, path: str | Path) -> "TriMesh":
        verts: list[list[float]] = []
        tris: list[list[int]] = []
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "v":
                if len(parts) < 4:
                    raise GeometryError(f"{path}:{lineno}: malformed vertex line")
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise GeometryError(f"{path}:{lineno}: only triangle faces are supported")
                tris.append([int(p.split("/")[0]) - 1 for p in parts[1:]])
            # other OBJ record types (vn, vt, ...) are ignored
        return cls(np.array(verts).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3))

    def to_obj(self, path: str | Path) -> None:
        lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in self.vertices]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in self.triangles]
        Path(path).write_text("\n".join(lines) + "\n")


class RayHit(NamedTuple):
    lam: float
    triangle: int
    point: np.ndarray


def ray_mesh(origin: np.ndarray, direction: np.ndarray, mesh: TriMesh) -> Optional[RayHit]:
    """First intersection of a ray with the mesh (smallest lambda > 0), or None.

    Moller-Trumbore over all triangles; admissible hits satisfy beta >= 0,
    gamma >= 0, beta + gamma <= 1.
    """
    if mesh is None or mesh.n_triangles == 0:
        return None
    origin = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    v0 = mesh.vertices[mesh.triangles[:, 0]]
    e1 = mesh.vertices[mesh.triangles[:, 1]] - v0
    e2 = mesh.vertices[mesh.triangles[:, 2]] - v0
    h = np.cross(d[None, :], e2)
    a = np.einsum("ij,ij->i", e1, h)
    ok = np.abs(a) > TRIANGLE_DET_EPS
    if not ok.any():
        return None
    f = np.zeros_like(a)
    f[ok] = 1.0 / a[ok]
    s = origin[None, :] - v0
    beta = f * np.einsum("ij,ij->i", s, h)
    q = np.cross(s, e1)
    gamma = f * (q @ d)
    lam = f * np.einsum("ij,ij->i", e2, q)
    admissible = ok & (beta >= 0.0) & (gamma >= 0.0) & (beta + gamma <= 1.0) & (lam > 0.0)
    if not admissible.any():
        return None
    idx = np.flatnonzero(admissible)
    best = idx[np.argmin(lam[idx])]
    return RayHit(float(lam[best]), int(best), origin + lam[best] * d)


def visibility(cam: CameraModel | np.ndarray, point: np.ndarray, mesh: Optional[TriMesh]) -> bool:
    """True when nothing in the mesh blocks the camera->point segment."""
    if mesh is None or mesh.n_triangles == 0:
        return True
    origin = cam.position if isinstance(cam, CameraModel) else np.asarray(cam, dtype=np.float64)
    seg = np.asarray(point, dtype=np.float64) - origin
    hit = ray_mesh(origin, seg, mesh)
    return hit is None or not (VIS_MARGIN < hit.lam < 1.0 - VIS_MARGIN)


def load_calibration(path: str | Path) -> list[CameraModel]:
    data = json.loads(Path(path).read_text())
    cams = []
    for entry in data:
        cams.append(
            CameraModel(
                name=entry["name"],
                K=np.array(entry["K"], dtype=np.float64).reshape(3, 3),
                R=np.array(entry["R"], dtype=np.float64).reshape(3, 3),
                t=np.array(entry["t"], dtype=np.float64),
                width=int(entry["width"]),
                height=int(entry["height"]),
            )
        )
    return cams


def save_calibration(path: str | Path, cams: Sequence[CameraModel]) -> None:
    data = [
        {
            "name": c.name,
            "K": [float(x) for x in c.K.ravel()],
            "R": [float(x) for x in c.R.ravel()],
            "t": [float(x) for x in c.t],
            "width": c.width,
            "height": c.height,
        }
        for c in cams
    ]
    Path(path).write_text(json.dumps(data, indent=2))
