"""Core geometry and image types shared across the pipeline.

Pixel convention (used everywhere): origin at the top-left corner, x grows
right, y grows down, and pixel centers sit at integer coordinates. Image
arrays are stored (H, W) row-major, so ``values[y, x]`` addresses pixel
(x, y). Depth is camera-space Z in meters; invalid depth is an explicit
validity flag, never a magic float.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROTATION_TOL = 1e-9


def _frozen(a, dtype=np.float64):
    out = np.ascontiguousarray(np.asarray(a, dtype=dtype))
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: intrinsics in pixels plus a world-to-camera rigid transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # (3, 3) world -> camera
    translation: np.ndarray  # (3,) meters
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation))
        object.__setattr__(self, "translation", _frozen(self.translation))
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        R = self.rotation
        if R.shape != (3, 3) or self.translation.shape != (3,):
            raise ValueError("rotation must be (3,3), translation (3,)")
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-6:
            raise ValueError("rotation is not orthonormal")
        if np.linalg.det(R) < 0:
            raise ValueError("rotation must have determinant +1")

    @classmethod
    def identity(cls, fx, fy, cx, cy, width, height):
        return cls(fx, fy, cx, cy, np.eye(3), np.zeros(3), width, height)

    def world_to_cam(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def cam_to_world(self, points: np.ndarray) -> np.ndarray:
        return (points - self.translation) @ self.rotation

    def to_dict(self) -> dict:
        return {
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "width": int(self.width),
            "height": int(self.height),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(
            d["fx"], d["fy"], d["cx"], d["cy"],
            np.array(d["rotation"], dtype=np.float64),
            np.array(d["translation"], dtype=np.float64),
            d["width"], d["height"],
        )


def project_points(camera: Camera, points: np.ndarray):
    """Pinhole-project world points.

    Returns (uv, depth, valid): uv is (N, 2) pixel coordinates, depth is
    camera-space Z, and valid flags points strictly in front of the camera.
    Invalid points carry uv = 0 and depth = 0 rather than NaN.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    pc = camera.world_to_cam(points)
    z = pc[:, 2]
    valid = z > 0
    uv = np.zeros((len(points), 2))
    zsafe = np.where(valid, z, 1.0)
    uv[:, 0] = camera.fx * pc[:, 0] / zsafe + camera.cx
    uv[:, 1] = camera.fy * pc[:, 1] / zsafe + camera.cy
    uv[~valid] = 0.0
    depth = np.where(valid, z, 0.0)
    return uv, depth, valid


def unproject_points(camera: Camera, uv: np.ndarray, depth: np.ndarray) -> np.ndarray:
    """Inverse of project_points for valid points: pixel + depth back to world."""
    uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
    depth = np.asarray(depth, dtype=np.float64)
    x = (uv[:, 0] - camera.cx) * depth / camera.fx
    y = (uv[:, 1] - camera.cy) * depth / camera.fy
    pc = np.stack([x, y, depth], axis=1)
    return camera.cam_to_world(pc)


@dataclass(frozen=True)
class TriMesh:
    """Triangle mesh with optional per-vertex colors and part tags."""

    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int
    colors: np.ndarray | None = None  # (V, 3) in [0, 1]
    part_labels: tuple[str, ...] | None = None  # per-vertex part name

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(self.vertices))
        object.__setattr__(self, "faces", _frozen(self.faces, dtype=np.int64))
        if self.colors is not None:
            object.__setattr__(self, "colors", _frozen(self.colors))
        if self.part_labels is not None:
            object.__setattr__(self, "part_labels", tuple(self.part_labels))
        V = len(self.vertices)
        f = self.faces
        if f.size and (f.min() < 0 or f.max() >= V):
            raise ValueError("face indices out of range")
        if f.size:
            a, b, c = f[:, 0], f[:, 1], f[:, 2]
            if np.any((a == b) | (b == c) | (a == c)):
                raise ValueError("degenerate face with repeated vertex index")
        if not np.isfinite(self.vertices).all():
            raise ValueError("non-finite vertex coordinates")
        if self.part_labels is not None and len(self.part_labels) != V:
            raise ValueError("part_labels length must match vertex count")

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def face_normals(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.maximum(norm, 1e-300)

    def surface_area(self) -> float:
        v = self.vertices
        f = self.faces
        if not len(f):
            return 0.0
        n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        return float(0.5 * np.linalg.norm(n, axis=1).sum())

    def signed_volume(self) -> float:
        """Divergence-theorem volume; positive when faces wind outward."""
        v = self.vertices
        f = self.faces
        if not len(f):
            return 0.0
        a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "TriMesh":
        return TriMesh(
            self.vertices @ np.asarray(rotation).T + np.asarray(translation),
            self.faces, self.colors, self.part_labels,
        )


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel camera-space depth with an explicit validity channel."""

    values: np.ndarray  # (H, W) meters, undefined where ~valid
    valid: np.ndarray  # (H, W) bool

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        object.__setattr__(self, "valid", _frozen(self.valid, dtype=bool))
        if self.values.shape != self.valid.shape or self.values.ndim != 2:
            raise ValueError("values and valid must be matching 2D arrays")
        held = self.values[self.valid]
        if held.size and (not np.isfinite(held).all() or held.min() <= 0):
            raise ValueError("valid depth values must be finite and positive")

    @property
    def shape(self):
        return self.values.shape

    @classmethod
    def empty(cls, height: int, width: int) -> "DepthMap":
        return cls(np.zeros((height, width)), np.zeros((height, width), dtype=bool))

    def coverage(self) -> "Mask":
        return Mask(self.valid.astype(np.float64))


@dataclass(frozen=True)
class Mask:
    """Binary or soft foreground mask, values in [0, 1]."""

    values: np.ndarray  # (H, W)

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        if self.values.ndim != 2:
            raise ValueError("mask must be 2D")
        if self.values.size and (self.values.min() < 0 or self.values.max() > 1):
            raise ValueError("mask values must lie in [0, 1]")

    @property
    def shape(self):
        return self.values.shape

    def binary(self, threshold: float = 0.5) -> np.ndarray:
        return self.values >= threshold

    def is_empty(self, threshold: float = 0.5) -> bool:
        return not self.binary(threshold).any()

    def area(self, threshold: float = 0.5) -> int:
        return int(self.binary(threshold).sum())


def mask_iou(a: Mask, b: Mask, threshold: float = 0.5) -> float:
    """Intersection over union of two binarized masks; 1.0 when both are empty."""
    if a.shape != b.shape:
        raise ValueError(f"mask dimensions differ: {a.shape} vs {b.shape}")
    ba = a.binary(threshold)
    bb = b.binary(threshold)
    union = np.logical_or(ba, bb).sum()
    if union == 0:
        return 1.0
    inter = np.logical_and(ba, bb).sum()
    return float(inter / union)
