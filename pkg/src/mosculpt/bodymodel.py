"""Parametric articulated body model.

A model is a template mesh plus a linear shape basis, a kinematic tree, a
sparse joint regressor, and linear-blend-skinning weights. Posing maps
(beta, theta, translation) to a deformed surface and 3D joints:

    shaped   = template + shape_basis . beta
    joints   = regressor @ shaped
    G_k      = G_parent(k) . Trans(j_k - j_parent) . Rodrigues(theta_k)
    vertex   = sum_k w_vk (G_k . Trans(-j_k)) shaped_v

The built-in model is a capsule-composed humanoid (16 joints, S=4 shape
directions) generated procedurally; externally supplied models with the
same JSON schema load through the same path.

Analytic derivatives of joints and skinned vertices with respect to all
parameters are provided for the optimizer; the per-frame parameter layout
is [theta (K*3), translation (3), beta (S)].
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import TriMesh, _frozen

MODEL_SCHEMA_VERSION = 1

JOINT_NAMES = (
    "pelvis", "spine", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_hip", "l_knee", "l_ankle",
    "r_hip", "r_knee", "r_ankle",
)

PARENTS = (-1, 0, 1, 2, 1, 4, 5, 1, 7, 8, 0, 10, 11, 0, 13, 14)

JOINT_PARTS = (
    "torso", "torso", "torso", "head",
    "left_arm", "left_arm", "left_arm",
    "right_arm", "right_arm", "right_arm",
    "left_leg", "left_leg", "left_leg",
    "right_leg", "right_leg", "right_leg",
)

SYMMETRIC_PAIRS = ((4, 7), (5, 8), (6, 9), (10, 13), (11, 14), (12, 15))

# Hinge joints and the prohibited bending direction used by the pose prior:
# (joint index, local axis component, sign). Positive sign * angle > 0 is the
# direction the joint cannot bend (knee backwards, elbow backwards).
HINGES = ((5, 1, 1.0), (8, 1, -1.0), (11, 0, -1.0), (14, 0, -1.0))


def rodrigues(v: np.ndarray) -> np.ndarray:
    """Axis-angle vectors (..., 3) to rotation matrices (..., 3, 3)."""
    v = np.asarray(v, dtype=np.float64)
    single = v.ndim == 1
    v = np.atleast_2d(v)
    theta = np.linalg.norm(v, axis=-1)
    K = _hat(v)
    K2 = K @ K
    out = np.empty(v.shape[:-1] + (3, 3))
    small = theta < 1e-8
    t2 = theta * theta
    # sin(t)/t and (1-cos t)/t^2 with second-order Taylor fallback near zero
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(small, 1.0 - t2 / 6.0, np.sin(theta) / np.where(small, 1.0, theta))
        b = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(theta)) / np.where(small, 1.0, t2))
    out = np.eye(3) + a[..., None, None] * K + b[..., None, None] * K2
    return out[0] if single else out


def _hat(v):
    v = np.asarray(v)
    z = np.zeros(v.shape[:-1])
    return np.stack(
        [
            np.stack([z, -v[..., 2], v[..., 1]], axis=-1),
            np.stack([v[..., 2], z, -v[..., 0]], axis=-1),
            np.stack([-v[..., 1], v[..., 0], z], axis=-1),
        ],
        axis=-2,
    )


def rodrigues_jacobian(v: np.ndarray) -> np.ndarray:
    """dR/dv_i for one axis-angle vector; returns (3, 3, 3) indexed [i]."""
    v = np.asarray(v, dtype=np.float64)
    R = rodrigues(v)
    t2 = float(v @ v)
    out = np.empty((3, 3, 3))
    if t2 < 1e-16:
        for i in range(3):
            e = np.zeros(3)
            e[i] = 1.0
            out[i] = _hat(e)
        return out
    ImR = np.eye(3) - R
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        w = v[i] * v + np.cross(v, ImR @ e)
        out[i] = (_hat(w) @ R) / t2
    return out


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to axis-angle (inverse of rodrigues)."""
    R = np.asarray(R, dtype=np.float64)
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos))
    if theta < 1e-10:
        return np.zeros(3)
    if np.pi - theta < 1e-6:
        # near pi: extract axis from R + I
        M = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(M), 0.0))
        # fix signs from off-diagonals
        k = int(np.argmax(axis))
        if axis[k] > 0:
            for i in range(3):
                if i != k and M[k, i] < 0:
                    axis[i] = -axis[i]
        axis /= np.linalg.norm(axis)
        return axis * theta
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return w * (theta / (2.0 * np.sin(theta)))


@dataclass(frozen=True)
class BodyModel:
    template: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3)
    parents: tuple[int, ...]  # per joint, root = -1
    shape_basis: np.ndarray  # (V, 3, S)
    joint_regressor: np.ndarray  # (K, V) row-stochastic
    skinning_weights: np.ndarray  # (V, K) row-stochastic
    joint_names: tuple[str, ...]
    part_labels: tuple[str, ...]  # per joint
    keypoint_map: tuple[int, ...]  # detector joint index -> model joint index
    vertex_parts: tuple[str, ...]  # per vertex, for rendering and mask tags

    def __post_init__(self):
        object.__setattr__(self, "template", _frozen(self.template))
        object.__setattr__(self, "faces", _frozen(self.faces, dtype=np.int64))
        object.__setattr__(self, "shape_basis", _frozen(self.shape_basis))
        object.__setattr__(self, "joint_regressor", _frozen(self.joint_regressor))
        object.__setattr__(self, "skinning_weights", _frozen(self.skinning_weights))
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "part_labels", tuple(self.part_labels))
        object.__setattr__(self, "keypoint_map", tuple(int(i) for i in self.keypoint_map))
        object.__setattr__(self, "vertex_parts", tuple(self.vertex_parts))
        K, V = self.joint_regressor.shape
        if self.skinning_weights.shape != (V, K):
            raise ValueError("skinning_weights must be (V, K)")
        if self.template.shape != (V, 3):
            raise ValueError("template must be (V, 3)")
        w = self.skinning_weights
        if w.size and np.abs(w.sum(axis=1) - 1.0).max() > 1e-9:
            raise ValueError("skinning weight rows must sum to 1")
        if w.size and w.min() < 0:
            raise ValueError("skinning weights must be non-negative")
        r = self.joint_regressor
        if np.abs(r.sum(axis=1) - 1.0).max() > 1e-9:
            raise ValueError("regressor rows must sum to 1")
        if r.min() < 0:
            raise ValueError("regressor must be non-negative")
        if self.parents[0] != -1 or any(
            not (0 <= p < k) for k, p in enumerate(self.parents) if k > 0
        ):
            raise ValueError("parents must form a rooted tree in topological order")
        if len(self.joint_names) != K or len(self.part_labels) != K:
            raise ValueError("joint metadata length mismatch")
        for m in self.keypoint_map:
            if not 0 <= m < K:
                raise ValueError(f"keypoint_map entry {m} is not a joint index")
        if len(self.vertex_parts) != V:
            raise ValueError("vertex_parts length mismatch")

    @property
    def num_joints(self) -> int:
        return self.joint_regressor.shape[0]

    @property
    def num_vertices(self) -> int:
        return self.template.shape[0]

    @property
    def num_shape_dirs(self) -> int:
        return self.shape_basis.shape[2]

    @property
    def num_frame_params(self) -> int:
        """Per-frame layout size: theta (3K) + translation (3)."""
        return 3 * self.num_joints + 3

    def bones(self) -> list[tuple[int, int]]:
        """Kinematic bones as (parent, child) joint index pairs."""
        return [(p, k) for k, p in enumerate(self.parents) if p >= 0]

    def parts(self) -> list[str]:
        seen = []
        for p in self.part_labels:
            if p not in seen:
                seen.append(p)
        return seen

    def bones_for_parts(self, parts) -> list[tuple[int, int]]:
        """Bones whose child joint carries one of the given part labels."""
        parts = set(parts)
        unknown = parts - set(self.part_labels)
        if unknown:
            raise ValueError(f"unknown body parts: {sorted(unknown)}; "
                             f"valid: {self.parts()}")
        out = [(p, k) for p, k in self.bones() if self.part_labels[k] in parts]
        if not out:
            raise ValueError(f"no bones for parts {sorted(parts)}")
        return out

    def shape_vertices(self, beta: np.ndarray) -> np.ndarray:
        beta = np.asarray(beta, dtype=np.float64)
        if beta.shape != (self.num_shape_dirs,):
            raise ValueError(
                f"beta must have length {self.num_shape_dirs}, got {beta.shape}"
            )
        return self.template + self.shape_basis @ beta

    def rest_joints(self, beta: np.ndarray) -> np.ndarray:
        return self.joint_regressor @ self.shape_vertices(beta)


@dataclass(frozen=True)
class BodyParams:
    """Shared shape plus per-frame pose and translation for N frames."""

    beta: np.ndarray  # (S,)
    theta: np.ndarray  # (N, K, 3) axis-angle
    translation: np.ndarray  # (N, 3)

    def __post_init__(self):
        object.__setattr__(self, "beta", _frozen(self.beta))
        object.__setattr__(self, "theta", _frozen(self.theta))
        object.__setattr__(self, "translation", _frozen(self.translation))
        if self.theta.ndim != 3 or self.theta.shape[2] != 3:
            raise ValueError("theta must be (N, K, 3)")
        if self.translation.shape != (self.theta.shape[0], 3):
            raise ValueError("translation must be (N, 3)")
        if not (np.isfinite(self.theta).all() and np.isfinite(self.translation).all()
                and np.isfinite(self.beta).all()):
            raise ValueError("non-finite body parameters")

    @property
    def num_frames(self) -> int:
        return self.theta.shape[0]

    @classmethod
    def rest(cls, model: BodyModel, num_frames: int) -> "BodyParams":
        return cls(
            np.zeros(model.num_shape_dirs),
            np.zeros((num_frames, model.num_joints, 3)),
            np.zeros((num_frames, 3)),
        )

    def replace_frame(self, t: int, theta_t=None, translation_t=None) -> "BodyParams":
        theta = self.theta.copy()
        trans = self.translation.copy()
        if theta_t is not None:
            theta[t] = theta_t
        if translation_t is not None:
            trans[t] = translation_t
        return BodyParams(self.beta, theta, trans)

    def to_dict(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "frames": [
                {"theta": self.theta[t].tolist(),
                 "translation": self.translation[t].tolist()}
                for t in range(self.num_frames)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BodyParams":
        frames = d["frames"]
        return cls(
            np.array(d["beta"], dtype=np.float64),
            np.array([f["theta"] for f in frames], dtype=np.float64),
            np.array([f["translation"] for f in frames], dtype=np.float64),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "BodyParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


# --- Forward kinematics and skinning ------------------------------------

def _trans(t):
    m = np.eye(4)
    m[:3, 3] = t
    return m


def forward_kinematics(model: BodyModel, beta, theta_t, translation_t):
    """World transform per joint and posed joint positions for one frame.

    Returns (transforms (K, 4, 4), joints (K, 3)).
    """
    theta_t = np.asarray(theta_t, dtype=np.float64)
    K = model.num_joints
    if theta_t.shape != (K, 3):
        raise ValueError(f"theta must be ({K}, 3)")
    j = model.rest_joints(beta)
    R = rodrigues(theta_t)
    G = np.empty((K, 4, 4))
    for k in range(K):
        p = model.parents[k]
        L = np.eye(4)
        L[:3, :3] = R[k]
        if p < 0:
            L[:3, 3] = j[k] + np.asarray(translation_t, dtype=np.float64)
            G[k] = L
        else:
            L[:3, 3] = j[k] - j[p]
            G[k] = G[p] @ L
    return G, G[:, :3, 3].copy()


def skin_transforms(model: BodyModel, beta, theta_t, translation_t):
    """Per-joint rest-relative transforms A_k = G_k . Trans(-j_k)."""
    G, _ = forward_kinematics(model, beta, theta_t, translation_t)
    j = model.rest_joints(beta)
    A = G.copy()
    A[:, :3, 3] -= np.einsum("kab,kb->ka", G[:, :3, :3], j)
    return A


def skin_mesh(model: BodyModel, beta, theta_t, translation_t) -> TriMesh:
    """Linear blend skinning of the shaped template for one frame."""
    A = skin_transforms(model, beta, theta_t, translation_t)
    shaped = model.shape_vertices(beta)
    W = model.skinning_weights
    Tv_rot = np.einsum("vk,kab->vab", W, A[:, :3, :3])
    Tv_off = W @ A[:, :3, 3]
    verts = np.einsum("vab,vb->va", Tv_rot, shaped) + Tv_off
    return TriMesh(verts, model.faces, part_labels=model.vertex_parts)


def model_keypoints_3d(model: BodyModel, beta, theta_t, translation_t) -> np.ndarray:
    """Posed 3D keypoints in detector joint order."""
    _, joints = forward_kinematics(model, beta, theta_t, translation_t)
    return joints[list(model.keypoint_map)]


@dataclass
class PosedFrame:
    """One posed frame with optional analytic Jacobians.

    Parameter layout (per frame): theta flattened row-major (3K), then
    translation (3), then beta (S); P = 3K + 3 + S.
    """

    joints: np.ndarray  # (K, 3)
    transforms: np.ndarray  # (K, 4, 4)
    vertices: np.ndarray | None = None  # (V, 3)
    djoints: np.ndarray | None = None  # (P, K, 3)
    dvertices: np.ndarray | None = None  # (P, V, 3)

    def keypoints(self, model: BodyModel) -> np.ndarray:
        return self.joints[list(model.keypoint_map)]

    def dkeypoints(self, model: BodyModel) -> np.ndarray:
        return self.djoints[:, list(model.keypoint_map), :]


def pose_frame(
    model: BodyModel,
    beta,
    theta_t,
    translation_t,
    with_vertices: bool = False,
    with_jacobians: bool = False,
) -> PosedFrame:
    """Pose one frame, optionally with vertices and analytic Jacobians.

    Derivatives run through the full chain: Rodrigues rotations, the
    kinematic recursion, the beta-dependent rest joints, and skinning.
    """
    beta = np.asarray(beta, dtype=np.float64)
    theta_t = np.asarray(theta_t, dtype=np.float64)
    translation_t = np.asarray(translation_t, dtype=np.float64)
    K = model.num_joints
    S = model.num_shape_dirs
    P = 3 * K + 3 + S

    shaped = model.shape_vertices(beta)
    j = model.joint_regressor @ shaped
    R = rodrigues(theta_t)

    L = np.zeros((K, 4, 4))
    G = np.empty((K, 4, 4))
    for k in range(K):
        p = model.parents[k]
        L[k] = np.eye(4)
        L[k, :3, :3] = R[k]
        if p < 0:
            L[k, :3, 3] = j[k] + translation_t
            G[k] = L[k]
        else:
            L[k, :3, 3] = j[k] - j[p]
            G[k] = G[p] @ L[k]
    joints = G[:, :3, 3].copy()

    A = G.copy()
    A[:, :3, 3] -= np.einsum("kab,kb->ka", G[:, :3, :3], j)

    verts = None
    W = model.skinning_weights
    if with_vertices or with_jacobians:
        Tv_rot = np.einsum("vk,kab->vab", W, A[:, :3, :3])
        Tv_off = W @ A[:, :3, 3]
        verts = np.einsum("vab,vb->va", Tv_rot, shaped) + Tv_off

    if not with_jacobians:
        return PosedFrame(joints, G, verts)

    # dJ/dbeta is constant per model: regressor @ basis
    djdb = np.einsum("kv,vcs->skc", model.joint_regressor, model.shape_basis)

    dG = np.zeros((P, K, 4, 4))
    for k in range(K):
        p = model.parents[k]
        # one joint's own rotation parameters
        dR = rodrigues_jacobian(theta_t[k])
        for c in range(3):
            pi = 3 * k + c
            dL = np.zeros((4, 4))
            dL[:3, :3] = dR[c]
            dG[pi, k] = dL if p < 0 else G[p] @ dL
        # inherited derivatives from ancestors (params of joints < k in topo order)
        if p >= 0:
            nz = np.flatnonzero(dG[:, p].reshape(P, 16).any(axis=1))
            dG[nz, k] += dG[nz, p] @ L[k]
        # translation
        if p < 0:
            for c in range(3):
                dG[3 * K + c, k, c, 3] = 1.0
        # beta via rest joints
        for s in range(S):
            pi = 3 * K + 3 + s
            dL = np.zeros((4, 4))
            dL[:3, 3] = djdb[s, k] if p < 0 else djdb[s, k] - djdb[s, p]
            dG[pi, k] += dL if p < 0 else G[p] @ dL

    djoints = dG[:, :, :3, 3].copy()

    # dA = dG . Trans(-j) + G . dTrans(-j); the latter only for beta params
    dA = dG.copy()
    dA[:, :, :3, 3] -= np.einsum("pkab,kb->pka", dG[:, :, :3, :3], j)
    for s in range(S):
        pi = 3 * K + 3 + s
        dA[pi, :, :3, 3] -= np.einsum("kab,kb->ka", G[:, :3, :3], djdb[s])

    H = np.concatenate([shaped, np.ones((len(shaped), 1))], axis=1)
    dverts = np.einsum("vk,pkab,vb->pva", W, dA[:, :, :3, :], H, optimize=True)
    # beta also moves the shaped template under the blended transforms
    Tv_rot = np.einsum("vk,kab->vab", W, A[:, :3, :3])
    for s in range(S):
        pi = 3 * K + 3 + s
        dverts[pi] += np.einsum("vab,vb->va", Tv_rot, model.shape_basis[:, :, s])

    return PosedFrame(joints, G, verts, djoints, dverts)


# --- Built-in capsule humanoid ------------------------------------------

_TEMPLATE_JOINTS = np.array([
    [0.00, 0.95, 0.00],   # pelvis
    [0.00, 1.22, 0.00],   # spine (chest)
    [0.00, 1.42, 0.00],   # neck
    [0.00, 1.56, 0.00],   # head
    [0.18, 1.38, 0.00],   # l_shoulder
    [0.46, 1.38, 0.00],   # l_elbow
    [0.72, 1.38, 0.00],   # l_wrist
    [-0.18, 1.38, 0.00],  # r_shoulder
    [-0.46, 1.38, 0.00],  # r_elbow
    [-0.72, 1.38, 0.00],  # r_wrist
    [0.10, 0.92, 0.00],   # l_hip
    [0.10, 0.50, 0.00],   # l_knee
    [0.10, 0.08, 0.00],   # l_ankle
    [-0.10, 0.92, 0.00],  # r_hip
    [-0.10, 0.50, 0.00],  # r_knee
    [-0.10, 0.08, 0.00],  # r_ankle
])

_BONE_RADII = {
    (0, 1): 0.13, (1, 2): 0.055, (2, 3): 0.075,
    (1, 4): 0.05, (4, 5): 0.045, (5, 6): 0.038,
    (1, 7): 0.05, (7, 8): 0.045, (8, 9): 0.038,
    (0, 10): 0.08, (10, 11): 0.07, (11, 12): 0.05,
    (0, 13): 0.08, (13, 14): 0.07, (14, 15): 0.05,
}

_HEAD_TOP = np.array([0.0, 1.74, 0.0])
_HEAD_RADIUS = 0.09


def _capsule(p0, p1, radius, n_around=8):
    """Capsule from p0 to p1: axial rings at u = 0, 0.5, 1 plus cap rings.

    Returns (vertices, faces, axial_params) where axial_params holds each
    vertex's parameter along the axis (u < 0 and u > 1 on the caps).
    """
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    axis = p1 - p0
    length = np.linalg.norm(axis)
    az = axis / length
    ref = np.array([0.0, 0.0, 1.0]) if abs(az[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    ax = np.cross(ref, az)
    ax /= np.linalg.norm(ax)
    ay = np.cross(az, ax)

    ang = 2.0 * np.pi * np.arange(n_around) / n_around
    circle = np.outer(np.cos(ang), ax) + np.outer(np.sin(ang), ay)

    verts = []
    params = []
    cap_scale = radius * np.sin(np.pi / 4.0)
    cap_lift = radius * np.cos(np.pi / 4.0)
    # bottom pole, bottom cap ring, axial rings, top cap ring, top pole
    verts.append(p0 - az * radius)
    params.append(-radius / length)
    rows = []
    verts_cap0 = p0 + circle * cap_scale - az[None, :] * cap_lift
    rows.append(len(verts))
    verts.extend(verts_cap0)
    params.extend([-cap_lift / length] * n_around)
    for u in (0.0, 0.5, 1.0):
        rows.append(len(verts))
        center = p0 + axis * u
        verts.extend(center + circle * radius)
        params.extend([u] * n_around)
    verts_cap1 = p1 + circle * cap_scale + az[None, :] * cap_lift
    rows.append(len(verts))
    verts.extend(verts_cap1)
    params.extend([1.0 + cap_lift / length] * n_around)
    verts.append(p1 + az * radius)
    params.append(1.0 + radius / length)
    ring_rows = rows

    faces = []
    # bottom fan (pole at index 0); wind so normals point outward (away from axis)
    first = ring_rows[0]
    for i in range(n_around):
        faces.append([0, first + (i + 1) % n_around, first + i])
    for r0, r1 in zip(ring_rows, ring_rows[1:]):
        for i in range(n_around):
            i2 = (i + 1) % n_around
            faces.append([r0 + i, r0 + i2, r1 + i2])
            faces.append([r0 + i, r1 + i2, r1 + i])
    top_pole = len(verts) - 1
    last = ring_rows[-1]
    for i in range(n_around):
        faces.append([top_pole, last + i, last + (i + 1) % n_around])

    return np.array(verts), np.array(faces, dtype=np.int64), np.array(params)


def default_model(n_around: int = 8) -> BodyModel:
    """Procedural capsule humanoid: 16 joints, 4 shape directions."""
    joints = _TEMPLATE_JOINTS
    K = len(joints)
    bones = [(p, k) for k, p in enumerate(PARENTS) if p >= 0]

    all_verts = []
    all_faces = []
    vertex_bone = []  # (parent_joint, child_joint) per vertex; child -1 for head cap
    vertex_u = []
    for (p, c) in bones:
        v, f, u = _capsule(joints[p], joints[c], _BONE_RADII[(p, c)], n_around)
        all_faces.append(f + sum(len(a) for a in all_verts))
        all_verts.append(v)
        vertex_bone.extend([(p, c)] * len(v))
        vertex_u.extend(u.tolist())
    # head capsule riding on the head joint
    v, f, u = _capsule(joints[3], _HEAD_TOP, _HEAD_RADIUS, n_around)
    all_faces.append(f + sum(len(a) for a in all_verts))
    all_verts.append(v)
    vertex_bone.extend([(3, -1)] * len(v))
    vertex_u.extend(u.tolist())

    verts = np.concatenate(all_verts)
    faces = np.concatenate(all_faces)
    V = len(verts)
    vertex_u = np.array(vertex_u)

    # Skinning: a bone's geometry is driven by its parent joint, blending
    # half onto the child joint near and beyond the child end.
    W = np.zeros((V, K))
    for i, ((p, c), u) in enumerate(zip(vertex_bone, vertex_u)):
        if c < 0:
            W[i, p] = 1.0
            continue
        wc = 0.5 * np.clip((u - 0.7) / 0.3, 0.0, 1.0)
        W[i, c] = wc
        W[i, p] = 1.0 - wc

    # Regressor: each joint is the mean of the exact end rings meeting it.
    regressor = np.zeros((K, V))
    for i, ((p, c), u) in enumerate(zip(vertex_bone, vertex_u)):
        if c < 0:
            continue
        if u == 0.0:
            regressor[p, i] = 1.0
        elif u == 1.0:
            regressor[c, i] = 1.0
    regressor /= regressor.sum(axis=1, keepdims=True)

    # Shape directions: height, girth, limb length, torso length.
    S = 4
    basis = np.zeros((V, 3, S))
    y_pelvis = joints[0, 1]
    y_neck = joints[2, 1]
    basis[:, 1, 0] = 0.10 * (verts[:, 1] - y_pelvis)
    for i, ((p, c), u) in enumerate(zip(vertex_bone, vertex_u)):
        a = joints[p]
        b = _HEAD_TOP if c < 0 else joints[c]
        axis = b - a
        axis = axis / np.linalg.norm(axis)
        d = verts[i] - a
        radial = d - (d @ axis) * axis
        basis[i, :, 1] = 0.15 * radial
        part = JOINT_PARTS[c] if c >= 0 else "head"
        if part.endswith("arm") or part.endswith("leg"):
            root = joints[10] if part == "left_leg" else joints[13] if part == "right_leg" \
                else joints[4] if part == "left_arm" else joints[7]
            basis[i, :, 2] = 0.10 * ((verts[i] - root) @ axis) * axis
    s = np.clip((verts[:, 1] - y_pelvis) / (y_neck - y_pelvis), 0.0, 1.0)
    basis[:, 1, 3] = 0.12 * s

    vertex_parts = tuple(
        JOINT_PARTS[c] if c >= 0 else "head" for (p, c) in vertex_bone
    )

    return BodyModel(
        template=verts,
        faces=faces,
        parents=PARENTS,
        shape_basis=basis,
        joint_regressor=regressor,
        skinning_weights=W,
        joint_names=JOINT_NAMES,
        part_labels=JOINT_PARTS,
        keypoint_map=tuple(range(K)),
        vertex_parts=vertex_parts,
    )


# --- Model file I/O ------------------------------------------------------

def _encode(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr)
    return {
        "dtype": str(arr.dtype),
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def _decode(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype=d["dtype"]).reshape(d["shape"]).copy()


def save_model(model: BodyModel, path) -> None:
    doc = {
        "schema_version": MODEL_SCHEMA_VERSION,
        "joint_names": list(model.joint_names),
        "parents": list(model.parents),
        "part_labels": list(model.part_labels),
        "keypoint_map": list(model.keypoint_map),
        "vertex_parts": list(model.vertex_parts),
        "template": _encode(model.template),
        "faces": _encode(model.faces.astype(np.int32)),
        "shape_basis": _encode(model.shape_basis),
        "joint_regressor": _encode(model.joint_regressor),
        "skinning_weights": _encode(model.skinning_weights),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_model(path) -> BodyModel:
    doc = json.loads(Path(path).read_text())
    version = doc.get("schema_version")
    if version != MODEL_SCHEMA_VERSION:
        raise ValueError(
            f"unsupported model schema version {version!r}, "
            f"expected {MODEL_SCHEMA_VERSION}"
        )
    return BodyModel(
        template=_decode(doc["template"]),
        faces=_decode(doc["faces"]).astype(np.int64),
        parents=tuple(doc["parents"]),
        shape_basis=_decode(doc["shape_basis"]),
        joint_regressor=_decode(doc["joint_regressor"]),
        skinning_weights=_decode(doc["skinning_weights"]),
        joint_names=tuple(doc["joint_names"]),
        part_labels=tuple(doc["part_labels"]),
        keypoint_map=tuple(doc["keypoint_map"]),
        vertex_parts=tuple(doc["vertex_parts"]),
    )
