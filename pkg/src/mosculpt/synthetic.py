"""Synthetic ground-truth fixtures: a procedural walk cycle, rendered
keypoint tracks with controlled noise, and full input bundles (frames,
masks, keypoints, camera) for end-to-end runs.

All randomness is seeded; regenerating a fixture is bit-stable.
"""

from __future__ import annotations

import numpy as np

from .bodymodel import BodyModel, BodyParams, model_keypoints_3d
from .geometry import Camera
from .keypoints import KeypointTrack, track_from_arrays


def fixture_camera(width: int = 640, height: int = 480, distance: float = 3.2,
                   focal: float = 560.0) -> Camera:
    """Camera on the +z axis at chest height looking at the origin, world y up."""
    R = np.diag([1.0, -1.0, -1.0])  # rotate pi about x: y-up world, y-down image
    t = np.array([0.0, 0.95, distance])
    return Camera(focal, focal, width / 2.0, height / 2.0, R, t, width, height)


def walk_params(model: BodyModel, num_frames: int = 30,
                beta=(0.15, -0.1, 0.1, -0.08), stride: float = 0.9,
                depth_range: float = 0.9) -> BodyParams:
    """Ground-truth walking sequence: legs and arms swing in antiphase and
    the body advances diagonally, so depth varies across the clip."""
    j = {name: i for i, name in enumerate(model.joint_names)}
    K = model.num_joints
    theta = np.zeros((num_frames, K, 3))
    trans = np.zeros((num_frames, 3))
    omega = 2.0 * np.pi / 18.0  # gait cycle of ~18 frames
    for t in range(num_frames):
        ph = omega * t
        s = np.sin(ph)
        # legs: hip swing about x, knees bend only in the allowed direction
        theta[t, j["l_hip"], 0] = 0.45 * s
        theta[t, j["r_hip"], 0] = -0.45 * s
        theta[t, j["l_knee"], 0] = 0.30 * (1.0 - np.cos(ph + 0.9)) / 2.0 + 0.05
        theta[t, j["r_knee"], 0] = 0.30 * (1.0 + np.cos(ph - 0.9 + np.pi)) / 2.0 + 0.05
        # arms: hang down from the T-pose, swing against the legs
        theta[t, j["l_shoulder"], 2] = -1.15
        theta[t, j["r_shoulder"], 2] = 1.15
        theta[t, j["l_shoulder"], 0] = -0.35 * s
        theta[t, j["r_shoulder"], 0] = 0.35 * s
        theta[t, j["l_elbow"], 1] = -0.35 - 0.15 * (1 + s) / 2.0
        theta[t, j["r_elbow"], 1] = 0.35 + 0.15 * (1 - s) / 2.0
        # face the walk direction (diagonal), light counter-rotation and bob
        yaw = np.arctan2(stride, depth_range)
        theta[t, j["spine"], 1] = 0.08 * s
        theta[t, j["pelvis"], 1] = yaw + 0.06 * s
        u = t / max(num_frames - 1, 1)
        trans[t, 0] = stride * (u - 0.5)
        trans[t, 1] = 0.02 * np.sin(2 * ph)
        trans[t, 2] = depth_range * (u - 0.5) + 0.15 * np.sin(np.pi * u)
    return BodyParams(np.asarray(beta, dtype=np.float64), theta, trans)


def render_track(model: BodyModel, params: BodyParams, camera: Camera,
                 noise_px: float = 1.0, seed: int = 7,
                 dropout: dict | None = None,
                 flip_frames=(), symmetric_pairs=None) -> KeypointTrack:
    """Project ground-truth keypoints into the camera with Gaussian noise.

    dropout maps joint name -> list of frame indices whose confidence is
    zeroed (simulating detector failure); flip_frames lists frames whose
    symmetric pairs are swapped in the emitted detections.
    """
    rng = np.random.default_rng(seed)
    n = params.num_frames
    D = len(model.keypoint_map)
    pos = np.zeros((n, D, 2))
    conf = np.zeros((n, D))
    for t in range(n):
        kp = model_keypoints_3d(model, params.beta, params.theta[t],
                                params.translation[t])
        pc = camera.world_to_cam(kp)
        z = pc[:, 2]
        pos[t, :, 0] = camera.fx * pc[:, 0] / z + camera.cx
        pos[t, :, 1] = camera.fy * pc[:, 1] / z + camera.cy
        pos[t] += rng.normal(0.0, noise_px, (D, 2))
        conf[t] = np.clip(0.95 + rng.normal(0, 0.02, D), 0.0, 1.0)
    names = [model.joint_names[m] for m in model.keypoint_map]
    if dropout:
        for joint_name, frames in dropout.items():
            d = names.index(joint_name)
            for t in frames:
                conf[t, d] = 0.0
    if symmetric_pairs is None:
        # derive from the model's l_/r_ naming
        symmetric_pairs = []
        for i, nm in enumerate(names):
            if nm.startswith("l_"):
                other = "r_" + nm[2:]
                if other in names:
                    symmetric_pairs.append((i, names.index(other)))
    for t in flip_frames:
        for i, k in symmetric_pairs:
            pos[t][[i, k]] = pos[t][[k, i]]
            conf[t][[i, k]] = conf[t][[k, i]]
    return track_from_arrays(pos, conf, names, symmetric_pairs)


def smooth_track_2d(num_frames: int = 100, seed: int = 3):
    """Standalone 2D track (no body model) for HMM tests: two symmetric
    pairs moving along smooth sine paths, well separated left/right."""
    rng = np.random.default_rng(seed)
    t = np.arange(num_frames)
    names = ["l_shoulder", "r_shoulder", "l_hip", "r_hip", "nose"]
    pairs = [(0, 1), (2, 3)]
    pos = np.zeros((num_frames, 5, 2))
    base_x = 160 + 40 * np.sin(2 * np.pi * t / 60.0)
    base_y = 120 + 10 * np.cos(2 * np.pi * t / 45.0)
    for i, (dx, dy) in enumerate([(35, -30), (-35, -30), (18, 10), (-18, 10),
                                  (0, -55)]):
        pos[:, i, 0] = base_x + dx + 3 * np.sin(2 * np.pi * t / 30 + i)
        pos[:, i, 1] = base_y + dy + 3 * np.cos(2 * np.pi * t / 25 + i)
    pos += rng.normal(0, 0.8, pos.shape)
    conf = np.clip(0.9 + rng.normal(0, 0.03, (num_frames, 5)), 0, 1)
    return track_from_arrays(pos, conf, names, pairs)
