"""2D keypoint tracks: per-frame joint detections with confidences.

JSON wire format::

    {"joints": [names...],
     "symmetric_pairs": [[i, j], ...],
     "frames": [{"t": int, "points": [[x, y, conf], ...]}, ...]}

A confidence of 0 marks a missing detection; its position is ignored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import _frozen


@dataclass(frozen=True)
class KeypointFrame:
    positions: np.ndarray  # (J, 2) pixels
    confidence: np.ndarray  # (J,) in [0, 1]
    timestamp: int

    def __post_init__(self):
        object.__setattr__(self, "positions", _frozen(self.positions))
        object.__setattr__(self, "confidence", _frozen(self.confidence))
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise ValueError("positions must be (J, 2)")
        if self.confidence.shape != (len(self.positions),):
            raise ValueError("confidence must be (J,)")
        if self.confidence.size and (
            self.confidence.min() < 0 or self.confidence.max() > 1
        ):
            raise ValueError("confidences must lie in [0, 1]")
        present = self.confidence > 0
        if not np.isfinite(self.positions[present]).all():
            raise ValueError("non-finite position with nonzero confidence")


@dataclass(frozen=True)
class KeypointTrack:
    frames: tuple[KeypointFrame, ...]
    joint_names: tuple[str, ...]
    symmetric_pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(
            self, "symmetric_pairs",
            tuple((int(i), int(j)) for i, j in self.symmetric_pairs),
        )
        J = len(self.joint_names)
        for f in self.frames:
            if len(f.positions) != J:
                raise ValueError("frame joint count does not match joint_names")
        ts = [f.timestamp for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("frame timestamps must be strictly increasing")
        for i, j in self.symmetric_pairs:
            if not (0 <= i < J and 0 <= j < J) or i == j:
                raise ValueError("bad symmetric pair indices")

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    def positions_array(self) -> np.ndarray:
        """(N, J, 2) stacked positions."""
        return np.stack([f.positions for f in self.frames])

    def confidence_array(self) -> np.ndarray:
        return np.stack([f.confidence for f in self.frames])

    def joint_index(self, name: str) -> int:
        return self.joint_names.index(name)

    def to_dict(self) -> dict:
        return {
            "joints": list(self.joint_names),
            "symmetric_pairs": [list(p) for p in self.symmetric_pairs],
            "frames": [
                {
                    "t": int(f.timestamp),
                    "points": [
                        [float(x), float(y), float(c)]
                        for (x, y), c in zip(f.positions, f.confidence)
                    ],
                }
                for f in self.frames
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KeypointTrack":
        frames = []
        for fd in d["frames"]:
            pts = np.array([[p[0], p[1]] for p in fd["points"]], dtype=np.float64)
            conf = np.array([p[2] for p in fd["points"]], dtype=np.float64)
            frames.append(KeypointFrame(pts, conf, int(fd["t"])))
        return cls(
            tuple(frames),
            tuple(d["joints"]),
            tuple((p[0], p[1]) for p in d.get("symmetric_pairs", [])),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "KeypointTrack":
        return cls.from_dict(json.loads(Path(path).read_text()))


def track_from_arrays(positions, confidence, joint_names, symmetric_pairs,
                      timestamps=None) -> KeypointTrack:
    """Build a track from (N, J, 2) positions and (N, J) confidences."""
    positions = np.asarray(positions, dtype=np.float64)
    confidence = np.asarray(confidence, dtype=np.float64)
    n = len(positions)
    if timestamps is None:
        timestamps = range(n)
    frames = tuple(
        KeypointFrame(positions[i], confidence[i], int(t))
        for i, t in zip(range(n), timestamps)
    )
    return KeypointTrack(frames, tuple(joint_names), tuple(symmetric_pairs))
