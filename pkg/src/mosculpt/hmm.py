"""Temporal left/right relabeling of keypoint tracks.

Detectors occasionally swap symmetric joints (left vs right shoulder)
between adjacent frames. The hidden state of a frame is which symmetric
pairs are swapped; detections are the observations. Emission log-density
is the sum of detection confidences under the state's relabeling, and the
transition between adjacent frames scores squared displacement of the
relabeled positions with scale sigma. User-anchored frames are clamped to
the identity (no-swap) state. Per-frame states are the maximum-marginal
assignment from forward-backward.

The exact densities used by the original system are not published; the
pair-swap state space targets the failure mode it reports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .keypoints import KeypointFrame, KeypointTrack


@dataclass(frozen=True)
class FlipState:
    """Per-pair swap assignment for one frame."""

    swapped: tuple[bool, ...]

    @property
    def is_identity(self) -> bool:
        return not any(self.swapped)


@dataclass(frozen=True)
class AnchorSet:
    """Frames the user confirmed fully correct; clamped to identity."""

    frames: frozenset[int]

    def __init__(self, frames=()):
        object.__setattr__(self, "frames", frozenset(int(f) for f in frames))

    def validate(self, num_frames: int) -> None:
        for f in self.frames:
            if not 0 <= f < num_frames:
                raise ValueError(f"anchor frame {f} outside [0, {num_frames})")


@dataclass(frozen=True)
class SmoothResult:
    track: KeypointTrack
    states: tuple[FlipState, ...]
    marginals: np.ndarray  # (N, P) probability that pair p is swapped at frame t

    @property
    def num_swapped_frames(self) -> int:
        return sum(1 for s in self.states if not s.is_identity)


def default_transition_scale(width: int, height: int) -> float:
    """Default sigma: 5% of the image diagonal."""
    return 0.05 * float(np.hypot(width, height))


def _relabeled(positions, confidence, pairs, swap_bits):
    pos = positions.copy()
    conf = confidence.copy()
    for (i, j), bit in zip(pairs, swap_bits):
        if bit:
            pos[[i, j]] = pos[[j, i]]
            conf[[i, j]] = conf[[j, i]]
    return pos, conf


def _pair_chain_logs(positions, confidence, pair, sigma, anchored):
    """Emission (N, 2) and transition (N-1, 2, 2) log-densities for one pair."""
    n = len(positions)
    i, j = pair
    # Emission: relabeled confidence sum. Swapping a pair permutes the same
    # two values, so this is flat across states; anchors are the informative
    # part of the emission.
    base = confidence[:, [i, j]].sum(axis=1)
    log_e = np.stack([base, base], axis=1)
    for t in anchored:
        log_e[t, 1] = -np.inf

    pos = positions[:, [i, j], :]  # (N, 2 joints, 2)
    present = (confidence[:, [i, j]] > 0.0)  # (N, 2)
    log_t = np.zeros((n - 1, 2, 2))
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    for t in range(n - 1):
        both = present[t] & present[t + 1]
        for s in range(2):
            a = pos[t, ::-1] if s else pos[t]
            pa = present[t, ::-1] if s else present[t]
            for s2 in range(2):
                b = pos[t + 1, ::-1] if s2 else pos[t + 1]
                pb = present[t + 1, ::-1] if s2 else present[t + 1]
                use = pa & pb
                d2 = ((a[use] - b[use]) ** 2).sum()
                log_t[t, s, s2] = -d2 * inv2s2
        del both
    return log_e, log_t


def _forward_backward(log_e, log_t):
    """Normalized per-frame marginals of a chain with per-step transitions."""
    n, S = log_e.shape
    alphas = np.empty((n, S))
    a = log_e[0] - _logsumexp(log_e[0])
    alphas[0] = a
    for t in range(n - 1):
        m = a[:, None] + log_t[t]
        a = _logsumexp_axis0(m) + log_e[t + 1]
        a -= _logsumexp(a)
        alphas[t + 1] = a
    betas = np.zeros((n, S))
    b = np.zeros(S)
    for t in range(n - 2, -1, -1):
        m = log_t[t] + (log_e[t + 1] + b)[None, :]
        b = _logsumexp_axis1(m)
        b -= b.max()
        betas[t] = b
    log_m = alphas + betas
    marg = np.empty((n, S))
    for t in range(n):
        row = log_m[t] - _logsumexp(log_m[t])
        marg[t] = np.exp(row)
        marg[t] /= marg[t].sum()
    return marg


def _logsumexp(v):
    m = np.max(v)
    if not np.isfinite(m):
        return m
    return m + np.log(np.exp(v - m).sum())


def _logsumexp_axis0(m):
    mx = m.max(axis=0)
    out = np.where(
        np.isfinite(mx), mx + np.log(np.exp(m - mx[None, :]).sum(axis=0)), mx
    )
    return out


def _logsumexp_axis1(m):
    return _logsumexp_axis0(m.T)


def _joint_chain_logs(positions, confidence, pairs, sigma, anchored):
    """Emission/transition logs over the full 2^P swap space."""
    n = len(positions)
    P = len(pairs)
    S = 1 << P
    states = [tuple((s >> p) & 1 for p in range(P)) for s in range(S)]
    log_e = np.empty((n, S))
    relabeled = np.empty((n, S, positions.shape[1], 2))
    present = np.empty((n, S, positions.shape[1]), dtype=bool)
    for t in range(n):
        for s, bits in enumerate(states):
            pos, conf = _relabeled(positions[t], confidence[t], pairs, bits)
            log_e[t, s] = conf.sum()
            relabeled[t, s] = pos
            present[t, s] = conf > 0
    for t in anchored:
        log_e[t, 1:] = -np.inf
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    log_t = np.empty((n - 1, S, S))
    for t in range(n - 1):
        for s in range(S):
            for s2 in range(S):
                use = present[t, s] & present[t + 1, s2]
                d2 = ((relabeled[t, s, use] - relabeled[t + 1, s2, use]) ** 2).sum()
                log_t[t, s, s2] = -d2 * inv2s2
    return log_e, log_t, states


def smooth_track(
    track: KeypointTrack,
    anchors: AnchorSet | None = None,
    transition_scale: float = 50.0,
    joint_chain: bool = False,
) -> SmoothResult:
    """Correct left/right flips; returns the relabeled track and chosen states.

    transition_scale is sigma in pixels. With joint_chain=True inference runs
    over the combined 2^P state space instead of independent per-pair chains
    (the densities factorize over pairs, so both give the same marginals).
    """
    if track.num_frames < 1:
        raise ValueError("track must contain at least one frame")
    if transition_scale <= 0:
        raise ValueError("transition_scale must be positive")
    anchors = anchors or AnchorSet()
    anchors.validate(track.num_frames)
    anchored = sorted(anchors.frames)

    positions = track.positions_array()
    confidence = track.confidence_array()
    n = track.num_frames
    pairs = track.symmetric_pairs
    P = len(pairs)
    swap_marginals = np.zeros((n, P))

    if P and n >= 1:
        if joint_chain:
            log_e, log_t, states = _joint_chain_logs(
                positions, confidence, pairs, transition_scale, anchored
            )
            marg = (
                _forward_backward(log_e, log_t)
                if n > 1
                else np.exp(log_e - _logsumexp(log_e[0]))
            )
            if n == 1:
                marg = marg / marg.sum(axis=1, keepdims=True)
            for p in range(P):
                sel = np.array([bits[p] for bits in states], dtype=bool)
                swap_marginals[:, p] = marg[:, sel].sum(axis=1)
        else:
            for p, pair in enumerate(pairs):
                log_e, log_t = _pair_chain_logs(
                    positions, confidence, pair, transition_scale, anchored
                )
                if n > 1:
                    marg = _forward_backward(log_e, log_t)
                else:
                    row = log_e[0] - _logsumexp(log_e[0])
                    marg = np.exp(row)[None, :]
                    marg /= marg.sum()
                swap_marginals[:, p] = marg[:, 1]

    # Maximum-marginal decision per pair and frame; exact ties keep identity.
    decisions = swap_marginals > 0.5
    states_out = tuple(
        FlipState(tuple(bool(b) for b in decisions[t])) for t in range(n)
    )

    frames = []
    for t, frame in enumerate(track.frames):
        if states_out[t].is_identity:
            frames.append(frame)
        else:
            pos, conf = _relabeled(
                frame.positions, frame.confidence, pairs, states_out[t].swapped
            )
            frames.append(KeypointFrame(pos, conf, frame.timestamp))
    out = KeypointTrack(tuple(frames), track.joint_names, track.symmetric_pairs)
    return SmoothResult(out, states_out, swap_marginals)
