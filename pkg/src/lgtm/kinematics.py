"""Recover world-space joint positions from the feature encoding.

The root trajectory is integrated forward Euler style: the heading angle is
the running sum of per-frame angular velocity, the planar velocity is rotated
by the heading at the frame it lands on and accumulated, and height is read
directly.  Joint-local positions are then rotated by the per-frame heading and
translated by the root.  The convention mirrors how the velocities are laid
down per frame: frame k's pose is reached by applying the velocities stored at
frame k-1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .motion import (
    CONTACT_JOINTS,
    DEFAULT_FPS,
    MotionError,
    MotionSequence,
    NUM_JOINTS,
    POSITIONS,
    ROOT_ANG_VEL,
    ROOT_HEIGHT,
    ROOT_LIN_VEL,
)

# Defaults follow common HumanML3D-scale preprocessing.
CONTACT_VELOCITY_THRESHOLD = 0.002  # length-units per frame
CONTACT_HEIGHT_THRESHOLD = 0.05  # length-units
CM_PER_UNIT = 100.0


@dataclass
class GlobalPose:
    """World-space joint positions, shape (F, 22, 3), y up, ground at y=0."""

    positions: np.ndarray
    fps: float = DEFAULT_FPS

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 3 or self.positions.shape[1:] != (NUM_JOINTS, 3):
            raise MotionError(
                f"positions must be (F, {NUM_JOINTS}, 3), got {self.positions.shape}"
            )

    @property
    def frames(self) -> int:
        return int(self.positions.shape[0])


def integrate_root(
    ang_vel: np.ndarray, lin_vel: np.ndarray, height: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Integrate root dynamics into per-frame heading angles and positions.

    Returns (heading (F,), root_positions (F, 3)).  Frame 0 starts at the
    origin with zero heading; the velocity stored at frame k moves the root
    into frame k+1.
    """
    frames = ang_vel.shape[0]
    heading = np.zeros(frames, dtype=np.float64)
    heading[1:] = np.cumsum(ang_vel[:-1])

    world_vel = np.zeros((frames, 2), dtype=np.float64)
    cos_h, sin_h = np.cos(heading[1:]), np.sin(heading[1:])
    vx, vz = lin_vel[:-1, 0], lin_vel[:-1, 1]
    world_vel[1:, 0] = cos_h * vx - sin_h * vz
    world_vel[1:, 1] = sin_h * vx + cos_h * vz

    root = np.zeros((frames, 3), dtype=np.float64)
    root[:, 0] = np.cumsum(world_vel[:, 0])
    root[:, 2] = np.cumsum(world_vel[:, 1])
    root[:, 1] = height
    return heading, root


def recover_global_positions(motion: MotionSequence) -> GlobalPose:
    """World positions for all 22 joints from a (denormalized) motion."""
    feats = motion.features.astype(np.float64)
    if feats.ndim != 2 or feats.shape[1] < POSITIONS.stop:
        raise MotionError(f"unexpected feature shape {feats.shape}")

    ang_vel = feats[:, ROOT_ANG_VEL][:, 0]
    lin_vel = feats[:, ROOT_LIN_VEL]
    height = feats[:, ROOT_HEIGHT][:, 0]
    heading, root = integrate_root(ang_vel, lin_vel, height)

    local = feats[:, POSITIONS].reshape(-1, NUM_JOINTS - 1, 3)
    cos_h = np.cos(heading)[:, None]
    sin_h = np.sin(heading)[:, None]
    world = np.empty_like(local)
    world[:, :, 0] = cos_h * local[:, :, 0] - sin_h * local[:, :, 2]
    world[:, :, 1] = local[:, :, 1]
    world[:, :, 2] = sin_h * local[:, :, 0] + cos_h * local[:, :, 2]
    world += root[:, None, :]

    positions = np.concatenate([root[:, None, :], world], axis=1)
    return GlobalPose(positions, fps=motion.fps)


def joint_speeds(gp: GlobalPose) -> np.ndarray:
    """Per-frame 3D speed of every joint, (F, 22); last frame repeats."""
    if gp.frames < 2:
        raise MotionError("need at least 2 frames to compute speeds")
    deltas = np.diff(gp.positions, axis=0)
    speeds = np.linalg.norm(deltas, axis=-1)
    return np.concatenate([speeds, speeds[-1:]], axis=0)


def detect_foot_contacts(
    gp: GlobalPose,
    velocity_threshold: float = CONTACT_VELOCITY_THRESHOLD,
    height_threshold: float = CONTACT_HEIGHT_THRESHOLD,
) -> np.ndarray:
    """(F, 4) contact indicators for (l_ankle, l_foot, r_ankle, r_foot).

    A channel is 1 where its joint moves slower than ``velocity_threshold``
    per frame and sits below ``height_threshold``.
    """
    speeds = joint_speeds(gp)[:, list(CONTACT_JOINTS)]
    heights = gp.positions[:, list(CONTACT_JOINTS), 1]
    contacts = (speeds < velocity_threshold) & (heights < height_threshold)
    return contacts.astype(np.float32)
