"""Procedural toy corpus: 16 small clips with known captions and known
per-part narratives.

Clips are built in the 263-column feature representation on a fixed stick
skeleton (root at height 0.9, feet just above the ground).  Each clip
composes a few part-level primitives (waves, kicks, nods, bends, walking),
so the ground-truth routing of motion to body parts is known by
construction.  That gives part-semantics tests real labels without any
external dataset.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .motion import (
    CONTACTS,
    DEFAULT_FPS,
    FEATURE_DIM,
    MotionSequence,
    NUM_JOINTS,
    ROOT_ANG_VEL,
    ROOT_HEIGHT,
    ROOT_LIN_VEL,
    position_columns,
    rotation_columns,
    save_motion,
    validate,
    velocity_columns,
)
from .text_partition import IDLE_PHRASE, PartTexts

TOY_FRAMES = 32
ROOT_HEIGHT_STAND = 0.9

# Root-relative joint offsets (x, y, z); y is relative to the root height, so
# a foot at -0.88 sits at world height 0.02 when standing.
BASE_OFFSETS = {
    1: (0.10, -0.05, 0.0),   # l_hip
    2: (-0.10, -0.05, 0.0),  # r_hip
    3: (0.0, 0.10, 0.0),     # spine1
    4: (0.10, -0.45, 0.0),   # l_knee
    5: (-0.10, -0.45, 0.0),  # r_knee
    6: (0.0, 0.22, 0.0),     # spine2
    7: (0.10, -0.82, 0.0),   # l_ankle
    8: (-0.10, -0.82, 0.0),  # r_ankle
    9: (0.0, 0.34, 0.0),     # spine3
    10: (0.10, -0.88, 0.12),  # l_foot
    11: (-0.10, -0.88, 0.12),  # r_foot
    12: (0.0, 0.46, 0.0),    # neck
    13: (0.08, 0.42, 0.0),   # l_collar
    14: (-0.08, 0.42, 0.0),  # r_collar
    15: (0.0, 0.58, 0.0),    # head
    16: (0.18, 0.40, 0.0),   # l_shoulder
    17: (-0.18, 0.40, 0.0),  # r_shoulder
    18: (0.22, 0.15, 0.0),   # l_elbow
    19: (-0.22, 0.15, 0.0),  # r_elbow
    20: (0.24, -0.08, 0.0),  # l_wrist
    21: (-0.24, -0.08, 0.0),  # r_wrist
}

LEG_JOINTS = {"left": (1, 4, 7, 10), "right": (2, 5, 8, 11)}
ARM_JOINTS = {"left": (13, 16, 18, 20), "right": (14, 17, 19, 21)}
IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0], dtype=np.float64)


@dataclass
class ToyClip:
    clip_id: str
    caption: str
    part_texts: PartTexts
    motion: MotionSequence


class _ClipBuilder:
    """Accumulates per-part primitives, then assembles the feature array."""

    def __init__(self, frames: int, fps: float, rng: np.random.Generator):
        self.frames = frames
        self.fps = fps
        self.rng = rng
        self.t = np.arange(frames, dtype=np.float64)
        self.pos = np.zeros((frames, NUM_JOINTS, 3))
        for joint, offset in BASE_OFFSETS.items():
            self.pos[:, joint] = offset
        self.height = np.full(frames, ROOT_HEIGHT_STAND)
        self.ang_vel = np.zeros(frames)
        self.lin_vel = np.zeros((frames, 2))
        self.contacts = np.ones((frames, 4))  # (l_ankle, l_foot, r_ankle, r_foot)
        self.texts = {name: [] for name in PartTexts.idle().as_dict()}

    def _phase(self) -> float:
        return float(self.rng.uniform(0.0, 2.0 * math.pi))

    def _cycles(self, lo: float = 1.5, hi: float = 2.5) -> np.ndarray:
        omega = 2.0 * math.pi * self.rng.uniform(lo, hi) / self.frames
        return omega * self.t + self._phase()

    def say(self, part: str, text: str) -> None:
        self.texts[part].append(text)

    def wave(self, side: str, text: str) -> None:
        _, shoulder, elbow, wrist = ARM_JOINTS[side]
        arg = self._cycles()
        self.pos[:, wrist, 1] += 0.55 + 0.08 * np.sin(arg)
        self.pos[:, wrist, 0] += 0.10 * np.cos(arg) * (1 if side == "left" else -1)
        self.pos[:, elbow, 1] += 0.30 + 0.04 * np.sin(arg)
        self.pos[:, shoulder, 1] += 0.02
        self.say(f"{side}_arm", text)

    def raise_arm(self, side: str, text: str) -> None:
        _, _, elbow, wrist = ARM_JOINTS[side]
        envelope = 0.5 * (1.0 - np.cos(np.pi * np.minimum(1.0, 2.0 * self.t / self.frames)))
        self.pos[:, wrist, 1] += 0.60 * envelope
        self.pos[:, elbow, 1] += 0.30 * envelope
        self.say(f"{side}_arm", text)

    def nod(self, text: str) -> None:
        arg = self._cycles()
        self.pos[:, 15, 2] += 0.05 * np.sin(arg)
        self.pos[:, 15, 1] -= 0.02 * (1.0 - np.cos(arg)) / 2.0
        self.pos[:, 12, 2] += 0.02 * np.sin(arg)
        self.say("head", text)

    def bend(self, text: str, depth: float = 0.15) -> None:
        envelope = depth * (1.0 - np.cos(2.0 * np.pi * self.t / self.frames)) / 2.0
        self.height -= envelope
        # Legs keep their world height while the root dips.
        for joints in LEG_JOINTS.values():
            for joint in joints:
                self.pos[:, joint, 1] += envelope
        for joint in (3, 6, 9, 12, 15):
            self.pos[:, joint, 2] += 0.3 * envelope
        self.say("torso", text)

    def kick(self, side: str, text: str) -> None:
        hip, knee, ankle, foot = LEG_JOINTS[side]
        arg = self._cycles()
        lift = np.abs(np.sin(arg))
        self.pos[:, foot, 1] += 0.25 * lift
        self.pos[:, foot, 2] += 0.20 * lift
        self.pos[:, ankle, 1] += 0.22 * lift
        self.pos[:, ankle, 2] += 0.18 * lift
        self.pos[:, knee, 2] += 0.10 * lift
        channels = (0, 1) if side == "left" else (2, 3)
        self.contacts[:, channels] = 0.0
        self.say(f"{side}_leg", text)

    def walk(self, text: str, speed: float = 0.012) -> None:
        self.lin_vel[:, 1] += speed  # forward (z) advance per frame
        arg = self._cycles(1.5, 2.0)
        swing = np.sin(arg)
        self.pos[:, 10, 1] += 0.05 * np.maximum(0.0, swing)
        self.pos[:, 7, 1] += 0.04 * np.maximum(0.0, swing)
        self.pos[:, 11, 1] += 0.05 * np.maximum(0.0, -swing)
        self.pos[:, 8, 1] += 0.04 * np.maximum(0.0, -swing)
        self.contacts[:, (0, 1)] = (swing <= 0.0)[:, None]
        self.contacts[:, (2, 3)] = (swing > 0.0)[:, None]
        self.say("left_leg", text)
        self.say("right_leg", text)

    def turn(self, text: str, rate: float = 0.02) -> None:
        self.ang_vel += rate
        self.say("torso", text)

    def build(self) -> np.ndarray:
        feats = np.zeros((self.frames, FEATURE_DIM))
        feats[:, ROOT_ANG_VEL] = self.ang_vel[:, None]
        feats[:, ROOT_LIN_VEL] = self.lin_vel
        feats[:, ROOT_HEIGHT] = self.height[:, None]
        for joint in range(1, NUM_JOINTS):
            feats[:, position_columns(joint)] = self.pos[:, joint]
            feats[:, rotation_columns(joint)] = IDENTITY_6D
        # Per-frame displacement of each joint, last row repeated.
        vel = np.diff(self.pos, axis=0)
        vel = np.concatenate([vel, vel[-1:]], axis=0)
        vel[:, 0, 0] = self.lin_vel[:, 0]
        vel[:, 0, 2] = self.lin_vel[:, 1]
        for joint in range(NUM_JOINTS):
            feats[:, velocity_columns(joint)] = vel[:, joint]
        feats[:, CONTACTS] = self.contacts
        return feats.astype(np.float32)

    def part_texts(self) -> PartTexts:
        parts = {
            name: ", ".join(clauses) if clauses else IDLE_PHRASE
            for name, clauses in self.texts.items()
        }
        return PartTexts(parts, source="manual")


def build_toy_corpus(
    frames: int = TOY_FRAMES, fps: float = DEFAULT_FPS, seed: int = 0
) -> list[ToyClip]:
    recipes = [
        ("a person stands still.", []),
        ("a person waves the right hand.", [("wave", "right", "waves the right hand")]),
        ("a person waves the left hand.", [("wave", "left", "waves the left hand")]),
        ("a person nods the head.", [("nod", "nods the head")]),
        ("a person bends the torso forward.", [("bend", "bends the torso forward")]),
        ("a person kicks the right leg.", [("kick", "right", "kicks the right leg")]),
        ("a person kicks the left leg.", [("kick", "left", "kicks the left leg")]),
        ("a person walks forward.", [("walk", "walks forward")]),
        (
            "a person waves the right hand and walks forward.",
            [("wave", "right", "waves the right hand"), ("walk", "walks forward")],
        ),
        (
            "a person nods the head and waves the left hand.",
            [("nod", "nods the head"), ("wave", "left", "waves the left hand")],
        ),
        (
            "a person bends the torso and waves the right hand.",
            [("bend", "bends the torso"), ("wave", "right", "waves the right hand")],
        ),
        (
            "a person walks forward and nods the head.",
            [("walk", "walks forward"), ("nod", "nods the head")],
        ),
        (
            "a person raises both arms.",
            [("raise", "left", "raises both arms"), ("raise", "right", "raises both arms")],
        ),
        (
            "a person turns to the left while walking.",
            [("turn", "turns to the left"), ("walk", "walking")],
        ),
        (
            "a person bends down low.",
            [("bend2", "bends down low")],
        ),
        (
            "a person waves both hands and kicks the right leg.",
            [
                ("wave", "left", "waves both hands"),
                ("wave", "right", "waves both hands"),
                ("kick", "right", "kicks the right leg"),
            ],
        ),
    ]
    clips = []
    for i, (caption, steps) in enumerate(recipes):
        builder = _ClipBuilder(frames, fps, np.random.default_rng(seed * 1000 + i))
        for step in steps:
            if step[0] == "wave":
                builder.wave(step[1], step[2])
            elif step[0] == "raise":
                builder.raise_arm(step[1], step[2])
            elif step[0] == "kick":
                builder.kick(step[1], step[2])
            elif step[0] == "nod":
                builder.nod(step[1])
            elif step[0] == "bend":
                builder.bend(step[1])
            elif step[0] == "bend2":
                builder.bend(step[1], depth=0.3)
            elif step[0] == "walk":
                builder.walk(step[1])
            elif step[0] == "turn":
                builder.turn(step[1])
            else:
                raise ValueError(f"unknown primitive {step[0]!r}")
        clip_id = f"toy{i:03d}"
        motion = MotionSequence(builder.build(), fps=fps, clip_id=clip_id)
        report = validate(motion)
        if not report.ok:
            raise AssertionError(f"toy clip {clip_id} invalid: {report.violations}")
        clips.append(ToyClip(clip_id, caption, builder.part_texts(), motion))
    return clips


def write_toy_corpus(
    out_dir: str | Path,
    frames: int = TOY_FRAMES,
    fps: float = DEFAULT_FPS,
    seed: int = 0,
    include_part_sidecars: bool = False,
) -> list[ToyClip]:
    """Write the corpus in the dataset layout (motions/, texts/).

    With ``include_part_sidecars`` the known per-part narratives are written
    as manual overrides next to the captions; by default they are left out so
    decomposition precomputation exercises its own routing.
    """
    out_dir = Path(out_dir)
    (out_dir / "motions").mkdir(parents=True, exist_ok=True)
    (out_dir / "texts").mkdir(parents=True, exist_ok=True)
    clips = build_toy_corpus(frames, fps, seed)
    for clip in clips:
        save_motion(out_dir / "motions" / f"{clip.clip_id}.bin", clip.motion)
        caption_path = out_dir / "texts" / f"{clip.clip_id}.txt"
        caption_path.write_text(clip.caption + "\n", encoding="utf-8")
        if include_part_sidecars:
            sidecar = out_dir / "texts" / f"{clip.clip_id}.parts.json"
            sidecar.write_text(
                json.dumps({clip.caption: clip.part_texts.as_dict()}, indent=2),
                encoding="utf-8",
            )
    return clips
