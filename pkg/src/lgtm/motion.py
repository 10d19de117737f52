"""Full-body motion representation and the six-way body-part partition.

A motion clip is an ``(F, 263)`` float array with the feature blocks laid out
per frame as

    [0]        root angular velocity around the vertical (y) axis, rad/frame
    [1:3]      root linear velocity on the ground (x-z) plane, units/frame
    [3]        root height
    [4:67]     joint-local positions, 3 values for each non-root joint (21 * 3)
    [67:193]   joint 6D rotations, 6 values for each non-root joint  (21 * 6)
    [193:259]  joint-local velocities, 3 values for every joint      (22 * 3)
    [259:263]  foot contact indicators (left ankle, left foot,
               right ankle, right foot)

for the standard 22-joint SMPL skeleton:

    idx  joint            idx  joint            idx  joint
     0   pelvis (root)     8   right_ankle      16   left_shoulder
     1   left_hip          9   spine3           17   right_shoulder
     2   right_hip        10   left_foot        18   left_elbow
     3   spine1           11   right_foot       19   right_elbow
     4   left_knee        12   neck             20   left_wrist
     5   right_knee       13   left_collar      21   right_wrist
     6   spine2           14   right_collar
     7   left_ankle       15   head

The skeleton is split into six parts.  Each part re-tiles its own columns as
``[positions | rotations | velocities | extras]`` with joints in ascending
skeleton index; the torso additionally carries the four root-dynamics scalars
and the legs carry their two contact channels.  Part widths are
head 24, each arm 48, torso 43, each leg 50, summing to 263.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

NUM_JOINTS = 22
FEATURE_DIM = 263
DEFAULT_FPS = 20.0

# Feature-block column ranges.
ROOT_ANG_VEL = slice(0, 1)
ROOT_LIN_VEL = slice(1, 3)
ROOT_HEIGHT = slice(3, 4)
POSITIONS = slice(4, 67)
ROTATIONS = slice(67, 193)
VELOCITIES = slice(193, 259)
CONTACTS = slice(259, 263)

PART_NAMES = ("head", "left_arm", "right_arm", "torso", "left_leg", "right_leg")
PART_WIDTHS = {
    "head": 24,
    "left_arm": 48,
    "right_arm": 48,
    "torso": 43,
    "left_leg": 50,
    "right_leg": 50,
}

# Joint assignment: head gets neck+head, arms collar/shoulder/elbow/wrist,
# torso root+spine chain, legs hip/knee/ankle/foot.
PART_JOINTS = {
    "head": (12, 15),
    "left_arm": (13, 16, 18, 20),
    "right_arm": (14, 17, 19, 21),
    "torso": (0, 3, 6, 9),
    "left_leg": (1, 4, 7, 10),
    "right_leg": (2, 5, 8, 11),
}

# Contact channels in feature order; each leg owns two of them.
CONTACT_JOINTS = (7, 10, 8, 11)  # left ankle, left foot, right ankle, right foot
PART_CONTACT_CHANNELS = {"left_leg": (0, 1), "right_leg": (2, 3)}

ROOT_JOINT = 0


class MotionError(ValueError):
    """Structural problem with motion data (wrong width, frame mismatch, ...)."""


def position_columns(joint: int) -> np.ndarray:
    """Feature columns holding the local position of a non-root joint."""
    if joint == ROOT_JOINT:
        raise MotionError("root joint has no entry in the position block")
    start = POSITIONS.start + (joint - 1) * 3
    return np.arange(start, start + 3)


def rotation_columns(joint: int) -> np.ndarray:
    if joint == ROOT_JOINT:
        raise MotionError("root joint has no entry in the rotation block")
    start = ROTATIONS.start + (joint - 1) * 6
    return np.arange(start, start + 6)


def velocity_columns(joint: int) -> np.ndarray:
    start = VELOCITIES.start + joint * 3
    return np.arange(start, start + 3)


@dataclass(frozen=True)
class SkeletonMap:
    """Assignment of joints and contact channels to the six body parts.

    ``part_columns[name]`` is the ordered array of feature columns owned by
    that part; together the six arrays are a permutation of ``range(263)``.
    """

    part_joints: Mapping[str, tuple[int, ...]] = field(
        default_factory=lambda: dict(PART_JOINTS)
    )
    part_columns: dict[str, np.ndarray] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        joints = sorted(j for js in self.part_joints.values() for j in js)
        if tuple(self.part_joints) != PART_NAMES:
            raise MotionError(f"parts must be exactly {PART_NAMES}")
        if joints != list(range(NUM_JOINTS)):
            raise MotionError("each of the 22 joints must belong to exactly one part")
        if ROOT_JOINT not in self.part_joints["torso"]:
            raise MotionError("torso must own the root joint")

        columns: dict[str, np.ndarray] = {}
        for name in PART_NAMES:
            cols: list[np.ndarray] = []
            owned = tuple(sorted(self.part_joints[name]))
            cols.extend(position_columns(j) for j in owned if j != ROOT_JOINT)
            cols.extend(rotation_columns(j) for j in owned if j != ROOT_JOINT)
            cols.extend(velocity_columns(j) for j in owned)
            if name == "torso":
                cols.append(np.arange(ROOT_ANG_VEL.start, ROOT_HEIGHT.stop))
            if name in PART_CONTACT_CHANNELS:
                chans = np.asarray(PART_CONTACT_CHANNELS[name])
                cols.append(CONTACTS.start + chans)
            columns[name] = np.concatenate(cols)

        widths = {name: len(c) for name, c in columns.items()}
        if widths != PART_WIDTHS:
            raise MotionError(f"part widths {widths} != required {PART_WIDTHS}")
        if sum(widths.values()) != FEATURE_DIM:
            raise MotionError("part widths must sum to 263")
        all_cols = np.concatenate([columns[name] for name in PART_NAMES])
        if not np.array_equal(np.sort(all_cols), np.arange(FEATURE_DIM)):
            raise MotionError("part columns must form a permutation of 0..262")
        object.__setattr__(self, "part_columns", columns)

    def columns_for(self, part: str) -> np.ndarray:
        return self.part_columns[part]

    def width_of(self, part: str) -> int:
        return PART_WIDTHS[part]


def default_skeleton() -> SkeletonMap:
    return SkeletonMap()


@dataclass
class MotionSequence:
    """One motion clip: an ``(F, 263)`` float32 feature array plus metadata."""

    features: np.ndarray
    fps: float = DEFAULT_FPS
    clip_id: str = ""

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float32)

    @property
    def frames(self) -> int:
        return int(self.features.shape[0])

    def copy(self) -> "MotionSequence":
        return MotionSequence(self.features.copy(), fps=self.fps, clip_id=self.clip_id)


@dataclass
class ValidationReport:
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate(motion: MotionSequence) -> ValidationReport:
    """Check width, finiteness, frame count, and contact range.

    Reporting only: every violated check is listed, nothing raises.
    """
    violations: list[str] = []
    feats = motion.features
    if feats.ndim != 2 or feats.shape[1] != FEATURE_DIM:
        violations.append(f"width: expected (F, {FEATURE_DIM}), got {feats.shape}")
        return ValidationReport(violations)
    if feats.shape[0] < 1:
        violations.append("frames: F must be >= 1")
    if not np.isfinite(feats).all():
        violations.append("finiteness: non-finite values present")
    else:
        contacts = feats[:, CONTACTS]
        if contacts.size and (contacts.min() < 0.0 or contacts.max() > 1.0):
            violations.append("contact_range: contact values outside [0, 1]")
    return ValidationReport(violations)


@dataclass
class PartSet:
    """Six per-part motion arrays sharing one frame count."""

    parts: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        if set(self.parts) != set(PART_NAMES):
            raise MotionError(f"parts must be exactly {PART_NAMES}, got {tuple(self.parts)}")
        frames = {name: arr.shape[0] for name, arr in self.parts.items()}
        if len(set(frames.values())) != 1:
            raise MotionError(f"frame counts differ across parts: {frames}")
        for name, arr in self.parts.items():
            if arr.ndim != 2 or arr.shape[1] != PART_WIDTHS[name]:
                raise MotionError(
                    f"part {name!r} must be (F, {PART_WIDTHS[name]}), got {arr.shape}"
                )

    @property
    def frames(self) -> int:
        return int(next(iter(self.parts.values())).shape[0])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.parts[name]


def partition(motion: MotionSequence, skel: SkeletonMap | None = None) -> PartSet:
    """Split a motion into the six part arrays (pure column permutation)."""
    skel = skel or default_skeleton()
    feats = motion.features
    if feats.ndim != 2 or feats.shape[1] != FEATURE_DIM:
        raise MotionError(f"expected (F, {FEATURE_DIM}) features, got {feats.shape}")
    return PartSet({name: feats[:, skel.part_columns[name]] for name in PART_NAMES})


def recompose(parts: PartSet, skel: SkeletonMap | None = None) -> MotionSequence:
    """Inverse of :func:`partition`; bit-exact (no arithmetic, columns only)."""
    skel = skel or default_skeleton()
    frames = parts.frames
    out = np.empty((frames, FEATURE_DIM), dtype=np.float32)
    for name in PART_NAMES:
        out[:, skel.part_columns[name]] = parts[name]
    return MotionSequence(out)


STD_FLOOR = 1e-6


@dataclass
class FeatureStats:
    """Per-column mean/std over a corpus; std floor-clamped away from zero."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.std = np.asarray(self.std, dtype=np.float64).reshape(-1)
        if self.mean.shape != (FEATURE_DIM,) or self.std.shape != (FEATURE_DIM,):
            raise MotionError("stats must have width 263")
        if (self.std <= 0).any():
            raise MotionError("std must be strictly positive")

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, payload: Mapping) -> "FeatureStats":
        return cls(np.asarray(payload["mean"]), np.asarray(payload["std"]))


def compute_stats(corpus: Sequence[MotionSequence] | Iterable[MotionSequence]) -> FeatureStats:
    """Column mean/std over all frames of all clips, std floored at 1e-6."""
    total = 0
    acc = np.zeros(FEATURE_DIM, dtype=np.float64)
    acc_sq = np.zeros(FEATURE_DIM, dtype=np.float64)
    for motion in corpus:
        feats = motion.features.astype(np.float64)
        if feats.shape[1] != FEATURE_DIM:
            raise MotionError(f"clip width {feats.shape[1]} != {FEATURE_DIM}")
        total += feats.shape[0]
        acc += feats.sum(axis=0)
        acc_sq += (feats * feats).sum(axis=0)
    if total == 0:
        raise MotionError("cannot compute stats over an empty corpus")
    mean = acc / total
    var = np.maximum(acc_sq / total - mean * mean, 0.0)
    std = np.maximum(np.sqrt(var), STD_FLOOR)
    return FeatureStats(mean, std)


def normalize(motion: MotionSequence, stats: FeatureStats) -> MotionSequence:
    if motion.features.shape[1] != FEATURE_DIM:
        raise MotionError(f"width mismatch: {motion.features.shape}")
    out = (motion.features - stats.mean) / stats.std
    return MotionSequence(out.astype(np.float32), fps=motion.fps, clip_id=motion.clip_id)


def denormalize(motion: MotionSequence, stats: FeatureStats) -> MotionSequence:
    if motion.features.shape[1] != FEATURE_DIM:
        raise MotionError(f"width mismatch: {motion.features.shape}")
    out = motion.features * stats.std + stats.mean
    return MotionSequence(out.astype(np.float32), fps=motion.fps, clip_id=motion.clip_id)


# ---------------------------------------------------------------------------
# Clip file format: <id>.bin (raw little-endian float32, row-major F x 263)
# next to <id>.json {"frames": F, "features": 263, "fps": ..., "id": ...}.
# ---------------------------------------------------------------------------


def save_motion(path: str | Path, motion: MotionSequence) -> Path:
    """Write ``path`` (.bin) plus its JSON sidecar; returns the .bin path."""
    path = Path(path).with_suffix(".bin")
    report = validate(motion)
    if not report.ok:
        raise MotionError(f"refusing to save invalid motion: {report.violations}")
    payload = np.ascontiguousarray(motion.features, dtype="<f4")
    path.write_bytes(payload.tobytes())
    sidecar = {
        "frames": motion.frames,
        "features": FEATURE_DIM,
        "fps": motion.fps,
        "id": motion.clip_id or path.stem,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar), encoding="utf-8")
    return path


def load_motion(path: str | Path) -> MotionSequence:
    path = Path(path).with_suffix(".bin")
    sidecar_path = path.with_suffix(".json")
    if not path.exists():
        raise MotionError(f"missing motion payload: {path}")
    if not sidecar_path.exists():
        raise MotionError(f"missing sidecar: {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    frames = int(sidecar["frames"])
    width = int(sidecar.get("features", FEATURE_DIM))
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size != frames * width:
        raise MotionError(
            f"{path}: payload has {raw.size} floats, sidecar promises {frames}x{width}"
        )
    feats = raw.reshape(frames, width).copy()
    return MotionSequence(
        feats,
        fps=float(sidecar.get("fps", DEFAULT_FPS)),
        clip_id=str(sidecar.get("id", path.stem)),
    )


@dataclass
class CaptionEntry:
    """One caption line; optional start/end crop in seconds."""

    text: str
    start: float | None = None
    end: float | None = None

    def crop_frames(self, fps: float, frames: int) -> tuple[int, int]:
        """Frame range selected by this caption (whole clip when uncropped)."""
        if self.start is None or self.end is None or (self.start == 0.0 and self.end == 0.0):
            return 0, frames
        lo = max(0, int(round(self.start * fps)))
        hi = min(frames, int(round(self.end * fps)))
        if hi <= lo:
            raise MotionError(f"caption crop [{self.start}, {self.end}]s selects no frames")
        return lo, hi


def parse_caption_line(line: str) -> CaptionEntry | None:
    """Parse a ``caption#tokens#start#end`` line; fields after the caption are
    optional and ignored except for start/end cropping. Returns None for
    blank lines."""
    line = line.strip()
    if not line:
        return None
    fields = line.split("#")
    text = fields[0].strip()
    if not text:
        return None
    start = end = None
    if len(fields) >= 4:
        try:
            start = float(fields[-2])
            end = float(fields[-1])
        except ValueError:
            start = end = None
    return CaptionEntry(text=text, start=start, end=end)


def load_captions(path: str | Path) -> list[CaptionEntry]:
    entries = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        entry = parse_caption_line(line)
        if entry is not None:
            entries.append(entry)
    return entries
