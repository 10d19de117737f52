"""Evaluation suite: FID, Diversity, R-Precision, MM-Dist, per-part
motion-text similarity, and the physical artifact metrics.

Distributional metrics run in the embedding space of small contrastively
trained evaluation encoders (one full-body pair of towers plus one per body
part).  At this scale absolute values are not comparable to published
benchmark numbers; the suite is built to validate orderings and exact
mathematical properties instead.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .contrastive import (
    ContrastiveConfig,
    DualEncoder,
    find_ambiguous_captions,
    train_dual_encoder,
)
from .kinematics import CM_PER_UNIT, CONTACT_HEIGHT_THRESHOLD, GlobalPose
from .motion import MotionSequence, PART_NAMES, default_skeleton
from .text_partition import PartTexts

REPORT_SCHEMA = "metrics-report-v1"
EVAL_ENCODER_HEADER = "lgtm-eval-v1"
CONTACT_DECISION_THRESHOLD = 0.5


class MetricsError(ValueError):
    pass


@dataclass
class FeatureSet:
    """Rows of evaluation-space embeddings with their provenance."""

    values: np.ndarray
    origin: str  # "motion" or "text"
    encoder_id: str = "full_body"

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise MetricsError(f"expected (n, d) embeddings, got {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise MetricsError("embeddings must be finite")
        if self.origin not in ("motion", "text"):
            raise MetricsError(f"unknown origin {self.origin!r}")

    @property
    def count(self) -> int:
        return int(self.values.shape[0])

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])


def _fit_gaussian(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = x.mean(axis=0)
    cov = np.cov(x, rowvar=False)
    cov = np.atleast_2d(cov)
    return mu, cov


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(
    mu_a: np.ndarray, cov_a: np.ndarray, mu_b: np.ndarray, cov_b: np.ndarray
) -> float:
    """Closed-form Fréchet distance between two Gaussians, with the cross
    term computed through an eigendecomposition of the symmetrized product."""
    eps = 1e-6
    cov_a = cov_a + eps * np.eye(cov_a.shape[0])
    cov_b = cov_b + eps * np.eye(cov_b.shape[0])
    sqrt_a = _psd_sqrt(cov_a)
    inner = sqrt_a @ cov_b @ sqrt_a
    cross = np.sum(np.sqrt(np.clip(np.linalg.eigvalsh((inner + inner.T) / 2.0), 0.0, None)))
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * cross)
    if not np.isfinite(value):
        raise MetricsError("non-finite Fréchet distance")
    return max(value, 0.0)


def fid(a: FeatureSet, b: FeatureSet) -> float:
    if a.count < 2 or b.count < 2:
        raise MetricsError("need at least 2 samples per set for FID")
    if a.dim != b.dim:
        raise MetricsError(f"dim mismatch: {a.dim} vs {b.dim}")
    mu_a, cov_a = _fit_gaussian(a.values)
    mu_b, cov_b = _fit_gaussian(b.values)
    return frechet_distance(mu_a, cov_a, mu_b, cov_b)


def diversity(
    a: FeatureSet,
    num_pairs: int | None = None,
    seed: int = 0,
    pairs: list[tuple[int, int]] | None = None,
) -> float:
    """Mean Euclidean distance over disjoint random pairs (or explicit ones)."""
    if pairs is None:
        if num_pairs is None:
            num_pairs = min(300, a.count // 2)
        if num_pairs < 1 or a.count < 2 * num_pairs:
            raise MetricsError(
                f"need at least {2 * max(num_pairs, 1)} samples, have {a.count}"
            )
        perm = np.random.default_rng(seed).permutation(a.count)
        pairs = list(zip(perm[0::2][:num_pairs], perm[1::2][:num_pairs]))
    if not pairs:
        raise MetricsError("no pairs to evaluate")
    left = a.values[[i for i, _ in pairs]]
    right = a.values[[j for _, j in pairs]]
    return float(np.linalg.norm(left - right, axis=1).mean())


def _check_aligned(motion: FeatureSet, text: FeatureSet) -> None:
    if motion.count != text.count or motion.dim != text.dim:
        raise MetricsError(
            f"misaligned sets: motion {motion.values.shape}, text {text.values.shape}"
        )


def r_precision(
    motion: FeatureSet,
    text: FeatureSet,
    pool_size: int = 32,
    ks: tuple[int, ...] = (1, 2, 3),
    seed: int = 0,
) -> dict[int, float]:
    """Top-k retrieval accuracy of each text against its motion plus
    pool_size-1 seeded distractors.  A distractor at exactly the true match's
    distance does not outrank it (ties resolved by pool index, with the true
    match first)."""
    _check_aligned(motion, text)
    n = motion.count
    if n < pool_size:
        raise MetricsError(f"need at least pool_size={pool_size} pairs, have {n}")
    rng = np.random.default_rng(seed)
    hits = {k: 0 for k in ks}
    for i in range(n):
        others = np.delete(np.arange(n), i)
        distractors = rng.choice(others, size=pool_size - 1, replace=False)
        anchor = text.values[i]
        d_true = np.linalg.norm(motion.values[i] - anchor)
        d_other = np.linalg.norm(motion.values[distractors] - anchor, axis=1)
        rank = 1 + int(np.sum(d_other < d_true))
        for k in ks:
            if rank <= k:
                hits[k] += 1
    return {k: hits[k] / n for k in ks}


def mm_dist(motion: FeatureSet, text: FeatureSet) -> float:
    _check_aligned(motion, text)
    return float(np.linalg.norm(motion.values - text.values, axis=1).mean())


def pmm_sim(z_motion: np.ndarray, z_text: np.ndarray) -> float:
    """Cosine similarity mapped to [0, 1]: (cos + 1) / 2."""
    z_motion = np.asarray(z_motion, dtype=np.float64).reshape(-1)
    z_text = np.asarray(z_text, dtype=np.float64).reshape(-1)
    nm = np.linalg.norm(z_motion)
    nt = np.linalg.norm(z_text)
    if nm == 0.0 or nt == 0.0:
        raise MetricsError("pmm_sim undefined for zero vectors")
    cos = float(z_motion @ z_text) / (nm * nt)
    return 0.5 * (np.clip(cos, -1.0, 1.0) + 1.0)


# ---------------------------------------------------------------------------
# Physical artifact metrics.
# ---------------------------------------------------------------------------


@dataclass
class ArtifactMetrics:
    sliding_cm_s: float
    penetration_cm: float
    floating_cm: float
    contact_samples: int  # (frame, foot) pairs in declared contact
    airborne_frames: int  # frames with every joint above the height threshold

    @property
    def has_contact(self) -> bool:
        return self.contact_samples > 0


def artifact_metrics(
    gp: GlobalPose,
    contacts: np.ndarray,
    foot_joints: tuple[int, ...] = (7, 10, 8, 11),
    cm_per_unit: float = CM_PER_UNIT,
    height_threshold: float = CONTACT_HEIGHT_THRESHOLD,
) -> ArtifactMetrics:
    """Sliding (cm/s), penetration (cm), floating (cm) for one trajectory.

    Sliding averages horizontal foot speed over the (frame, foot) pairs the
    contact channels declare planted; with no declared contact at all it is
    reported as 0 and flagged via ``contact_samples == 0``.  Penetration is
    the mean depth of the lowest joint below the floor.  Floating is the mean
    clearance of the lowest joint, restricted to frames where every joint is
    above ``height_threshold``.
    """
    if gp.frames < 2:
        raise MetricsError("need at least 2 frames for artifact metrics")
    contacts = np.asarray(contacts, dtype=np.float64)
    if contacts.shape != (gp.frames, len(foot_joints)):
        raise MetricsError(
            f"contacts shape {contacts.shape} does not match "
            f"({gp.frames}, {len(foot_joints)})"
        )
    pos = gp.positions  # (F, J, 3)

    # Horizontal per-frame foot displacements, forward difference with the
    # last row repeated so every frame has a speed.
    foot_xz = pos[:, list(foot_joints)][:, :, [0, 2]]  # (F, 4, 2)
    disp = np.diff(foot_xz, axis=0)
    disp = np.concatenate([disp, disp[-1:]], axis=0)
    speed = np.linalg.norm(disp, axis=-1)  # units per frame
    in_contact = contacts > CONTACT_DECISION_THRESHOLD
    contact_samples = int(in_contact.sum())
    if contact_samples > 0:
        sliding = float(speed[in_contact].mean()) * gp.fps * cm_per_unit
    else:
        sliding = 0.0

    min_height = pos[:, :, 1].min(axis=1)  # lowest joint per frame
    penetration = float(np.maximum(0.0, -min_height).mean()) * cm_per_unit

    airborne = min_height > height_threshold
    airborne_frames = int(airborne.sum())
    if airborne_frames > 0:
        floating = float(np.maximum(0.0, min_height[airborne]).mean()) * cm_per_unit
    else:
        floating = 0.0

    return ArtifactMetrics(
        sliding_cm_s=sliding,
        penetration_cm=penetration,
        floating_cm=floating,
        contact_samples=contact_samples,
        airborne_frames=airborne_frames,
    )


# ---------------------------------------------------------------------------
# Evaluation encoders (contrastive towers used as the metric space).
# ---------------------------------------------------------------------------


@dataclass
class EvaluationEncoders:
    full_body: DualEncoder
    parts: dict[str, DualEncoder]
    ambiguous_captions: list[str] = field(default_factory=list)

    def embed_motions(self, motions: list[MotionSequence]) -> FeatureSet:
        rows = [self.full_body.motion_tower.embed_motion(m.features) for m in motions]
        return FeatureSet(np.stack(rows), origin="motion")

    def embed_captions(self, captions: list[str]) -> FeatureSet:
        rows = [self.full_body.text_tower.embed_text(t) for t in captions]
        return FeatureSet(np.stack(rows), origin="text")

    def part_similarity(
        self, motion: MotionSequence, part_texts: PartTexts, skel=None
    ) -> dict[str, float]:
        skel = skel or default_skeleton()
        sims = {}
        for part in PART_NAMES:
            enc = self.parts[part]
            z_m = enc.motion_tower.embed_motion(motion.features[:, skel.part_columns[part]])
            z_t = enc.text_tower.embed_text(part_texts[part])
            sims[part] = pmm_sim(z_m, z_t)
        return sims


def train_eval_encoders(
    corpus: list[tuple[MotionSequence, str, PartTexts]],
    config: ContrastiveConfig | None = None,
) -> EvaluationEncoders:
    """Train the full-body towers on (motion, caption) pairs and one tower
    pair per part on (part motion, part narrative) pairs, then freeze all."""
    if len(corpus) < 8:
        raise MetricsError(f"need at least 8 pairs to train evaluators, have {len(corpus)}")
    config = config or ContrastiveConfig()
    skel = default_skeleton()

    full_pairs = [(m.features, caption) for m, caption, _ in corpus]
    full_body = train_dual_encoder(full_pairs, config)
    ambiguous = find_ambiguous_captions(full_pairs)

    parts = {}
    for part in PART_NAMES:
        cols = skel.part_columns[part]
        pairs = [(m.features[:, cols], pt[part]) for m, _, pt in corpus]
        parts[part] = train_dual_encoder(pairs, config)
    return EvaluationEncoders(full_body, parts, ambiguous)


def save_eval_encoders(path: str | Path, encoders: EvaluationEncoders) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "header": EVAL_ENCODER_HEADER,
        "full_body": encoders.full_body.state_payload(),
        "parts": {p: enc.state_payload() for p, enc in encoders.parts.items()},
        "ambiguous_captions": list(encoders.ambiguous_captions),
    }
    torch.save(payload, path)
    return path


def load_eval_encoders(path: str | Path) -> EvaluationEncoders:
    payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    if payload.get("header") != EVAL_ENCODER_HEADER:
        raise MetricsError(f"unsupported evaluator archive header {payload.get('header')!r}")
    return EvaluationEncoders(
        full_body=DualEncoder.from_payload(payload["full_body"]),
        parts={p: DualEncoder.from_payload(v) for p, v in payload["parts"].items()},
        ambiguous_captions=list(payload.get("ambiguous_captions", [])),
    )


# ---------------------------------------------------------------------------
# Whole-corpus report.
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    fid: float
    diversity: float
    r_precision: dict[int, float]
    mm_dist: float
    pmm_sim: dict[str, float]
    sliding_cm_s: float
    penetration_cm: float
    floating_cm: float
    gen_count: int
    ref_count: int
    config: dict = field(default_factory=dict)
    schema: str = REPORT_SCHEMA

    def __post_init__(self) -> None:
        values = [self.fid, self.diversity, self.mm_dist, self.sliding_cm_s,
                  self.penetration_cm, self.floating_cm]
        values += list(self.r_precision.values()) + list(self.pmm_sim.values())
        if not all(np.isfinite(v) for v in values):
            raise MetricsError("metrics report contains non-finite values")
        for part, value in self.pmm_sim.items():
            if not 0.0 <= value <= 1.0:
                raise MetricsError(f"pmm_sim[{part}]={value} outside [0, 1]")

    def to_json(self) -> str:
        payload = {
            "schema": self.schema,
            "fid": self.fid,
            "diversity": self.diversity,
            "r_precision": {str(k): v for k, v in self.r_precision.items()},
            "mm_dist": self.mm_dist,
            "pmm_sim": self.pmm_sim,
            "sliding_cm_s": self.sliding_cm_s,
            "penetration_cm": self.penetration_cm,
            "floating_cm": self.floating_cm,
            "gen_count": self.gen_count,
            "ref_count": self.ref_count,
            "config": self.config,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def evaluate_corpus(
    generated: list[tuple[MotionSequence, str, PartTexts]],
    reference: list[MotionSequence],
    encoders: EvaluationEncoders,
    pool_size: int = 32,
    seed: int = 0,
    artifact_fn=None,
) -> MetricsReport:
    """Full metric pass over generated clips against a reference set.

    ``artifact_fn`` maps a MotionSequence to (GlobalPose, contacts); by
    default the kinematic recovery in this package is used.
    """
    from .kinematics import recover_global_positions

    if artifact_fn is None:
        def artifact_fn(m: MotionSequence):
            from .motion import CONTACTS
            return recover_global_positions(m), m.features[:, CONTACTS]

    gen_motions = [m for m, _, _ in generated]
    captions = [c for _, c, _ in generated]
    gen_set = encoders.embed_motions(gen_motions)
    ref_set = encoders.embed_motions(reference)
    text_set = encoders.embed_captions(captions)

    pool = min(pool_size, gen_set.count)
    r_prec = r_precision(gen_set, text_set, pool_size=pool, seed=seed)

    sims: dict[str, list[float]] = {p: [] for p in PART_NAMES}
    for m, _, pt in generated:
        for part, value in encoders.part_similarity(m, pt).items():
            sims[part].append(value)
    pmm = {p: float(np.mean(v)) for p, v in sims.items()}

    artifacts = [artifact_metrics(*artifact_fn(m)) for m in gen_motions]
    return MetricsReport(
        fid=fid(gen_set, ref_set),
        diversity=diversity(gen_set, seed=seed),
        r_precision=r_prec,
        mm_dist=mm_dist(gen_set, text_set),
        pmm_sim=pmm,
        sliding_cm_s=float(np.mean([a.sliding_cm_s for a in artifacts])),
        penetration_cm=float(np.mean([a.penetration_cm for a in artifacts])),
        floating_cm=float(np.mean([a.floating_cm for a in artifacts])),
        gen_count=len(generated),
        ref_count=len(reference),
        config={"pool_size": pool, "seed": seed},
    )
