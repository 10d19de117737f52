"""Noise schedule, forward noising, training objective, and DDIM sampling.

The denoising network predicts the clean motion directly (x0
parameterization) and the L2 training loss is taken in that space; the
implied noise is derived from the prediction inside each DDIM update, so the
sampler still walks the usual noise-removal trajectory.  Mixing the two
weightings (x0-space loss with noise-space loss) is not allowed; everything
here stays in x0-space.

Schedules expose cumulative signal coefficients alpha_bar with
alpha_bar[0] == 1 exactly, so step 0 is the identity corruption and the last
DDIM update lands exactly on the predicted clean motion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
import torch

from .motion import (
    CONTACTS,
    FEATURE_DIM,
    FeatureStats,
    MotionSequence,
    denormalize,
)
from .text_partition import PartTexts

DEFAULT_NUM_STEPS = 1000
DEFAULT_SAMPLE_STEPS = 50


class ScheduleError(ValueError):
    pass


class SamplingError(ValueError):
    pass


@dataclass
class NoiseSchedule:
    """Cumulative signal coefficients alpha_bar[n] for n in [0, N)."""

    alpha_bar: np.ndarray
    kind: str

    def __post_init__(self) -> None:
        self.alpha_bar = np.asarray(self.alpha_bar, dtype=np.float64)
        if self.alpha_bar.ndim != 1 or self.alpha_bar.size < 1:
            raise ScheduleError("alpha_bar must be a nonempty 1-D array")
        if not math.isclose(float(self.alpha_bar[0]), 1.0, abs_tol=1e-12):
            raise ScheduleError(f"alpha_bar[0] must be 1, got {self.alpha_bar[0]}")
        if np.any(self.alpha_bar > 1.0) or np.any(self.alpha_bar <= 0.0):
            raise ScheduleError("alpha_bar values must lie in (0, 1]")
        if np.any(np.diff(self.alpha_bar) > 0.0):
            raise ScheduleError("alpha_bar must be nonincreasing")

    @property
    def num_steps(self) -> int:
        return int(self.alpha_bar.size)

    def signal(self, n: int) -> float:
        if not 0 <= int(n) < self.num_steps:
            raise ScheduleError(f"step {n} outside [0, {self.num_steps})")
        return float(self.alpha_bar[int(n)])


def make_schedule(kind: str = "cosine", num_steps: int = DEFAULT_NUM_STEPS) -> NoiseSchedule:
    if num_steps < 1:
        raise ScheduleError("num_steps must be positive")
    if kind == "cosine":
        s = 0.008
        steps = np.arange(num_steps, dtype=np.float64)
        f = np.cos((steps / num_steps + s) / (1.0 + s) * math.pi / 2.0) ** 2
        alpha_bar = np.clip(f / f[0], 1e-8, 1.0)
    elif kind == "linear":
        betas = np.linspace(1e-4, 0.02, num_steps, dtype=np.float64)
        # alpha_bar[n] is the product of the first n retention factors, so the
        # empty product puts alpha_bar[0] at exactly 1.
        alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)[:-1]])
    else:
        raise ScheduleError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule(alpha_bar, kind=kind)


def q_sample(
    m0: MotionSequence, n: int, eps: np.ndarray, sched: NoiseSchedule
) -> MotionSequence:
    """Corrupt a normalized clean motion to diffusion step ``n``."""
    eps = np.asarray(eps, dtype=np.float32)
    if eps.shape != m0.features.shape:
        raise SamplingError(
            f"noise shape {eps.shape} does not match motion {m0.features.shape}"
        )
    ab = sched.signal(n)
    noisy = math.sqrt(ab) * m0.features + math.sqrt(1.0 - ab) * eps
    return MotionSequence(noisy.astype(np.float32), fps=m0.fps, clip_id=m0.clip_id)


class Denoiser(Protocol):
    """Anything that maps (noisy features, step, texts) to predicted clean
    features; implemented by the composed text-to-motion model."""

    def denoise_tensor(
        self, features: torch.Tensor, step: int, part_texts: PartTexts, caption: str
    ) -> torch.Tensor: ...


def denoise(
    mn: MotionSequence,
    n: int,
    part_texts: PartTexts,
    caption: str,
    model: Denoiser,
) -> MotionSequence:
    """One clean-motion prediction at step ``n`` (normalized space)."""
    with torch.no_grad():
        pred = model.denoise_tensor(
            torch.from_numpy(mn.features), int(n), part_texts, caption
        )
    return MotionSequence(pred.numpy(), fps=mn.fps, clip_id=mn.clip_id)


def training_loss(
    batch: Sequence[tuple[MotionSequence, PartTexts, str]],
    sched: NoiseSchedule,
    model: Denoiser,
    rng: np.random.Generator,
) -> torch.Tensor:
    """Mean squared error between predicted and true clean motion, with a
    uniformly drawn step and fresh noise per sample."""
    if len(batch) == 0:
        raise SamplingError("training batch must be nonempty")
    total = torch.zeros(())
    for m0, part_texts, caption in batch:
        n = int(rng.integers(0, sched.num_steps))
        eps = rng.standard_normal(m0.features.shape).astype(np.float32)
        clean = torch.from_numpy(m0.features)
        ab = sched.signal(n)
        noisy = math.sqrt(ab) * clean + math.sqrt(1.0 - ab) * torch.from_numpy(eps)
        pred = model.denoise_tensor(noisy, n, part_texts, caption)
        total = total + torch.mean((pred - clean) ** 2)
    return total / len(batch)


@dataclass
class SampleRequest:
    caption: str
    frames: int
    steps: int = DEFAULT_SAMPLE_STEPS
    seed: int = 0
    guidance_scale: float | None = None  # reserved; no guidance implemented
    flags: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.caption.strip():
            raise SamplingError("caption must be nonempty")
        if self.frames < 1:
            raise SamplingError("frames must be at least 1")
        if self.steps < 1:
            raise SamplingError("steps must be at least 1")


def ddim_step_indices(num_steps: int, k: int) -> np.ndarray:
    """K+1 step indices from N-1 down to 0, evenly spaced and rounded."""
    if not 1 <= k <= num_steps:
        raise SamplingError(f"sampling steps {k} outside [1, {num_steps}]")
    return np.round(np.linspace(num_steps - 1, 0, k + 1)).astype(np.int64)


def ddim_sample(
    req: SampleRequest,
    model: Denoiser,
    sched: NoiseSchedule,
    stats: FeatureStats,
    part_texts: PartTexts,
    fps: float = 20.0,
) -> MotionSequence:
    """Deterministic DDIM (eta = 0) from seeded Gaussian noise to a
    denormalized motion.  Same request and parameters give bit-identical
    output."""
    if stats is None:
        raise SamplingError("feature stats are required to denormalize samples")
    if req.guidance_scale is not None:
        raise NotImplementedError("guidance is reserved but not implemented")
    taus = ddim_step_indices(sched.num_steps, req.steps)
    rng = np.random.default_rng(req.seed)
    x = torch.from_numpy(
        rng.standard_normal((req.frames, FEATURE_DIM)).astype(np.float32)
    )
    with torch.no_grad():
        for n, n_next in zip(taus[:-1], taus[1:]):
            pred = model.denoise_tensor(x, int(n), part_texts, req.caption)
            ab = sched.signal(int(n))
            ab_next = sched.signal(int(n_next))
            if ab >= 1.0:
                x = pred
                continue
            eps_hat = (x - math.sqrt(ab) * pred) / math.sqrt(1.0 - ab)
            x = math.sqrt(ab_next) * pred + math.sqrt(1.0 - ab_next) * eps_hat
    normalized = MotionSequence(
        x.numpy(), fps=fps, clip_id=f"sample-seed{req.seed}"
    )
    out = denormalize(normalized, stats)
    # Contact channels are probabilities; clamp so generated clips satisfy
    # the representation's validity contract.
    out.features[:, CONTACTS] = np.clip(out.features[:, CONTACTS], 0.0, 1.0)
    return out
