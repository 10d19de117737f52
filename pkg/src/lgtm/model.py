"""The composed text-to-motion denoiser.

One forward pass implements the full local-to-global pipeline for a single
diffusion step: split the noisy motion into six part blocks, run each part's
motion encoder with that part's narrative text and the step index, fuse the
six latents, and let the full-body optimizer emit the predicted clean
motion.  This is the ``Denoiser`` the diffusion loops drive.
"""

from __future__ import annotations

import torch
from torch import nn

from .encoders import (
    PartEncoderConfig,
    PartMotionEncoder,
    TextEncoderSet,
    part_encode,
)
from .motion import FEATURE_DIM, PART_NAMES, SkeletonMap, default_skeleton
from .optimizer import FullBodyOptimizer, OptimizerConfig, fuse_parts
from .text_partition import PartTexts


class TextToMotionModel(nn.Module):
    def __init__(
        self,
        part_config: PartEncoderConfig,
        optimizer_config: OptimizerConfig,
        text_encoders: TextEncoderSet,
        num_steps: int = 1000,
        skel: SkeletonMap | None = None,
    ):
        super().__init__()
        if optimizer_config.part_latent_dim != part_config.latent_dim:
            raise ValueError(
                "optimizer part_latent_dim must match the part encoder latent_dim"
            )
        self.skel = skel or default_skeleton()
        self.num_steps = num_steps
        self.part_config = part_config
        self.optimizer_config = optimizer_config
        self.text_encoders = text_encoders
        self.part_encoders = nn.ModuleDict(
            {
                part: PartMotionEncoder(
                    part, part_config, text_encoders.dim, num_steps
                )
                for part in PART_NAMES
            }
        )
        self.optimizer = FullBodyOptimizer(optimizer_config, text_encoders.dim)
        self._part_cols = {
            part: torch.as_tensor(self.skel.part_columns[part], dtype=torch.long)
            for part in PART_NAMES
        }

    def denoise_tensor(
        self, features: torch.Tensor, step: int, part_texts: PartTexts, caption: str
    ) -> torch.Tensor:
        if features.ndim != 2 or features.shape[1] != FEATURE_DIM:
            raise ValueError(
                f"expected (F, {FEATURE_DIM}) features, got {tuple(features.shape)}"
            )
        latents = {}
        for part in PART_NAMES:
            part_motion = features[:, self._part_cols[part]]
            text = self.text_encoders.encode_part(part, part_texts[part])
            latents[part] = part_encode(
                self.part_encoders[part], part_motion, text, step
            )
        fused = fuse_parts(latents)
        full_text = self.text_encoders.encode_full(caption)
        return self.optimizer(fused.values, full_text.as_tensor())

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def build_model(
    text_encoders: TextEncoderSet,
    block_kind: str = "conformer",
    enable_optimizer: bool = True,
    num_steps: int = 1000,
    part_config: PartEncoderConfig | None = None,
    optimizer_config: OptimizerConfig | None = None,
) -> TextToMotionModel:
    """Assemble a model from the ablation-level knobs."""
    part_config = part_config or PartEncoderConfig(block_kind=block_kind)
    optimizer_config = optimizer_config or OptimizerConfig(
        enable_optimizer=enable_optimizer
    )
    return TextToMotionModel(part_config, optimizer_config, text_encoders, num_steps)
