"""Full-body latent optimizer.

The six part latents are concatenated into an (F, 768) full-body latent in a
fixed slot order.  An attention encoder (temporal self-attention plus a
per-frame feed-forward over the 768 columns) exchanges information across
parts and frames, SmoothNet applies learned temporal low-pass filtering, and
a single linear head maps the result to the 263 motion feature columns:

    out = Linear(SmoothNet(z + AttentionEncoder(z_text + z)))

Both residual branches are zero-initialized, so at initialization the whole
module is Linear(z) exactly.  With ``enable_optimizer`` off the attention
term is skipped and the only cross-part mixing left is the linear head;
``restrict_head_to_parts`` removes that too, which makes the part-to-output
Jacobian exactly block-diagonal (used by the coupling probe tests).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .encoders import EncoderConfigError, TextEmbedding, PartLatent
from .motion import FEATURE_DIM, PART_NAMES, SkeletonMap, MotionSequence, default_skeleton

SLOT_ORDER = PART_NAMES  # (head, left_arm, right_arm, torso, left_leg, right_leg)


class OptimizerShapeError(ValueError):
    pass


def slot_slice(part: str, latent_dim: int = 128) -> slice:
    """Column range of ``part`` inside the fused full-body latent."""
    idx = SLOT_ORDER.index(part)
    return slice(idx * latent_dim, (idx + 1) * latent_dim)


@dataclass
class FullBodyLatent:
    """Concatenated part latents, shape (F, 6 * latent_dim)."""

    values: torch.Tensor
    step: int
    latent_dim: int = 128

    def __post_init__(self) -> None:
        expected = len(SLOT_ORDER) * self.latent_dim
        if self.values.ndim != 2 or self.values.shape[1] != expected:
            raise OptimizerShapeError(
                f"expected (F, {expected}), got {tuple(self.values.shape)}"
            )

    @property
    def frames(self) -> int:
        return int(self.values.shape[0])

    def part_slot(self, part: str) -> torch.Tensor:
        return self.values[:, slot_slice(part, self.latent_dim)]


def fuse_parts(latents: dict[str, PartLatent]) -> FullBodyLatent:
    """Concatenate the six part latents column-wise in the fixed slot order."""
    missing = [p for p in SLOT_ORDER if p not in latents]
    if missing:
        raise OptimizerShapeError(f"missing part latents: {missing}")
    frames = {p: latents[p].frames for p in SLOT_ORDER}
    if len(set(frames.values())) != 1:
        raise OptimizerShapeError(f"frame counts differ across parts: {frames}")
    steps = {latents[p].step for p in SLOT_ORDER}
    if len(steps) != 1:
        raise OptimizerShapeError(f"diffusion steps differ across parts: {steps}")
    dims = {int(latents[p].values.shape[1]) for p in SLOT_ORDER}
    if len(dims) != 1:
        raise OptimizerShapeError(f"latent widths differ across parts: {dims}")
    values = torch.cat([latents[p].values for p in SLOT_ORDER], dim=1)
    return FullBodyLatent(values, step=steps.pop(), latent_dim=dims.pop())


@dataclass
class OptimizerConfig:
    part_latent_dim: int = 128
    num_blocks: int = 2
    num_heads: int = 8
    ff_width: int = 512
    smoothnet_window: int = 8
    smoothnet_layers: int = 3
    smoothnet_hidden: int = 64
    dropout: float = 0.0
    enable_optimizer: bool = True
    enable_smoothnet: bool = True
    text_fusion: str = "add"  # "token" is reserved but not implemented
    output_dim: int = FEATURE_DIM

    @property
    def fused_dim(self) -> int:
        return len(SLOT_ORDER) * self.part_latent_dim

    def __post_init__(self) -> None:
        if self.fused_dim % self.num_heads != 0:
            raise EncoderConfigError("fused dim must be divisible by num_heads")
        if self.text_fusion not in ("add", "token"):
            raise EncoderConfigError(f"unknown text fusion {self.text_fusion!r}")
        if self.smoothnet_window < 2:
            raise EncoderConfigError("smoothnet_window must be at least 2")


class AttentionEncoderBlock(nn.Module):
    """Pre-norm block: self-attention over frames, then a feed-forward
    applied per frame across the fused columns."""

    def __init__(self, dim: int, num_heads: int, ff_width: int, dropout: float):
        super().__init__()
        self.norm_attn = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, num_heads, dropout=dropout, batch_first=True)
        self.norm_ff = nn.LayerNorm(dim)
        self.ff = nn.Sequential(
            nn.Linear(dim, ff_width),
            nn.SiLU(),
            nn.Dropout(dropout),
            nn.Linear(ff_width, dim),
            nn.Dropout(dropout),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm_attn(x).unsqueeze(0)
        attn_out, _ = self.attn(h, h, h, need_weights=False)
        x = x + attn_out.squeeze(0)
        return x + self.ff(self.norm_ff(x))


class AttentionEncoder(nn.Module):
    """Stack of attention blocks whose output projection starts at zero, so
    the residual branch it feeds contributes nothing at initialization."""

    def __init__(self, config: OptimizerConfig):
        super().__init__()
        self.blocks = nn.ModuleList(
            AttentionEncoderBlock(
                config.fused_dim, config.num_heads, config.ff_width, config.dropout
            )
            for _ in range(config.num_blocks)
        )
        self.out_proj = nn.Linear(config.fused_dim, config.fused_dim)
        nn.init.zeros_(self.out_proj.weight)
        nn.init.zeros_(self.out_proj.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x)
        return self.out_proj(x)


class SmoothNet(nn.Module):
    """Temporal filter over sliding windows of each channel.

    Every length-``window`` slice of a channel passes through a shared
    residual MLP; overlapping window outputs are averaged back onto frames.
    The final layer is zero-initialized, which makes the module an exact
    identity until trained.  ``mode="moving_average"`` replaces the MLP with
    a fixed box filter (a non-learned reference low-pass used in tests).
    Sequences shorter than the window bypass the filter.
    """

    def __init__(
        self, window: int = 8, layers: int = 3, hidden: int = 64, mode: str = "learned"
    ):
        super().__init__()
        if mode not in ("learned", "moving_average"):
            raise EncoderConfigError(f"unknown smoothing mode {mode!r}")
        self.window = window
        self.mode = mode
        self.lin_in = nn.Linear(window, hidden)
        self.residual = nn.ModuleList(nn.Linear(hidden, hidden) for _ in range(layers))
        self.lin_out = nn.Linear(hidden, window)
        nn.init.zeros_(self.lin_out.weight)
        nn.init.zeros_(self.lin_out.bias)

    def _window_transform(self, windows: torch.Tensor) -> torch.Tensor:
        # windows: (num_windows, C, window)
        if self.mode == "moving_average":
            return windows.mean(dim=-1, keepdim=True).expand_as(windows)
        h = torch.nn.functional.silu(self.lin_in(windows))
        for layer in self.residual:
            h = h + torch.nn.functional.silu(layer(h))
        return windows + self.lin_out(h)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        frames, channels = z.shape
        if frames < self.window:
            return z
        windows = z.unfold(0, self.window, 1)  # (num_windows, C, window)
        out_windows = self._window_transform(windows)
        num_windows = out_windows.shape[0]
        acc = z.new_zeros(frames, channels)
        count = z.new_zeros(frames, 1)
        for offset in range(self.window):
            acc[offset : offset + num_windows] += out_windows[:, :, offset]
            count[offset : offset + num_windows] += 1.0
        return acc / count


class FullBodyOptimizer(nn.Module):
    """Fused-latent to clean-motion head implementing the composition above."""

    def __init__(self, config: OptimizerConfig, text_dim: int):
        super().__init__()
        if config.text_fusion == "token":
            raise NotImplementedError("token text fusion is reserved, use 'add'")
        self.config = config
        self.text_proj = nn.Linear(text_dim, config.fused_dim)
        self.attention = AttentionEncoder(config)
        self.smoothnet = SmoothNet(
            config.smoothnet_window, config.smoothnet_layers, config.smoothnet_hidden
        )
        self.head = nn.Linear(config.fused_dim, config.output_dim)

    def forward(self, fused: torch.Tensor, text_vec: torch.Tensor) -> torch.Tensor:
        if fused.ndim != 2 or fused.shape[1] != self.config.fused_dim:
            raise OptimizerShapeError(
                f"expected (F, {self.config.fused_dim}), got {tuple(fused.shape)}"
            )
        z = fused
        if self.config.enable_optimizer:
            z = z + self.attention(self.text_proj(text_vec) + z)
        if self.config.enable_smoothnet:
            z = self.smoothnet(z)
        return self.head(z)

    @torch.no_grad()
    def restrict_head_to_parts(self, skel: SkeletonMap | None = None) -> None:
        """Zero head weights that connect one part's latent slot to another
        part's feature columns.  Afterwards (with the attention term off) the
        Jacobian from part slots to part columns is exactly block-diagonal."""
        skel = skel or default_skeleton()
        mask = torch.zeros_like(self.head.weight)
        for part in SLOT_ORDER:
            rows = torch.as_tensor(skel.part_columns[part])
            cols = slot_slice(part, self.config.part_latent_dim)
            mask[rows, cols] = 1.0
        self.head.weight *= mask


def optimize(
    model: FullBodyOptimizer,
    latents: dict[str, PartLatent],
    full_text: TextEmbedding,
    fps: float,
    clip_id: str = "optimized",
) -> MotionSequence:
    """Inference wrapper: fuse, run the optimizer, return the predicted clean
    motion (still in normalized feature space)."""
    fused = fuse_parts(latents)
    with torch.no_grad():
        out = model(fused.values, full_text.as_tensor())
    return MotionSequence(out.numpy(), fps=fps, clip_id=clip_id)
