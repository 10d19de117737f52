"""Text-encoder abstraction and the six per-part motion encoders.

Each body part gets its own frozen text encoder and its own motion encoder:
a linear projection of the part features, additive fusion of the text and
diffusion-step embeddings, and a stack of Conformer blocks (temporal
self-attention plus a depthwise temporal convolution).  By construction an
encoder sees only its own part's motion and text, so no cross-part
information can leak before the full-body fusion stage.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
import torch
from torch import nn

from .contrastive import DualEncoder, TextTower, hashed_bag_of_words
from .motion import PART_NAMES, PART_WIDTHS

FULL_BODY = "full_body"
ENCODER_IDS = PART_NAMES + (FULL_BODY,)


class EncoderConfigError(ValueError):
    pass


@dataclass
class TextEmbedding:
    """A unit-norm text vector plus the identity of the encoder that made it."""

    vector: np.ndarray
    encoder_id: str

    def __post_init__(self) -> None:
        self.vector = np.asarray(self.vector, dtype=np.float32).reshape(-1)
        if not np.isfinite(self.vector).all():
            raise EncoderConfigError("text embedding must be finite")

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])

    def as_tensor(self) -> torch.Tensor:
        return torch.from_numpy(self.vector)


class TextEncoder(Protocol):
    dim: int
    identity: str

    def encode(self, text: str) -> TextEmbedding: ...


def encode_text(encoder: TextEncoder, text: str) -> TextEmbedding:
    if not text.strip():
        raise EncoderConfigError("text must be nonempty")
    return encoder.encode(text)


class HashTextEncoder:
    """Deterministic stand-in encoder: a seeded hash of the text drives a
    fixed unit vector.  Network-free; distinct identities give distinct
    embedding spaces."""

    def __init__(self, dim: int = 128, identity: str = FULL_BODY, seed: int = 0):
        self.dim = dim
        self.identity = identity
        self.seed = seed

    def encode(self, text: str) -> TextEmbedding:
        if not text.strip():
            raise EncoderConfigError("text must be nonempty")
        digest = hashlib.sha256(
            f"{self.identity}|{self.seed}|{text.strip().lower()}".encode("utf-8")
        ).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        vec = rng.standard_normal(self.dim).astype(np.float32)
        vec /= np.linalg.norm(vec)
        return TextEmbedding(vec, self.identity)


class ContrastiveTextEncoder:
    """Wraps a frozen contrastively-trained text tower."""

    def __init__(self, tower: TextTower, identity: str):
        self.tower = tower
        self.identity = identity
        self.dim = tower.config.embed_dim

    def encode(self, text: str) -> TextEmbedding:
        if not text.strip():
            raise EncoderConfigError("text must be nonempty")
        return TextEmbedding(self.tower.embed_text(text), self.identity)


class EmbeddingTableTextEncoder:
    """Looks embeddings up in a precomputed table (how external frozen
    encoders are integrated without carrying their runtime)."""

    def __init__(self, entries: dict[str, np.ndarray], dim: int, identity: str):
        self.entries = {self._norm(k): np.asarray(v, dtype=np.float32) for k, v in entries.items()}
        self.dim = dim
        self.identity = identity

    @staticmethod
    def _norm(text: str) -> str:
        return " ".join(text.strip().lower().split())

    def encode(self, text: str) -> TextEmbedding:
        key = self._norm(text)
        if key not in self.entries:
            raise EncoderConfigError(
                f"no precomputed embedding for {text!r} (encoder {self.identity})"
            )
        vec = self.entries[key]
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            raise EncoderConfigError(f"zero embedding stored for {text!r}")
        return TextEmbedding(vec / norm, self.identity)


def save_embedding_table(
    path: str | Path, tables: dict[str, dict[str, np.ndarray]], dim: int
) -> Path:
    """Write per-encoder embedding tables as JSON ({encoder: {text: vector}})."""
    payload = {
        "dim": dim,
        "tables": {
            ident: {text: np.asarray(vec).tolist() for text, vec in entries.items()}
            for ident, entries in tables.items()
        },
    }
    path = Path(path)
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def load_embedding_table(path: str | Path) -> tuple[dict[str, dict[str, np.ndarray]], int]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    tables = {
        ident: {text: np.asarray(vec, dtype=np.float32) for text, vec in entries.items()}
        for ident, entries in payload["tables"].items()
    }
    return tables, int(payload["dim"])


class TextEncoderSet:
    """One frozen text encoder per body part plus one for the full body."""

    def __init__(self, encoders: dict[str, TextEncoder]):
        if set(encoders) != set(ENCODER_IDS):
            raise EncoderConfigError(f"need encoders for exactly {ENCODER_IDS}")
        dims = {enc.dim for enc in encoders.values()}
        if len(dims) != 1:
            raise EncoderConfigError(f"inconsistent embedding dims: {dims}")
        self.encoders = encoders
        self.dim = dims.pop()

    def __getitem__(self, identity: str) -> TextEncoder:
        return self.encoders[identity]

    def encode_part(self, part: str, text: str) -> TextEmbedding:
        return encode_text(self.encoders[part], text)

    def encode_full(self, text: str) -> TextEmbedding:
        return encode_text(self.encoders[FULL_BODY], text)


def stub_text_encoders(dim: int = 128, seed: int = 0) -> TextEncoderSet:
    return TextEncoderSet(
        {ident: HashTextEncoder(dim, ident, seed) for ident in ENCODER_IDS}
    )


def contrastive_text_encoders(pairs: dict[str, DualEncoder]) -> TextEncoderSet:
    return TextEncoderSet(
        {ident: ContrastiveTextEncoder(pairs[ident].text_tower, ident) for ident in ENCODER_IDS}
    )


def table_text_encoders(path: str | Path) -> TextEncoderSet:
    tables, dim = load_embedding_table(path)
    missing = [ident for ident in ENCODER_IDS if ident not in tables]
    if missing:
        raise EncoderConfigError(f"embedding table lacks encoders {missing}")
    return TextEncoderSet(
        {ident: EmbeddingTableTextEncoder(tables[ident], dim, ident) for ident in ENCODER_IDS}
    )


# ---------------------------------------------------------------------------
# Sinusoidal embeddings and the diffusion-step embedding.
# ---------------------------------------------------------------------------


def sinusoidal_embedding(
    positions: torch.Tensor, dim: int, max_period: float = 10000.0
) -> torch.Tensor:
    """Cosine terms first, then sine terms, so position 0 maps to [1...1, 0...0]."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=torch.float32) / half
    )
    args = positions.float().reshape(-1, 1) * freqs.reshape(1, -1)
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


class TimestepEmbedding(nn.Module):
    """Sinusoidal encoding of the diffusion step, refined by a 2-layer MLP."""

    def __init__(self, dim: int, num_steps: int):
        super().__init__()
        self.dim = dim
        self.num_steps = num_steps
        self.proj = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, step: int) -> torch.Tensor:
        if not 0 <= int(step) < self.num_steps:
            raise EncoderConfigError(
                f"diffusion step {step} outside [0, {self.num_steps})"
            )
        base = sinusoidal_embedding(torch.tensor([int(step)]), self.dim)[0]
        return self.proj(base)


# ---------------------------------------------------------------------------
# Conformer blocks and the per-part motion encoder.
# ---------------------------------------------------------------------------


@dataclass
class PartEncoderConfig:
    latent_dim: int = 128
    num_blocks: int = 2
    num_heads: int = 4
    conv_kernel_size: int = 7
    ff_width: int = 256
    dropout: float = 0.0
    block_kind: str = "conformer"  # or "transformer" (drops the conv sub-block)

    def __post_init__(self) -> None:
        if self.latent_dim % self.num_heads != 0:
            raise EncoderConfigError("latent_dim must be divisible by num_heads")
        if self.block_kind not in ("conformer", "transformer"):
            raise EncoderConfigError(f"unknown block kind {self.block_kind!r}")


class _HalfStepFeedForward(nn.Module):
    def __init__(self, dim: int, ff_width: int, dropout: float):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.net = nn.Sequential(
            nn.Linear(dim, ff_width),
            nn.SiLU(),
            nn.Dropout(dropout),
            nn.Linear(ff_width, dim),
            nn.Dropout(dropout),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + 0.5 * self.net(self.norm(x))


class _ConvModule(nn.Module):
    """Pointwise expand + GLU, depthwise temporal conv, pointwise contract."""

    def __init__(self, dim: int, kernel_size: int, dropout: float):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.pointwise_in = nn.Conv1d(dim, 2 * dim, 1)
        self.depthwise = nn.Conv1d(
            dim, dim, kernel_size, padding=kernel_size // 2, groups=dim
        )
        self.pointwise_out = nn.Conv1d(dim, dim, 1)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm(x).transpose(0, 1).unsqueeze(0)  # (1, d, F)
        h = nn.functional.glu(self.pointwise_in(h), dim=1)
        h = torch.nn.functional.silu(self.depthwise(h))
        h = self.dropout(self.pointwise_out(h))
        return x + h.squeeze(0).transpose(0, 1)


class _SelfAttention(nn.Module):
    def __init__(self, dim: int, num_heads: int, dropout: float):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, num_heads, dropout=dropout, batch_first=True)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm(x).unsqueeze(0)
        out, _ = self.attn(h, h, h, need_weights=False)
        return x + self.dropout(out.squeeze(0))


class ConformerBlock(nn.Module):
    """Macaron block: FF half-step, temporal self-attention, depthwise
    temporal convolution, FF half-step; pre-norm with residuals throughout.
    ``transformer`` mode omits the convolution sub-block."""

    def __init__(self, config: PartEncoderConfig):
        super().__init__()
        d = config.latent_dim
        self.ff_in = _HalfStepFeedForward(d, config.ff_width, config.dropout)
        self.attention = _SelfAttention(d, config.num_heads, config.dropout)
        self.conv = (
            _ConvModule(d, config.conv_kernel_size, config.dropout)
            if config.block_kind == "conformer"
            else None
        )
        self.ff_out = _HalfStepFeedForward(d, config.ff_width, config.dropout)
        self.final_norm = nn.LayerNorm(d)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.ff_in(x)
        x = self.attention(x)
        if self.conv is not None:
            x = self.conv(x)
        x = self.ff_out(x)
        return self.final_norm(x)


@dataclass
class PartLatent:
    """Per-frame latent of one part at one diffusion step, shape (F, 128)."""

    values: torch.Tensor
    part: str
    step: int

    @property
    def frames(self) -> int:
        return int(self.values.shape[0])


class PartMotionEncoder(nn.Module):
    """Map one part's (F, width) motion, its text, and the diffusion step to
    an (F, latent_dim) latent."""

    def __init__(
        self,
        part: str,
        config: PartEncoderConfig,
        text_dim: int,
        num_steps: int,
        input_width: int | None = None,
    ):
        super().__init__()
        self.part = part
        self.config = config
        self.input_width = input_width or PART_WIDTHS[part]
        d = config.latent_dim
        self.input_proj = nn.Linear(self.input_width, d)
        self.text_proj = nn.Linear(text_dim, d)
        self.step_embed = TimestepEmbedding(d, num_steps)
        self.blocks = nn.ModuleList(
            ConformerBlock(config) for _ in range(config.num_blocks)
        )

    def forward(
        self, part_motion: torch.Tensor, text_vec: torch.Tensor, step: int
    ) -> torch.Tensor:
        if part_motion.ndim != 2 or part_motion.shape[1] != self.input_width:
            raise EncoderConfigError(
                f"{self.part}: expected (F, {self.input_width}), got {tuple(part_motion.shape)}"
            )
        frames = part_motion.shape[0]
        x = self.input_proj(part_motion)
        x = x + self.text_proj(text_vec)
        x = x + self.step_embed(step)
        x = x + sinusoidal_embedding(torch.arange(frames), self.config.latent_dim)
        for block in self.blocks:
            x = block(x)
        return x


def part_encode(
    encoder: PartMotionEncoder,
    part_motion: torch.Tensor,
    text: TextEmbedding,
    step: int,
) -> PartLatent:
    values = encoder(part_motion, text.as_tensor(), step)
    return PartLatent(values, part=encoder.part, step=int(step))
