"""Paired motion/text embedding towers trained with a symmetric contrastive
objective (temperature-scaled cross-entropy over in-batch negatives).

These toy towers stand in for large pretrained retrieval encoders: text is
featurized as a hashed bag of words, motion as mean+std pooling over time,
and both towers project into a shared unit-norm embedding space.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

_WORD = re.compile(r"[a-z']+")


def hashed_bag_of_words(text: str, dim: int) -> np.ndarray:
    """Deterministic hashed word-count vector, L2-normalized."""
    counts = np.zeros(dim, dtype=np.float32)
    for word in _WORD.findall(text.lower()):
        digest = hashlib.sha256(word.encode("utf-8")).digest()
        counts[int.from_bytes(digest[:8], "little") % dim] += 1.0
    norm = float(np.linalg.norm(counts))
    return counts / norm if norm > 0 else counts


def pool_motion(features: np.ndarray) -> np.ndarray:
    """Temporal mean+std pooling of an (F, w) motion array -> (2w,)."""
    feats = np.asarray(features, dtype=np.float32)
    return np.concatenate([feats.mean(axis=0), feats.std(axis=0)])


@dataclass
class ContrastiveConfig:
    embed_dim: int = 32
    hidden_dim: int = 64
    text_hash_dim: int = 256
    temperature: float = 0.07
    learning_rate: float = 1e-2
    steps: int = 300
    seed: int = 0


class TextTower(nn.Module):
    def __init__(self, config: ContrastiveConfig):
        super().__init__()
        self.config = config
        self.net = nn.Sequential(
            nn.Linear(config.text_hash_dim, config.hidden_dim),
            nn.ReLU(),
            nn.Linear(config.hidden_dim, config.embed_dim),
        )

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        out = self.net(feats)
        return out / out.norm(dim=-1, keepdim=True).clamp_min(1e-8)

    @torch.no_grad()
    def embed_text(self, text: str) -> np.ndarray:
        feats = torch.from_numpy(hashed_bag_of_words(text, self.config.text_hash_dim))
        return self.forward(feats).numpy()


class MotionTower(nn.Module):
    def __init__(self, input_width: int, config: ContrastiveConfig):
        super().__init__()
        self.input_width = input_width
        self.config = config
        self.net = nn.Sequential(
            nn.Linear(2 * input_width, config.hidden_dim),
            nn.ReLU(),
            nn.Linear(config.hidden_dim, config.embed_dim),
        )

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        out = self.net(pooled)
        return out / out.norm(dim=-1, keepdim=True).clamp_min(1e-8)

    @torch.no_grad()
    def embed_motion(self, features: np.ndarray) -> np.ndarray:
        pooled = torch.from_numpy(pool_motion(features))
        return self.forward(pooled).numpy()


def info_nce_loss(
    motion_emb: torch.Tensor, text_emb: torch.Tensor, temperature: float
) -> torch.Tensor:
    """Symmetric InfoNCE over aligned rows; approaches log(B) as the
    temperature grows (logits flatten to uniform)."""
    logits = motion_emb @ text_emb.T / temperature
    targets = torch.arange(logits.shape[0])
    return 0.5 * (
        nn.functional.cross_entropy(logits, targets)
        + nn.functional.cross_entropy(logits.T, targets)
    )


@dataclass
class DualEncoder:
    """A frozen motion/text tower pair after contrastive training."""

    motion_tower: MotionTower
    text_tower: TextTower
    config: ContrastiveConfig
    ambiguous_captions: list[str] = field(default_factory=list)

    def freeze(self) -> "DualEncoder":
        for module in (self.motion_tower, self.text_tower):
            module.eval()
            for param in module.parameters():
                param.requires_grad_(False)
        return self

    def state_payload(self) -> dict:
        return {
            "input_width": self.motion_tower.input_width,
            "config": vars(self.config),
            "motion_state": self.motion_tower.state_dict(),
            "text_state": self.text_tower.state_dict(),
            "ambiguous_captions": list(self.ambiguous_captions),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "DualEncoder":
        config = ContrastiveConfig(**payload["config"])
        motion_tower = MotionTower(payload["input_width"], config)
        motion_tower.load_state_dict(payload["motion_state"])
        text_tower = TextTower(config)
        text_tower.load_state_dict(payload["text_state"])
        pair = cls(motion_tower, text_tower, config, list(payload["ambiguous_captions"]))
        return pair.freeze()


def find_ambiguous_captions(pairs: list[tuple[np.ndarray, str]]) -> list[str]:
    """Captions appearing with more than one distinct motion (retrieval for
    them is ill-posed but training proceeds)."""
    seen: dict[str, np.ndarray] = {}
    ambiguous: list[str] = []
    for features, text in pairs:
        if text in seen:
            if seen[text].shape != features.shape or not np.array_equal(
                seen[text], features
            ):
                if text not in ambiguous:
                    ambiguous.append(text)
        else:
            seen[text] = np.asarray(features)
    return ambiguous


def train_dual_encoder(
    pairs: list[tuple[np.ndarray, str]],
    config: ContrastiveConfig | None = None,
) -> DualEncoder:
    """Fit one motion/text tower pair on (motion array, text) pairs.

    Full-batch optimization; deterministic for a given config seed.  The
    returned pair is frozen.
    """
    config = config or ContrastiveConfig()
    if len(pairs) < 2:
        raise ValueError("contrastive training needs at least 2 pairs")
    width = int(np.asarray(pairs[0][0]).shape[1])

    torch.manual_seed(config.seed)
    motion_tower = MotionTower(width, config)
    text_tower = TextTower(config)

    pooled = torch.from_numpy(np.stack([pool_motion(f) for f, _ in pairs]))
    text_feats = torch.from_numpy(
        np.stack([hashed_bag_of_words(t, config.text_hash_dim) for _, t in pairs])
    )

    params = list(motion_tower.parameters()) + list(text_tower.parameters())
    opt = torch.optim.Adam(params, lr=config.learning_rate)
    for _ in range(config.steps):
        opt.zero_grad()
        loss = info_nce_loss(
            motion_tower(pooled), text_tower(text_feats), config.temperature
        )
        loss.backward()
        opt.step()

    pair = DualEncoder(
        motion_tower, text_tower, config, find_ambiguous_captions(pairs)
    )
    return pair.freeze()


def top1_retrieval_accuracy(pair: DualEncoder, pairs: list[tuple[np.ndarray, str]]) -> float:
    """Fraction of texts whose nearest motion embedding is their own pair."""
    motion_embs = np.stack([pair.motion_tower.embed_motion(f) for f, _ in pairs])
    text_embs = np.stack([pair.text_tower.embed_text(t) for _, t in pairs])
    sims = text_embs @ motion_embs.T
    hits = (sims.argmax(axis=1) == np.arange(len(pairs))).sum()
    return float(hits) / len(pairs)
