"""Unified checkpoint archive.

One file carries everything needed to resume or sample: the six part
encoders and the full-body optimizer (one state dict), both configs, the
text-encoder payload (by kind), the feature normalization stats, the prompt
version the cached decompositions were made with, and a version header that
is checked on load.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .contrastive import ContrastiveConfig, TextTower
from .encoders import (
    ContrastiveTextEncoder,
    EmbeddingTableTextEncoder,
    ENCODER_IDS,
    FULL_BODY,
    HashTextEncoder,
    PartEncoderConfig,
    TextEncoderSet,
)
from .motion import FeatureStats
from .model import TextToMotionModel
from .optimizer import OptimizerConfig

CHECKPOINT_HEADER = "lgtm-ckpt-v1"


class CheckpointError(ValueError):
    pass


def text_encoder_payload(text_set: TextEncoderSet) -> dict:
    sample = text_set[FULL_BODY]
    if isinstance(sample, HashTextEncoder):
        return {"kind": "stub", "dim": sample.dim, "seed": sample.seed}
    if isinstance(sample, EmbeddingTableTextEncoder):
        tables = {}
        for ident in ENCODER_IDS:
            enc = text_set[ident]
            tables[ident] = {text: vec.tolist() for text, vec in enc.entries.items()}
        return {"kind": "table", "dim": sample.dim, "tables": tables}
    if isinstance(sample, ContrastiveTextEncoder):
        towers = {}
        for ident in ENCODER_IDS:
            enc = text_set[ident]
            towers[ident] = {
                "config": vars(enc.tower.config),
                "state": enc.tower.state_dict(),
            }
        return {"kind": "toy_contrastive", "towers": towers}
    raise CheckpointError(f"cannot serialize text encoder {type(sample).__name__}")


def text_encoders_from_payload(payload: dict) -> TextEncoderSet:
    kind = payload.get("kind")
    if kind == "stub":
        return TextEncoderSet(
            {
                ident: HashTextEncoder(payload["dim"], ident, payload["seed"])
                for ident in ENCODER_IDS
            }
        )
    if kind == "table":
        return TextEncoderSet(
            {
                ident: EmbeddingTableTextEncoder(
                    {
                        text: np.asarray(vec, dtype=np.float32)
                        for text, vec in payload["tables"][ident].items()
                    },
                    payload["dim"],
                    ident,
                )
                for ident in ENCODER_IDS
            }
        )
    if kind == "toy_contrastive":
        encoders = {}
        for ident in ENCODER_IDS:
            entry = payload["towers"][ident]
            tower = TextTower(ContrastiveConfig(**entry["config"]))
            tower.load_state_dict(entry["state"])
            tower.eval()
            for param in tower.parameters():
                param.requires_grad_(False)
            encoders[ident] = ContrastiveTextEncoder(tower, ident)
        return TextEncoderSet(encoders)
    raise CheckpointError(f"unknown text-encoder payload kind {kind!r}")


@dataclass
class LoadedCheckpoint:
    model: TextToMotionModel
    stats: FeatureStats | None
    schedule_kind: str
    num_steps: int
    train_step: int
    prompt_version: str
    extra: dict


def save_checkpoint(
    path: str | Path,
    model: TextToMotionModel,
    stats: FeatureStats | None = None,
    schedule_kind: str = "cosine",
    train_step: int = 0,
    prompt_version: str = "prompt-v1",
    extra: dict | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "header": CHECKPOINT_HEADER,
        "model_state": model.state_dict(),
        "part_config": asdict(model.part_config),
        "optimizer_config": asdict(model.optimizer_config),
        "num_steps": model.num_steps,
        "text_encoders": text_encoder_payload(model.text_encoders),
        "stats": stats.to_dict() if stats is not None else None,
        "schedule_kind": schedule_kind,
        "train_step": int(train_step),
        "prompt_version": prompt_version,
        "extra": dict(extra or {}),
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path) -> LoadedCheckpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    header = payload.get("header")
    if header != CHECKPOINT_HEADER:
        raise CheckpointError(
            f"unsupported checkpoint header {header!r} (expected {CHECKPOINT_HEADER!r})"
        )
    text_set = text_encoders_from_payload(payload["text_encoders"])
    model = TextToMotionModel(
        PartEncoderConfig(**payload["part_config"]),
        OptimizerConfig(**payload["optimizer_config"]),
        text_set,
        num_steps=payload["num_steps"],
    )
    model.load_state_dict(payload["model_state"])
    model.eval()
    stats_dict = payload.get("stats")
    stats = FeatureStats.from_dict(stats_dict) if stats_dict is not None else None
    return LoadedCheckpoint(
        model=model,
        stats=stats,
        schedule_kind=payload["schedule_kind"],
        num_steps=payload["num_steps"],
        train_step=payload["train_step"],
        prompt_version=payload["prompt_version"],
        extra=payload.get("extra", {}),
    )
