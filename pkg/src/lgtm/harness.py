"""Dataset ingestion, decomposition precompute, training, and sampling.

Dataset layout::

    dataset/
      motions/<id>.bin (+ .json sidecar)   motion files
      texts/<id>.txt                       one caption per line
      texts/<id>.parts.json                optional manual narrative overrides,
                                           {caption: {part: text}}
      stats.json                           feature stats (computed if absent)
      decomp_cache/                        decomposition cache

Training uses decoupled-weight-decay Adam with a fast warm cosine schedule
(linear warm-up over the first 5% of steps, cosine decay to a fixed floor)
and logs one JSON object per step.  Everything is seeded; a fixed (config,
seed, corpus) triple reproduces checkpoints and samples bit for bit on the
single-threaded data path.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

from .checkpoint import LoadedCheckpoint, load_checkpoint, save_checkpoint
from .contrastive import ContrastiveConfig, train_dual_encoder
from .diffusion import SampleRequest, ddim_sample, make_schedule, training_loss
from .encoders import (
    ContrastiveTextEncoder,
    ENCODER_IDS,
    FULL_BODY,
    HashTextEncoder,
    TextEncoderSet,
    save_embedding_table,
    table_text_encoders,
)
from .model import TextToMotionModel, build_model
from .motion import (
    CaptionEntry,
    FeatureStats,
    MotionSequence,
    PART_NAMES,
    compute_stats,
    default_skeleton,
    load_captions,
    load_motion,
    normalize,
    save_motion,
    validate,
)
from .text_partition import (
    ChatCompletionClient,
    DecompositionCache,
    PartTexts,
    decompose,
    load_default_prompt_spec,
)

TEXT_ENCODER_KINDS = ("stub", "toy_contrastive", "external")
BLOCK_KINDS = ("conformer", "transformer")


class HarnessError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Dataset index.
# ---------------------------------------------------------------------------


@dataclass
class ClipRecord:
    clip_id: str
    motion_path: Path
    frames: int
    fps: float
    captions: list[CaptionEntry]
    part_texts: dict[str, PartTexts] = field(default_factory=dict)

    def load(self) -> MotionSequence:
        return load_motion(self.motion_path)


@dataclass
class DatasetIndex:
    root: Path
    records: list[ClipRecord]
    stats: FeatureStats
    split: str = "train"

    def __len__(self) -> int:
        return len(self.records)

    def missing_decompositions(self) -> list[str]:
        missing = []
        for record in self.records:
            for entry in record.captions:
                if entry.text not in record.part_texts:
                    missing.append(entry.text)
        return missing


def ingest(dataset_dir: str | Path, split: str = "train") -> DatasetIndex:
    root = Path(dataset_dir)
    motions_dir = root / "motions"
    texts_dir = root / "texts"
    if not motions_dir.is_dir():
        raise HarnessError(f"no motions/ directory under {root}")
    motion_paths = sorted(motions_dir.glob("*.bin"))
    if not motion_paths:
        raise HarnessError(f"no motion files in {motions_dir}")

    records = []
    motions = []
    for path in motion_paths:
        try:
            motion = load_motion(path)
        except Exception as exc:
            raise HarnessError(f"{path}: {exc}") from exc
        report = validate(motion)
        if not report.ok:
            raise HarnessError(f"{path}: {'; '.join(report.violations)}")
        caption_path = texts_dir / f"{path.stem}.txt"
        if not caption_path.exists():
            raise HarnessError(f"{path}: missing caption file {caption_path}")
        captions = load_captions(caption_path)
        if not captions:
            raise HarnessError(f"{caption_path}: no captions")
        records.append(
            ClipRecord(path.stem, path, motion.frames, motion.fps, captions)
        )
        motions.append(motion)

    stats_path = root / "stats.json"
    if stats_path.exists():
        stats = FeatureStats.from_dict(json.loads(stats_path.read_text(encoding="utf-8")))
    else:
        stats = compute_stats(motions)
        stats_path.write_text(json.dumps(stats.to_dict()), encoding="utf-8")
    return DatasetIndex(root=root, records=records, stats=stats, split=split)


def _manual_overrides(index: DatasetIndex, record: ClipRecord) -> dict[str, PartTexts]:
    sidecar = index.root / "texts" / f"{record.clip_id}.parts.json"
    if not sidecar.exists():
        return {}
    data = json.loads(sidecar.read_text(encoding="utf-8"))
    return {
        caption: PartTexts(parts, source="manual") for caption, parts in data.items()
    }


def precompute_decompositions(
    index: DatasetIndex,
    client: ChatCompletionClient | None = None,
    cache_dir: str | Path | None = None,
    strict: bool = False,
) -> dict[str, int]:
    """Fill every record's PartTexts; manual sidecars win and are never
    queried, cached entries are reused, the rest go to the service or the
    offline fallback.  Returns a tally of sources."""
    cache = DecompositionCache(Path(cache_dir) if cache_dir else index.root / "decomp_cache")
    prompt_spec = load_default_prompt_spec()
    tally: dict[str, int] = {}
    for record in index.records:
        overrides = _manual_overrides(index, record)
        for entry in record.captions:
            if entry.text in record.part_texts:
                continue
            if entry.text in overrides:
                result = overrides[entry.text]
            else:
                result = decompose(
                    entry.text,
                    client=client,
                    cache=cache,
                    prompt_spec=prompt_spec,
                    strict=strict,
                )
            record.part_texts[entry.text] = result
            tally[result.source] = tally.get(result.source, 0) + 1
    return tally


# ---------------------------------------------------------------------------
# Training.
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-2
    batch_size: int = 8
    diffusion_steps: int = 1000
    schedule_kind: str = "cosine"
    warmup_frac: float = 0.05
    lr_floor: float = 1e-6
    max_steps: int = 200
    seed: int = 0
    text_encoder: str = "stub"
    block_kind: str = "conformer"
    enable_optimizer: bool = True
    checkpoint_every: int = 100
    text_dim: int = 128
    external_table: str | None = None

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_steps < 1:
            raise HarnessError("learning rate, batch size, and max steps must be positive")
        if self.diffusion_steps < 1 or self.checkpoint_every < 1:
            raise HarnessError("diffusion_steps and checkpoint_every must be positive")
        if self.text_encoder not in TEXT_ENCODER_KINDS:
            raise HarnessError(f"text_encoder must be one of {TEXT_ENCODER_KINDS}")
        if self.block_kind not in BLOCK_KINDS:
            raise HarnessError(f"block_kind must be one of {BLOCK_KINDS}")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise HarnessError("warmup_frac must lie in [0, 1)")


def train_config_from_dict(data: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(data) - known
    if unknown:
        raise HarnessError(f"unknown train config fields: {sorted(unknown)}")
    return TrainConfig(**data)


def load_train_config(path: str | Path | None, **overrides) -> TrainConfig:
    """Config file (JSON) plus per-field overrides; overrides win."""
    base = {}
    if path is not None:
        base = json.loads(Path(path).read_text(encoding="utf-8"))
    config = train_config_from_dict(base)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if overrides:
        unknown = set(overrides) - {f.name for f in fields(TrainConfig)}
        if unknown:
            raise HarnessError(f"unknown train config fields: {sorted(unknown)}")
        config = replace(config, **overrides)
    return config


def training_examples(
    index: DatasetIndex,
) -> list[tuple[MotionSequence, PartTexts, str]]:
    """Normalized (motion, narratives, caption) triples, caption crops applied."""
    examples = []
    for record in index.records:
        motion = record.load()
        for entry in record.captions:
            if entry.text not in record.part_texts:
                raise HarnessError(
                    f"caption without decomposition: {entry.text!r} "
                    f"(run precompute_decompositions)"
                )
            lo, hi = entry.crop_frames(motion.fps, motion.frames)
            cropped = MotionSequence(
                motion.features[lo:hi], fps=motion.fps, clip_id=record.clip_id
            )
            examples.append(
                (normalize(cropped, index.stats), record.part_texts[entry.text], entry.text)
            )
    if not examples:
        raise HarnessError("no training examples in index")
    return examples


def build_text_encoders(
    config: TrainConfig,
    examples: list[tuple[MotionSequence, PartTexts, str]],
    out_dir: Path,
) -> TextEncoderSet:
    """Assemble the text-encoder set for the configured ablation arm."""
    if config.text_encoder == "stub":
        return TextEncoderSet(
            {ident: HashTextEncoder(config.text_dim, ident, config.seed) for ident in ENCODER_IDS}
        )
    if config.text_encoder == "toy_contrastive":
        skel = default_skeleton()
        cfg = ContrastiveConfig(seed=config.seed)
        encoders = {}
        for ident in ENCODER_IDS:
            if ident == FULL_BODY:
                pairs = [(m.features, caption) for m, _, caption in examples]
            else:
                cols = skel.part_columns[ident]
                pairs = [(m.features[:, cols], pt[ident]) for m, pt, _ in examples]
            tower = train_dual_encoder(pairs, cfg).text_tower
            encoders[ident] = ContrastiveTextEncoder(tower, ident)
        return TextEncoderSet(encoders)
    if config.text_encoder == "external":
        if config.external_table is not None:
            return table_text_encoders(config.external_table)
        # No table supplied: precompute one covering every text in the corpus
        # (the offline stand-in for embeddings exported from a frozen
        # external encoder).
        path = out_dir / "external_table.json"
        tables = {}
        for ident in ENCODER_IDS:
            hasher = HashTextEncoder(config.text_dim, ident, config.seed)
            if ident == FULL_BODY:
                texts = {caption for _, _, caption in examples}
            else:
                texts = {pt[ident] for _, pt, _ in examples}
            tables[ident] = {text: hasher.encode(text).vector for text in sorted(texts)}
        save_embedding_table(path, tables, config.text_dim)
        return table_text_encoders(path)
    raise HarnessError(f"unknown text encoder kind {config.text_encoder!r}")


@dataclass
class TrainResult:
    model: TextToMotionModel
    final_checkpoint: Path
    checkpoints: list[Path]
    losses: list[float]
    log_path: Path
    config: TrainConfig


def _lr_factor(step: int, config: TrainConfig) -> float:
    warmup = max(1, int(round(config.warmup_frac * config.max_steps)))
    floor = config.lr_floor / config.learning_rate
    if step < warmup:
        return (step + 1) / warmup
    span = max(1, config.max_steps - warmup)
    t = min(1.0, (step - warmup) / span)
    return floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * t))


def train(
    config: TrainConfig,
    index: DatasetIndex,
    out_dir: str | Path,
    auto_decompose: bool = True,
) -> TrainResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if index.missing_decompositions():
        if not auto_decompose:
            raise HarnessError("index has captions without decompositions")
        precompute_decompositions(index)

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    examples = training_examples(index)
    text_encoders = build_text_encoders(config, examples, out_dir)
    model = build_model(
        text_encoders,
        block_kind=config.block_kind,
        enable_optimizer=config.enable_optimizer,
        num_steps=config.diffusion_steps,
    )
    model.train()
    sched = make_schedule(config.schedule_kind, config.diffusion_steps)
    opt = torch.optim.AdamW(
        model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    lr_sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda step: _lr_factor(step, config)
    )
    prompt_version = load_default_prompt_spec().version

    def save(step: int, name: str) -> Path:
        return save_checkpoint(
            out_dir / name,
            model,
            stats=index.stats,
            schedule_kind=config.schedule_kind,
            train_step=step,
            prompt_version=prompt_version,
            extra={"train_config": dict(vars(config))},
        )

    log_path = out_dir / "train_log.jsonl"
    losses: list[float] = []
    checkpoints: list[Path] = []
    with log_path.open("w", encoding="utf-8") as log:
        for step in range(config.max_steps):
            start = time.perf_counter()
            picks = rng.integers(0, len(examples), size=config.batch_size)
            batch = [examples[int(i)] for i in picks]
            loss = training_loss(batch, sched, model, rng)
            loss_value = float(loss.item())
            if not math.isfinite(loss_value):
                save(step, "abort.ckpt")
                raise TrainingError(
                    f"non-finite loss {loss_value} at step {step}; "
                    f"diagnostic checkpoint written to {out_dir / 'abort.ckpt'}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            lr_sched.step()
            losses.append(loss_value)
            log.write(
                json.dumps(
                    {
                        "step": step,
                        "loss": loss_value,
                        "lr": float(opt.param_groups[0]["lr"]),
                        "wall_ms": (time.perf_counter() - start) * 1000.0,
                    }
                )
                + "\n"
            )
            if (step + 1) % config.checkpoint_every == 0 and step + 1 < config.max_steps:
                checkpoints.append(save(step + 1, f"ckpt_step{step + 1:06d}.pt"))
    model.eval()
    final = save(config.max_steps, "ckpt_final.pt")
    checkpoints.append(final)
    return TrainResult(
        model=model,
        final_checkpoint=final,
        checkpoints=checkpoints,
        losses=losses,
        log_path=log_path,
        config=config,
    )


# ---------------------------------------------------------------------------
# End-to-end sampling.
# ---------------------------------------------------------------------------


def export_plot(motion: MotionSequence, plot_path: str | Path) -> Path:
    """Write a quick-look figure: overhead root path plus joint height curves."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .kinematics import recover_global_positions

    gp = recover_global_positions(motion)
    fig, (ax_path, ax_height) = plt.subplots(1, 2, figsize=(10, 4))
    root = gp.positions[:, 0]
    ax_path.plot(root[:, 0], root[:, 2], marker=".")
    ax_path.set_title("root path (top view)")
    ax_path.set_xlabel("x")
    ax_path.set_ylabel("z")
    ax_path.axis("equal")
    for joint, label in ((0, "root"), (10, "l_foot"), (11, "r_foot"), (20, "l_wrist"), (21, "r_wrist")):
        ax_height.plot(gp.positions[:, joint, 1], label=label)
    ax_height.set_title("joint heights")
    ax_height.set_xlabel("frame")
    ax_height.set_ylabel("y")
    ax_height.legend(fontsize=7)
    fig.tight_layout()
    plot_path = Path(plot_path)
    fig.savefig(plot_path, dpi=110)
    plt.close(fig)
    return plot_path


def end_to_end_sample(
    caption: str,
    ckpt: str | Path | LoadedCheckpoint,
    frames: int,
    steps: int = 50,
    seed: int = 0,
    out_path: str | Path | None = None,
    plot_path: str | Path | None = None,
    cache_dir: str | Path | None = None,
    client: ChatCompletionClient | None = None,
) -> MotionSequence:
    """Caption to motion file: decompose, sample, denormalize, write."""
    loaded = ckpt if isinstance(ckpt, LoadedCheckpoint) else load_checkpoint(ckpt)
    cache = DecompositionCache(cache_dir) if cache_dir else None
    part_texts = decompose(caption, client=client, cache=cache)
    sched = make_schedule(loaded.schedule_kind, loaded.num_steps)
    request = SampleRequest(caption=caption, frames=frames, steps=steps, seed=seed)
    motion = ddim_sample(request, loaded.model, sched, loaded.stats, part_texts)
    if out_path is not None:
        save_motion(out_path, motion)
    if plot_path is not None:
        export_plot(motion, plot_path)
    return motion


# ---------------------------------------------------------------------------
# Ablation matrix.
# ---------------------------------------------------------------------------


def ablation_combinations() -> list[dict]:
    combos = []
    for text_encoder in TEXT_ENCODER_KINDS:
        for block_kind in BLOCK_KINDS:
            for enable_optimizer in (True, False):
                combos.append(
                    {
                        "text_encoder": text_encoder,
                        "block_kind": block_kind,
                        "enable_optimizer": enable_optimizer,
                    }
                )
    return combos


def run_ablation_matrix(
    index: DatasetIndex,
    out_root: str | Path,
    steps: int = 10,
    batch_size: int = 4,
    sample_frames: int = 16,
    sample_steps: int = 5,
) -> list[dict]:
    """Train each flag combination briefly and draw one sample from it."""
    out_root = Path(out_root)
    results = []
    for combo in ablation_combinations():
        tag = "{text_encoder}-{block_kind}-{opt}".format(
            **combo | {"opt": "opt" if combo["enable_optimizer"] else "noopt"}
        )
        config = TrainConfig(
            max_steps=steps,
            batch_size=batch_size,
            checkpoint_every=steps,
            **combo,
        )
        result = train(config, index, out_root / tag)
        caption = index.records[0].captions[0].text
        sample_path = out_root / tag / "sample.bin"
        motion = end_to_end_sample(
            caption,
            result.final_checkpoint,
            frames=sample_frames,
            steps=sample_steps,
            out_path=sample_path,
        )
        results.append(combo | {"dir": out_root / tag, "sample_frames": motion.frames})
    return results
