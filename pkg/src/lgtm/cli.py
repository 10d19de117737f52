"""Command-line surface: ingest, decompose, train, sample, eval, toycorpus."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .harness import (
    HarnessError,
    ingest as ingest_dataset,
    load_train_config,
    precompute_decompositions,
    end_to_end_sample,
    train as run_train,
)
from .metrics import (
    evaluate_corpus,
    load_eval_encoders,
    save_eval_encoders,
    train_eval_encoders,
)
from .text_partition import ChatCompletionClient, DecompositionCache, decompose
from .toycorpus import write_toy_corpus


@click.group()
def main() -> None:
    """Local-to-global text-to-motion diffusion toolkit."""


@main.command("ingest")
@click.argument("dataset_dir", type=click.Path(exists=True, file_okay=False))
def ingest_cmd(dataset_dir: str) -> None:
    """Validate a dataset directory and compute feature stats."""
    index = ingest_dataset(dataset_dir)
    total_frames = sum(r.frames for r in index.records)
    click.echo(
        f"ingested {len(index)} clips, {total_frames} frames, "
        f"stats at {index.root / 'stats.json'}"
    )


@main.command("decompose")
@click.option("--text", default=None, help="Decompose a single caption and print JSON.")
@click.option("--dataset", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--cache-dir", type=click.Path(file_okay=False), default=None)
@click.option("--online", is_flag=True, help="Use the chat service configured via environment.")
@click.option("--strict", is_flag=True, help="Fail instead of falling back to rules.")
def decompose_cmd(text, dataset, cache_dir, online, strict) -> None:
    """Split captions into six per-part narratives."""
    client = ChatCompletionClient.from_env() if online else None
    if text is not None:
        cache = DecompositionCache(cache_dir) if cache_dir else None
        result = decompose(text, client=client, cache=cache, strict=strict)
        click.echo(result.to_json())
        return
    if dataset is None:
        raise click.UsageError("pass --text or --dataset")
    index = ingest_dataset(dataset)
    tally = precompute_decompositions(index, client=client, cache_dir=cache_dir, strict=strict)
    click.echo(json.dumps(tally, sort_keys=True))


@main.command("train")
@click.option("--dataset", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--max-steps", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--diffusion-steps", type=int, default=None)
@click.option("--schedule-kind", type=click.Choice(["cosine", "linear"]), default=None)
@click.option("--text-encoder", type=click.Choice(["stub", "toy_contrastive", "external"]), default=None)
@click.option("--block-kind", type=click.Choice(["conformer", "transformer"]), default=None)
@click.option("--enable-optimizer/--disable-optimizer", "enable_optimizer", default=None)
@click.option("--checkpoint-every", type=int, default=None)
@click.option("--external-table", type=click.Path(exists=True, dir_okay=False), default=None)
def train_cmd(dataset, out, config_path, **overrides) -> None:
    """Train on an ingested dataset (config file fields overridable by flags)."""
    config = load_train_config(config_path, **overrides)
    index = ingest_dataset(dataset)
    result = run_train(config, index, out)
    click.echo(
        f"trained {config.max_steps} steps; final loss "
        f"{result.losses[-1]:.4f}; checkpoint {result.final_checkpoint}"
    )


@main.command("sample")
@click.option("--text", required=True)
@click.option("--frames", type=int, default=120, show_default=True)
@click.option("--steps", type=int, default=50, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--ckpt", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--plot", type=click.Path(dir_okay=False), default=None)
@click.option("--cache-dir", type=click.Path(file_okay=False), default=None)
def sample_cmd(text, frames, steps, seed, ckpt, out, plot, cache_dir) -> None:
    """Generate a motion clip from a caption."""
    motion = end_to_end_sample(
        text, ckpt, frames=frames, steps=steps, seed=seed,
        out_path=out, plot_path=plot, cache_dir=cache_dir,
    )
    click.echo(f"wrote {motion.frames} frames to {out}")


@main.command("eval")
@click.option("--gen-dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--ref-dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--eval-ckpt", type=click.Path(dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--fit-eval", is_flag=True,
              help="Train evaluation encoders on the reference set if the archive is missing.")
@click.option("--seed", type=int, default=0, show_default=True)
def eval_cmd(gen_dir, ref_dir, eval_ckpt, out, fit_eval, seed) -> None:
    """Score generated clips against a reference set."""
    gen_index = ingest_dataset(gen_dir)
    precompute_decompositions(gen_index)
    ref_index = ingest_dataset(ref_dir)

    eval_path = Path(eval_ckpt)
    if eval_path.exists():
        encoders = load_eval_encoders(eval_path)
    elif fit_eval:
        precompute_decompositions(ref_index)
        corpus = [
            (r.load(), r.captions[0].text, r.part_texts[r.captions[0].text])
            for r in ref_index.records
        ]
        encoders = train_eval_encoders(corpus)
        save_eval_encoders(eval_path, encoders)
        click.echo(f"trained evaluation encoders -> {eval_path}")
    else:
        raise click.UsageError(f"{eval_path} does not exist (pass --fit-eval to train it)")

    generated = [
        (r.load(), r.captions[0].text, r.part_texts[r.captions[0].text])
        for r in gen_index.records
    ]
    reference = [r.load() for r in ref_index.records]
    report = evaluate_corpus(generated, reference, encoders, seed=seed)
    Path(out).write_text(report.to_json() + "\n", encoding="utf-8")
    click.echo(report.to_json())


@main.command("toycorpus")
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--frames", type=int, default=32, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--with-part-sidecars", is_flag=True,
              help="Also write the known per-part narratives as manual overrides.")
def toycorpus_cmd(out, frames, seed, with_part_sidecars) -> None:
    """Generate the 16-clip synthetic corpus."""
    clips = write_toy_corpus(
        out, frames=frames, seed=seed, include_part_sidecars=with_part_sidecars
    )
    click.echo(f"wrote {len(clips)} clips to {out}")


if __name__ == "__main__":
    sys.exit(main())
