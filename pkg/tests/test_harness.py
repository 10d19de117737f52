"""Dataset ingest, decomposition precompute, training loop, CLI."""

import json
import math
import shutil

import numpy as np
import pytest
import torch
from click.testing import CliRunner

from lgtm.checkpoint import CheckpointError, load_checkpoint
from lgtm.cli import main as cli_main
from lgtm.harness import (
    HarnessError,
    TrainConfig,
    TrainingError,
    ablation_combinations,
    _lr_factor,
    build_text_encoders,
    end_to_end_sample,
    ingest,
    load_train_config,
    precompute_decompositions,
    train,
    train_config_from_dict,
    training_examples,
)
from lgtm.motion import FEATURE_DIM, load_motion
from lgtm.text_partition import PartTexts
from lgtm.toycorpus import write_toy_corpus


def small_train_config(**kw):
    defaults = dict(
        max_steps=6, batch_size=2, checkpoint_every=3, diffusion_steps=50,
        learning_rate=3e-4, seed=0,
    )
    defaults.update(kw)
    return TrainConfig(**defaults)


@pytest.fixture(scope="module")
def train_out(tmp_path_factory, toy_index):
    out = tmp_path_factory.mktemp("train_out")
    result = train(small_train_config(), toy_index, out)
    return out, result


class TestIngest:
    def test_toy_corpus_shape(self, toy_index):
        assert len(toy_index) == 16
        assert toy_index.split == "train"
        record = toy_index.records[0]
        motion = record.load()
        assert motion.features.shape == (record.frames, FEATURE_DIM)
        assert record.captions
        assert (toy_index.root / "stats.json").exists()

    def test_stats_are_reused_across_ingests(self, toy_dataset):
        again = ingest(toy_dataset)
        fresh = ingest(toy_dataset)
        np.testing.assert_array_equal(again.stats.mean, fresh.stats.mean)
        np.testing.assert_array_equal(again.stats.std, fresh.stats.std)

    def test_missing_motions_dir(self, tmp_path):
        with pytest.raises(HarnessError):
            ingest(tmp_path)

    def test_empty_motions_dir(self, tmp_path):
        (tmp_path / "motions").mkdir()
        with pytest.raises(HarnessError):
            ingest(tmp_path)

    def test_corrupt_motion_names_the_file(self, toy_dataset, tmp_path):
        root = tmp_path / "broken"
        shutil.copytree(toy_dataset, root)
        victim = sorted((root / "motions").iterdir())[0]
        victim.write_bytes(victim.read_bytes()[:40])
        with pytest.raises(HarnessError, match=victim.name):
            ingest(root)

    def test_missing_caption_file(self, toy_dataset, tmp_path):
        root = tmp_path / "nocap"
        shutil.copytree(toy_dataset, root)
        victim = sorted((root / "texts").glob("*.txt"))[0]
        victim.unlink()
        with pytest.raises(HarnessError, match="caption"):
            ingest(root)


class TestPrecompute:
    def test_offline_tally_is_all_fallback(self, tmp_path):
        write_toy_corpus(tmp_path / "corpus")
        index = ingest(tmp_path / "corpus")
        tally = precompute_decompositions(index)
        assert tally == {"fallback": 16}
        assert index.missing_decompositions() == []

    def test_second_pass_is_a_no_op_then_cache(self, tmp_path):
        write_toy_corpus(tmp_path / "corpus")
        index = ingest(tmp_path / "corpus")
        precompute_decompositions(index)
        assert precompute_decompositions(index) == {}
        reopened = ingest(tmp_path / "corpus")
        assert precompute_decompositions(reopened) == {"cache": 16}

    def test_manual_sidecars_win(self, tmp_path):
        write_toy_corpus(tmp_path / "manual", include_part_sidecars=True)
        index = ingest(tmp_path / "manual")
        tally = precompute_decompositions(index)
        assert tally == {"manual": 16}
        record = index.records[0]
        parts = record.part_texts[record.captions[0].text]
        assert parts.source == "manual"


class TestTrainingExamples:
    def test_requires_decompositions(self, tmp_path):
        write_toy_corpus(tmp_path / "corpus")
        index = ingest(tmp_path / "corpus")
        with pytest.raises(HarnessError, match="decomposition"):
            training_examples(index)

    def test_examples_are_normalized(self, toy_index):
        examples = training_examples(toy_index)
        assert len(examples) == 16
        motion, parts, caption = examples[0]
        assert motion.features.dtype == np.float32
        assert isinstance(parts, PartTexts)
        assert caption
        stacked = np.concatenate([m.features for m, _, _ in examples])
        moving = stacked.std(axis=0) > 0.5  # standardized channels
        assert np.abs(stacked.mean(axis=0)[moving]).max() < 0.1


class TestBuildTextEncoders:
    def test_stub(self, toy_index, tmp_path):
        config = small_train_config(text_encoder="stub", text_dim=64)
        encoders = build_text_encoders(config, training_examples(toy_index), tmp_path)
        assert encoders.dim == 64
        assert encoders.encode_full("anything at all").dim == 64

    def test_external_auto_builds_table(self, toy_index, tmp_path):
        config = small_train_config(text_encoder="external")
        examples = training_examples(toy_index)
        encoders = build_text_encoders(config, examples, tmp_path)
        assert (tmp_path / "external_table.json").exists()
        caption = examples[0][2]
        assert encoders.encode_full(caption).dim == config.text_dim
        from lgtm.encoders import EncoderConfigError
        with pytest.raises(EncoderConfigError):
            encoders.encode_full("a caption no one ever wrote")

    def test_unknown_kind_rejected(self):
        with pytest.raises(HarnessError):
            small_train_config(text_encoder="clip")


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(HarnessError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(HarnessError):
            TrainConfig(batch_size=0)
        with pytest.raises(HarnessError):
            TrainConfig(warmup_frac=1.0)
        with pytest.raises(HarnessError):
            TrainConfig(block_kind="lstm")

    def test_from_dict_rejects_unknown_fields(self):
        with pytest.raises(HarnessError, match="momentum"):
            train_config_from_dict({"momentum": 0.9})

    def test_load_with_overrides(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"max_steps": 50, "batch_size": 4}))
        config = load_train_config(path, batch_size=2, seed=None)
        assert config.max_steps == 50
        assert config.batch_size == 2  # override wins
        assert config.seed == 0  # None override skipped

    def test_lr_factor_schedule_shape(self):
        config = TrainConfig(max_steps=200, warmup_frac=0.05,
                             learning_rate=1e-4, lr_floor=1e-6)
        assert math.isclose(_lr_factor(0, config), 0.1)
        assert math.isclose(_lr_factor(9, config), 1.0)
        assert math.isclose(_lr_factor(10, config), 1.0)
        assert math.isclose(_lr_factor(200, config), 0.01)  # floor ratio
        factors = [_lr_factor(s, config) for s in range(10, 201)]
        assert all(a >= b for a, b in zip(factors, factors[1:]))


class TestTrain:
    def test_artifacts_and_log(self, train_out):
        out, result = train_out
        assert len(result.losses) == 6
        assert all(math.isfinite(v) for v in result.losses)
        assert result.final_checkpoint == out / "ckpt_final.pt"
        assert (out / "ckpt_step000003.pt").exists()
        lines = [json.loads(l) for l in result.log_path.read_text().splitlines()]
        assert len(lines) == 6
        for i, line in enumerate(lines):
            assert set(line) == {"step", "loss", "lr", "wall_ms"}
            assert line["step"] == i
            assert line["loss"] == result.losses[i]
            assert line["lr"] > 0
            assert line["wall_ms"] > 0

    def test_determinism(self, train_out, toy_index, tmp_path):
        _, result = train_out
        repeat = train(small_train_config(), toy_index, tmp_path / "again")
        assert repeat.losses == result.losses

    def test_checkpoint_round_trip(self, train_out):
        _, result = train_out
        loaded = load_checkpoint(result.final_checkpoint)
        assert loaded.train_step == 6
        assert loaded.schedule_kind == "cosine"
        assert loaded.num_steps == 50
        assert loaded.extra["train_config"]["max_steps"] == 6
        x = torch.randn(8, FEATURE_DIM)
        with torch.no_grad():
            a = result.model.denoise_tensor(x, 0, PartTexts.idle(), "a person walks.")
            b = loaded.model.denoise_tensor(x, 0, PartTexts.idle(), "a person walks.")
        assert torch.equal(a, b)

    def test_non_finite_loss_aborts_with_diagnostic(
        self, toy_index, tmp_path, monkeypatch
    ):
        import lgtm.harness as harness_mod

        monkeypatch.setattr(
            harness_mod, "training_loss",
            lambda *args, **kwargs: torch.tensor(float("nan")),
        )
        with pytest.raises(TrainingError, match="non-finite"):
            train(small_train_config(), toy_index, tmp_path / "crash")
        assert (tmp_path / "crash" / "abort.ckpt").exists()

    def test_bad_checkpoint_header_rejected(self, tmp_path):
        bogus = tmp_path / "bogus.pt"
        torch.save({"header": "not-a-checkpoint"}, bogus)
        with pytest.raises(CheckpointError):
            load_checkpoint(bogus)


class TestEndToEndSample:
    def test_sample_writes_motion_and_plot(self, train_out, tmp_path):
        _, result = train_out
        out_path = tmp_path / "sample.bin"
        plot_path = tmp_path / "sample.png"
        motion = end_to_end_sample(
            "a person waves the right hand.", result.final_checkpoint,
            frames=12, steps=3, out_path=out_path, plot_path=plot_path,
        )
        assert motion.frames == 12
        assert motion.features.shape == (12, FEATURE_DIM)
        reloaded = load_motion(out_path)
        np.testing.assert_array_equal(reloaded.features, motion.features)
        assert plot_path.exists() and plot_path.stat().st_size > 0

    def test_sample_is_seed_deterministic(self, train_out):
        _, result = train_out
        loaded = load_checkpoint(result.final_checkpoint)
        a = end_to_end_sample("a person walks forward.", loaded, frames=10, steps=3, seed=5)
        b = end_to_end_sample("a person walks forward.", loaded, frames=10, steps=3, seed=5)
        c = end_to_end_sample("a person walks forward.", loaded, frames=10, steps=3, seed=6)
        np.testing.assert_array_equal(a.features, b.features)
        assert not np.array_equal(a.features, c.features)


class TestAblationMatrix:
    def test_twelve_unique_combinations(self):
        combos = ablation_combinations()
        assert len(combos) == 12
        seen = {tuple(sorted(c.items())) for c in combos}
        assert len(seen) == 12
        assert {c["text_encoder"] for c in combos} == {
            "stub", "toy_contrastive", "external"
        }
        assert {c["block_kind"] for c in combos} == {"conformer", "transformer"}
        assert {c["enable_optimizer"] for c in combos} == {True, False}


@pytest.fixture(scope="module")
def cli_env(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    runner = CliRunner()
    data = root / "data"
    result = runner.invoke(cli_main, ["toycorpus", "--out", str(data)])
    assert result.exit_code == 0, result.output
    return runner, root, data


class TestCli:
    def test_toycorpus_and_ingest(self, cli_env):
        runner, _, data = cli_env
        result = runner.invoke(cli_main, ["ingest", str(data)])
        assert result.exit_code == 0, result.output
        assert "16" in result.output

    def test_decompose_single_caption(self, cli_env):
        runner, _, _ = cli_env
        result = runner.invoke(
            cli_main, ["decompose", "--text", "a person waves the right hand."]
        )
        assert result.exit_code == 0, result.output
        payload = json.loads(result.output)
        assert payload["right_arm"] == "waves the right hand"
        assert payload["left_arm"] == "does nothing"

    def test_train_sample_eval_chain(self, cli_env):
        runner, root, data = cli_env
        out = root / "run"
        result = runner.invoke(cli_main, [
            "train", "--dataset", str(data), "--out", str(out),
            "--max-steps", "2", "--batch-size", "2",
            "--diffusion-steps", "50", "--checkpoint-every", "2",
        ])
        assert result.exit_code == 0, result.output
        ckpt = out / "ckpt_final.pt"
        assert ckpt.exists()

        sample_path = root / "sample.bin"
        result = runner.invoke(cli_main, [
            "sample", "--text", "a person walks forward.",
            "--ckpt", str(ckpt), "--out", str(sample_path),
            "--frames", "8", "--steps", "2",
        ])
        assert result.exit_code == 0, result.output
        assert load_motion(sample_path).frames == 8

        report_path = root / "report.json"
        result = runner.invoke(cli_main, [
            "eval", "--gen-dir", str(data), "--ref-dir", str(data),
            "--eval-ckpt", str(root / "eval.pt"), "--out", str(report_path),
            "--fit-eval",
        ])
        assert result.exit_code == 0, result.output
        report = json.loads(report_path.read_text())
        assert report["schema"] == "metrics-report-v1"
        assert report["gen_count"] == 16
