"""Acceptance gate: thirteen pinned criteria, one test per criterion.

Each test is independent and named for its criterion so `pytest -v` yields
one pass/fail line per criterion.  Tolerances pinned here are contractual;
do not loosen them to make a failing build pass.
"""

import json
import math

import numpy as np
import pytest
import scipy.linalg
import torch
from torch import nn

from lgtm.diffusion import (
    SampleRequest,
    ddim_sample,
    make_schedule,
    q_sample,
)
from lgtm.encoders import PartEncoderConfig, PartMotionEncoder, stub_text_encoders
from lgtm.harness import (
    TrainConfig,
    end_to_end_sample,
    ingest,
    precompute_decompositions,
    run_ablation_matrix,
    train,
)
from lgtm.metrics import fid, FeatureSet, artifact_metrics, pmm_sim
from lgtm.model import build_model
from lgtm.motion import (
    CONTACTS,
    FEATURE_DIM,
    MotionSequence,
    PART_NAMES,
    default_skeleton,
    denormalize,
    partition,
    recompose,
    save_motion,
)
from lgtm.optimizer import (
    AttentionEncoderBlock,
    FullBodyOptimizer,
    OptimizerConfig,
    SmoothNet,
    slot_slice,
)
from lgtm.text_partition import IDLE_PHRASE, PartTexts, decompose, parse_decomposition
from lgtm.toycorpus import build_toy_corpus
from lgtm.kinematics import GlobalPose


class ConstantDenoiser:
    def __init__(self, target: np.ndarray):
        self.target = torch.from_numpy(np.asarray(target, dtype=np.float32))

    def denoise_tensor(self, features, step, part_texts, caption):
        return self.target.clone()


def test_criterion_01_partition_widths():
    skel = default_skeleton()
    widths = tuple(len(skel.part_columns[p]) for p in PART_NAMES)
    assert widths == (24, 48, 48, 43, 50, 50)
    assert sum(widths) == 263 == FEATURE_DIM
    all_cols = np.concatenate([skel.part_columns[p] for p in PART_NAMES])
    assert sorted(all_cols.tolist()) == list(range(FEATURE_DIM))


def test_criterion_02_partition_round_trip():
    rng = np.random.default_rng(0)
    skel = default_skeleton()
    for _ in range(1000):
        frames = int(rng.integers(1, 9))
        features = rng.standard_normal((frames, FEATURE_DIM)).astype(np.float32)
        motion = MotionSequence(features, fps=20.0, clip_id="rt")
        back = recompose(partition(motion, skel), skel)
        np.testing.assert_array_equal(back.features, motion.features)


def test_criterion_03_decomposition_example_fixture():
    raw = json.dumps(
        {
            "head": "dose nothing",
            "left arm": "dose nothing",
            "right arm": "waves hand",
            "torso": "slightly bends down",
            "left leg": "takes a few steps forward",
            "right leg": "takes a few steps forward",
        }
    )
    parts = parse_decomposition(raw)
    assert parts.as_dict() == {
        "head": IDLE_PHRASE,
        "left_arm": IDLE_PHRASE,
        "right_arm": "waves hand",
        "torso": "slightly bends down",
        "left_leg": "takes a few steps forward",
        "right_leg": "takes a few steps forward",
    }


def test_criterion_04_ddim_fixed_point(toy_stats):
    sched = make_schedule("cosine", num_steps=1000)
    rng = np.random.default_rng(0)
    target = rng.standard_normal((8, FEATURE_DIM)).astype(np.float32)
    expected = denormalize(
        MotionSequence(target.copy(), fps=20.0, clip_id="m"), toy_stats
    )
    expected.features[:, CONTACTS] = np.clip(expected.features[:, CONTACTS], 0.0, 1.0)
    for steps in (1, 5, 50):
        req = SampleRequest(caption="a person walks.", frames=8, steps=steps)
        out = ddim_sample(
            req, ConstantDenoiser(target), sched, toy_stats, PartTexts.idle()
        )
        np.testing.assert_allclose(
            out.features, expected.features, atol=1e-5, err_msg=f"steps={steps}"
        )


def test_criterion_05_qsample_variance():
    sched = make_schedule("cosine", num_steps=1000)
    frames = 3803  # frames * 263 features > 1e6 elements
    m0 = MotionSequence(
        np.zeros((frames, FEATURE_DIM), dtype=np.float32), fps=20.0, clip_id="z"
    )
    rng = np.random.default_rng(0)
    for n in (250, 500, 750):
        eps = rng.standard_normal((frames, FEATURE_DIM))
        noisy = q_sample(m0, n, eps, sched)
        target = 1.0 - sched.signal(n)
        measured = float(np.var(noisy.features.astype(np.float64)))
        assert abs(measured - target) <= 0.05 * target, (n, measured, target)


def test_criterion_06_gradient_checks():
    torch.manual_seed(0)
    conformer = PartEncoderConfig(
        latent_dim=16, num_blocks=1, num_heads=2, conv_kernel_size=3, ff_width=24
    )
    from lgtm.encoders import ConformerBlock

    block = ConformerBlock(conformer).double()
    x = torch.randn(3, 16, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(block, (x,), eps=1e-6, rtol=1e-3, atol=1e-5)

    attn = AttentionEncoderBlock(dim=16, num_heads=2, ff_width=24, dropout=0.0).double()
    x = torch.randn(3, 16, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(attn, (x,), eps=1e-6, rtol=1e-3, atol=1e-5)

    smooth = SmoothNet(window=4, layers=2, hidden=8).double()
    nn.init.normal_(smooth.lin_out.weight, std=0.1)  # leave the zero init
    z = torch.randn(10, 3, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(smooth, (z,), eps=1e-6, rtol=1e-3, atol=1e-5)


def test_criterion_07_part_latent_independence():
    torch.manual_seed(0)
    model = build_model(
        stub_text_encoders(dim=32),
        num_steps=20,
        part_config=PartEncoderConfig(
            latent_dim=16, num_blocks=1, num_heads=2, conv_kernel_size=3, ff_width=24
        ),
        optimizer_config=OptimizerConfig(
            part_latent_dim=16, num_blocks=1, num_heads=8, ff_width=32,
            smoothnet_hidden=8,
        ),
    ).eval()
    rng = np.random.default_rng(0)
    features = torch.from_numpy(
        rng.standard_normal((10, FEATURE_DIM)).astype(np.float32)
    )

    def latents(feats, part_texts):
        out = {}
        with torch.no_grad():
            for part in PART_NAMES:
                text = model.text_encoders.encode_part(part, part_texts[part])
                out[part] = model.part_encoders[part](
                    feats[:, model._part_cols[part]], text.as_tensor(), 0
                )
        return out

    base = latents(features, PartTexts.idle())
    for target in PART_NAMES:
        # Perturb the target part's motion columns.
        bumped = features.clone()
        bumped[:, model._part_cols[target]] += 0.5
        after = latents(bumped, PartTexts.idle())
        assert not torch.equal(after[target], base[target])
        for other in PART_NAMES:
            if other != target:
                assert torch.equal(after[other], base[other]), (target, other)

        # Perturb the target part's narrative text.
        texts = dict.fromkeys(PART_NAMES, IDLE_PHRASE)
        texts[target] = "moves differently"
        after = latents(features, PartTexts(texts, source="manual"))
        assert not torch.equal(after[target], base[target])
        for other in PART_NAMES:
            if other != target:
                assert torch.equal(after[other], base[other]), (target, other)


def test_criterion_08_cross_part_coupling():
    skel = default_skeleton()
    z = torch.randn(12, 96, generator=torch.Generator().manual_seed(0))
    bump = torch.zeros(12, 96)
    bump[:, slot_slice("left_leg", 16)] = 0.5

    # Enabled: the attention stage must propagate leg-latent changes into
    # head feature columns (activate the zero-init projection first).
    torch.manual_seed(0)
    coupled = FullBodyOptimizer(
        OptimizerConfig(part_latent_dim=16, num_heads=8), text_dim=8
    ).eval()
    nn.init.normal_(coupled.attention.out_proj.weight, std=0.05)
    with torch.no_grad():
        diff = coupled(z + bump, torch.zeros(8)) - coupled(z, torch.zeros(8))
    head_cols = torch.as_tensor(skel.part_columns["head"])
    assert diff[:, head_cols].abs().max() > 1e-6

    # Disabled (no attention, head restricted to its own slots): the probe
    # must be block-diagonal exactly, even with smoothing active.
    torch.manual_seed(0)
    isolated = FullBodyOptimizer(
        OptimizerConfig(part_latent_dim=16, num_heads=8, enable_optimizer=False),
        text_dim=8,
    ).eval()
    nn.init.normal_(isolated.smoothnet.lin_out.weight, std=0.1)
    isolated.restrict_head_to_parts()
    with torch.no_grad():
        diff = isolated(z + bump, torch.zeros(8)) - isolated(z, torch.zeros(8))
    leg_cols = set(skel.part_columns["left_leg"])
    other_cols = [c for c in range(FEATURE_DIM) if c not in leg_cols]
    assert torch.equal(diff[:, other_cols], torch.zeros(12, len(other_cols)))
    assert diff[:, sorted(leg_cols)].abs().max() > 1e-6


def test_criterion_09_pmm_sim_formula():
    v = np.array([1.0, -2.0, 0.5])
    assert pmm_sim(v, 3.0 * v) == 1.0
    assert pmm_sim(v, -v) == 0.0
    assert pmm_sim(np.array([1.0, 0.0]), np.array([0.0, -1.0])) == 0.5
    rng = np.random.default_rng(0)
    for _ in range(100):
        a = rng.standard_normal(16)
        b = rng.standard_normal(16)
        direct = 0.5 * (
            float(np.dot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b)) + 1.0
        )
        assert abs(pmm_sim(a, b) - direct) <= 1e-7


def test_criterion_10_fid_oracle():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((256, 6))
    b = rng.standard_normal((256, 6)) @ np.diag([1.0, 0.5, 2.0, 1.0, 1.5, 0.75]) + 0.4
    set_a = FeatureSet(a, origin="motion")
    set_b = FeatureSet(b, origin="motion")
    assert fid(set_a, set_a) <= 1e-6

    eps = 1e-6
    ca = np.cov(a, rowvar=False) + eps * np.eye(6)
    cb = np.cov(b, rowvar=False) + eps * np.eye(6)
    cross = scipy.linalg.sqrtm(ca @ cb)
    if np.iscomplexobj(cross):
        cross = cross.real
    diff = a.mean(axis=0) - b.mean(axis=0)
    expected = float(diff @ diff + np.trace(ca) + np.trace(cb) - 2.0 * np.trace(cross))
    assert abs(fid(set_a, set_b) - expected) <= 1e-5


def test_criterion_11_artifact_metric_fixtures():
    def pose(foot_height=0.0):
        pos = np.zeros((8, 22, 3))
        pos[:, :, 1] = 1.0
        for j in (7, 10, 8, 11):
            pos[:, j, 1] = foot_height
        return GlobalPose(pos, fps=20.0)

    contacts_on = np.ones((8, 4))
    contacts_off = np.zeros((8, 4))

    planted = artifact_metrics(pose(), contacts_on)
    assert (planted.sliding_cm_s, planted.penetration_cm, planted.floating_cm) == (
        0.0, 0.0, 0.0,
    )

    slide = pose()
    for j in (7, 10, 8, 11):
        slide.positions[:, j, 0] = 0.01 * np.arange(8)  # 0.01 units / frame
    sliding = artifact_metrics(slide, contacts_on)
    assert np.isclose(sliding.sliding_cm_s, 20.0, atol=1e-9)  # *20 fps *100 cm

    # The elevated fixture sits below the default contact-height gate, so the
    # floating probe runs with the gate lowered beneath the fixture height.
    floating = artifact_metrics(pose(foot_height=0.03), contacts_off,
                                height_threshold=0.02)
    assert np.isclose(floating.floating_cm, 3.0, atol=1e-9)


@pytest.mark.slow
def test_criterion_12_overfit_and_part_semantics(tmp_path, eval_encoders):
    clips = [build_toy_corpus()[i] for i in (1, 3, 5, 7)]
    root = tmp_path / "four"
    (root / "motions").mkdir(parents=True)
    (root / "texts").mkdir()
    for clip in clips:
        save_motion(root / "motions" / f"{clip.clip_id}.bin", clip.motion)
        (root / "texts" / f"{clip.clip_id}.txt").write_text(
            clip.caption + "\n", encoding="utf-8"
        )
    index = ingest(root)
    precompute_decompositions(index)

    config = TrainConfig(
        max_steps=300, batch_size=4, learning_rate=3e-4,
        checkpoint_every=300, seed=0,
    )
    result = train(config, index, tmp_path / "run")
    initial = float(np.mean(result.losses[:10]))
    final = float(np.mean(result.losses[-10:]))
    assert final < 0.25 * initial, (initial, final)

    captions = [c.caption for c in clips]
    samples = [
        end_to_end_sample(caption, result.final_checkpoint, frames=32, steps=50)
        for caption in captions
    ]
    narratives = [decompose(caption) for caption in captions]

    def mean_pmm(pairing):
        values = []
        for sample_i, text_i in pairing:
            sims = eval_encoders.part_similarity(samples[sample_i], narratives[text_i])
            values.extend(sims.values())
        return float(np.mean(values))

    matched = mean_pmm([(i, i) for i in range(4)])
    shuffled = mean_pmm([(i, (i + 1) % 4) for i in range(4)])
    assert matched > shuffled, (matched, shuffled)


@pytest.mark.slow
def test_criterion_13_ablation_smoke_matrix(tmp_path, toy_index):
    results = run_ablation_matrix(
        toy_index, tmp_path / "matrix", steps=10, batch_size=4,
        sample_frames=16, sample_steps=5,
    )
    assert len(results) == 12
    assert all(r["sample_frames"] == 16 for r in results)
    combos = {
        (r["text_encoder"], r["block_kind"], r["enable_optimizer"]) for r in results
    }
    assert len(combos) == 12
