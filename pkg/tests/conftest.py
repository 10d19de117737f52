import pytest

from lgtm.harness import ingest, precompute_decompositions
from lgtm.metrics import train_eval_encoders
from lgtm.motion import compute_stats
from lgtm.toycorpus import build_toy_corpus, write_toy_corpus


@pytest.fixture(scope="session")
def toy_clips():
    return build_toy_corpus()


@pytest.fixture(scope="session")
def toy_stats(toy_clips):
    return compute_stats([clip.motion for clip in toy_clips])


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy_dataset")
    write_toy_corpus(root)
    return root


@pytest.fixture(scope="session")
def toy_index(toy_dataset):
    index = ingest(toy_dataset)
    precompute_decompositions(index)
    return index


@pytest.fixture(scope="session")
def eval_encoders(toy_clips):
    return train_eval_encoders(
        [(clip.motion, clip.caption, clip.part_texts) for clip in toy_clips]
    )
