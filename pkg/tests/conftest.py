import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from byteveil.corpus import CorpusSpec, generate_corpus, load_labeled
from byteveil.model import Hyper, init_params
from byteveil.training import TrainConfig, train

TOY_HYPER = Hyper(d=2048, window=256, stride=256, n_filters=8, h=16)


@pytest.fixture
def tiny_hyper():
    """The smallest config the forward oracle is checked against."""
    return Hyper(d=16, window=4, stride=4, n_filters=2, h=3)


@pytest.fixture
def tiny_params(tiny_hyper):
    return init_params(tiny_hyper, np.random.default_rng(0))


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """24 + 24 short files; lengths kept under TOY_HYPER.d so every sample
    leaves padding room for attacks."""
    root = tmp_path_factory.mktemp("toy_corpus")
    spec = CorpusSpec(n_malware=24, n_benign=24, min_len=1024, max_len=2000, seed=3)
    entries = generate_corpus(spec, root)
    return root, spec, entries


@pytest.fixture(scope="session")
def toy_labeled(toy_corpus):
    root, _, entries = toy_corpus
    return load_labeled(root, entries)


@pytest.fixture(scope="session")
def toy_trained(toy_labeled):
    """A small detector trained to convergence on the toy corpus."""
    config = TrainConfig(hyper=TOY_HYPER, epochs=25, seed=1)
    return train(toy_labeled, config)
