import numpy as np
import pytest

from coattrank.corpus import load_dataset
from coattrank.embeddings import load_triple
from coattrank.synth import write_synth


@pytest.fixture(scope="session")
def synth_paths(tmp_path_factory):
    return write_synth(tmp_path_factory.mktemp("synth"), seed=0, n_queries=200, n_dev=50, dim=32)


@pytest.fixture(scope="session")
def synth_banks(synth_paths):
    p = synth_paths
    return load_triple(p["w2v"], p["glove"], p["fasttext"], p["subwords"])


@pytest.fixture(scope="session")
def synth_train(synth_paths):
    return list(load_dataset(synth_paths["train"]))


@pytest.fixture(scope="session")
def synth_dev(synth_paths):
    return list(load_dataset(synth_paths["dev"]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
