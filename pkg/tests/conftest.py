import numpy as np
import pytest

from stylepose.data import load_manifest
from stylepose.synthetic import build_corpus


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    """Small posed-figure corpus: 2 persons x 4 images at 64x64."""
    out = tmp_path_factory.mktemp("corpus")
    build_corpus(out, n_persons=2, images_per_person=4, image_size=64, seed=0)
    return out


@pytest.fixture(scope="session")
def corpus_manifest(corpus_dir):
    return load_manifest(corpus_dir / "manifest.tsv")


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
