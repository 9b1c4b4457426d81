import pytest

from scenediff.datasets import ToyDatasetConfig, generate_toy_dataset, toy_vocabulary
from scenediff.scenegraph import SceneGraph, Vocabulary


@pytest.fixture(scope="session")
def toy_cfg():
    return ToyDatasetConfig(count=8, image_size=32)


@pytest.fixture(scope="session")
def toy_vocab(toy_cfg):
    return toy_vocabulary(toy_cfg)


@pytest.fixture(scope="session")
def toy_pairs(toy_cfg):
    return generate_toy_dataset(toy_cfg, seed=7)


@pytest.fixture
def small_vocab():
    return Vocabulary(
        ["cat", "dog", "car", "tree", "person"],
        ["left of", "right of", "above", "below", "inside", "surrounding"],
    )


@pytest.fixture
def chain_graph():
    # 3 nodes, 2 triplets, node 2 isolated (exercises the fallback path)
    return SceneGraph([0, 1, 2], [(0, 0, 1), (1, 1, 0)])
