import numpy as np
import pytest

from convqg.auxiliary import FrozenSentenceEmbedder
from convqg.model import ModelConfig, QuestionModel
from convqg.objective import prepare_example
from convqg.toyworld import generate_world
from convqg.training import build_vocab

TINY_CONFIG = ModelConfig(
    d_model=16, n_layers=1, n_heads=2, d_ff=32, max_len=16, d_sent=8
)


@pytest.fixture(scope="session")
def tiny_world():
    return generate_world(seed=7, n_scenes=24)


@pytest.fixture(scope="session")
def tiny_vocab(tiny_world):
    return build_vocab([ex for ex in tiny_world if ex.split == "train"])


@pytest.fixture(scope="session")
def tiny_embedder(tiny_vocab):
    return FrozenSentenceEmbedder(tiny_vocab.id_to_token, TINY_CONFIG.d_sent, seed=1234)


@pytest.fixture
def tiny_model(tiny_vocab):
    return QuestionModel(TINY_CONFIG, len(tiny_vocab), seed=3, dtype=np.float64)


@pytest.fixture(scope="session")
def tiny_prepared(tiny_world, tiny_vocab, tiny_embedder):
    return [
        prepare_example(ex, tiny_vocab, tiny_embedder, np.float64)
        for ex in tiny_world[:6]
    ]
