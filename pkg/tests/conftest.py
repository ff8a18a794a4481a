import numpy as np
import pytest

from simulst.config import ModelConfig
from simulst.decoder import Vocabulary
from simulst.model import build_model
from simulst.tensor_core import float64_mode

SMALL = ModelConfig(
    d_feat=8, d_enc=16, enc_layers=2, enc_heads=2, enc_ffn=32, block_size=4,
    d_adapter=16, d_model=16, dec_layers=2, dec_heads=2, dec_ffn=32, vocab_size=12,
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cfg():
    return SMALL


@pytest.fixture
def word_vocab():
    return Vocabulary(SMALL.vocab_size, one_token_per_word=True)


@pytest.fixture
def model(word_vocab):
    return build_model(SMALL, seed=3, vocab=word_vocab)


@pytest.fixture
def model64(word_vocab):
    with float64_mode():
        yield build_model(SMALL, seed=3, vocab=word_vocab)


@pytest.fixture
def f64():
    with float64_mode():
        yield


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
