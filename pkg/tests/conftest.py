import numpy as np
import pytest

from zeroswot.data import GeneratorSpec
from zeroswot.encoder import ModelConfig


@pytest.fixture(scope="session")
def small_model_cfg():
    """A deliberately tiny transformer stack for fast structural tests."""
    return ModelConfig(d=8, heads=2, ff_dim=16, acoustic_layers=1,
                       shared_layers=3, decoder_layers=1,
                       subword_enc_layers=2, feat_dim=4, taps=(2, 3))


@pytest.fixture(scope="session")
def gen_spec():
    return GeneratorSpec()


@pytest.fixture(scope="session")
def vocabs(gen_spec):
    return gen_spec.letter_vocab(), gen_spec.subword_vocab()


@pytest.fixture(scope="session")
def tiny_corpus(gen_spec):
    from zeroswot.data import gen_corpus
    return gen_corpus(gen_spec, 24, seed=5)


def rand_tensor(rng, shape, requires_grad=True):
    from zeroswot.autodiff import Tensor
    return Tensor(rng.normal(size=shape), requires_grad=requires_grad)
