import numpy as np
import pytest

from vaseq import loader, synth
from vaseq.model import ModelConfig


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Small synthetic corpus shared by training-related tests."""
    out = tmp_path_factory.mktemp("tiny_corpus")
    synth.generate(out, videos=3, frames=48, seed=11)
    return out


def tiny_model_config(**overrides):
    base = dict(backbone="vgg", width=1, cell="gru", hidden=8, rnn_layers=2,
                attention=False, attention_window=4, seq_len=4, seed=0)
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def tiny_loader(tiny_corpus):
    def make(training=True, seed=0, seq_len=4, batch=2):
        cfg = loader.LoaderConfig(seq_length=seq_len, batch_size=batch,
                                  epochs=1, training=training, seed=seed)
        return loader.load(tiny_corpus / "records", cfg)

    return make
