import numpy as np
import pytest

from segcap import bpe
from segcap.model import Model, ModelConfig

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def tiny_config(multimodal: bool = True, **overrides) -> ModelConfig:
    base = dict(vocab_size=32, embed_dim=8, heads=2, text_layers=2, video_layers=2,
                decoder_layers=2, ffw_dim=16, max_text_positions=24,
                max_video_positions=8, dropout=0.0, video_feature_dim=6,
                multimodal=multimodal)
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def tiny_model() -> Model:
    return Model.init(tiny_config(), seed=3, dtype=np.float64)


@pytest.fixture
def small_vocab() -> bpe.Vocabulary:
    lines = ["add the eggs to the pan", "mix the flour and sugar",
             "pour the milk", "heat the pan", "add the sugar",
             "whisk the eggs and milk", "mix the dough"]
    return bpe.train_bpe(lines, target_size=64)
