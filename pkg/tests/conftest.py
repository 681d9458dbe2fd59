"""Shared tiny fixtures: a one-second corpus and a one-block model."""

import numpy as np
import pytest

from src.dataset import CorpusConfig, generate_corpus
from src.dsp import FeatureConfig
from src.trainer import TrainConfig
from src.types import ModelConfig, Waveform

TINY_FEATURES = FeatureConfig(
    sample_rate=16000, window_size=256, hop=128, n_mels=16, clip_seconds=1.0
)
TINY_CORPUS = CorpusConfig(
    n_classes=3,
    n_train_strong=4,
    n_train_weak=4,
    n_train_unlabeled=4,
    n_validation=2,
    n_test=3,
    pool_factor=2,
)


@pytest.fixture
def feature_cfg() -> FeatureConfig:
    return TINY_FEATURES


@pytest.fixture(scope="session")
def tiny_dataset():
    return generate_corpus(TINY_CORPUS, TINY_FEATURES, seed=7)


@pytest.fixture
def tiny_train_config() -> TrainConfig:
    return TrainConfig(
        conv_blocks=1,
        channels=(2,),
        recurrent_hidden=3,
        epochs=2,
        composition=(1, 1, 2),
        steps_per_epoch=1,
    )


@pytest.fixture
def tiny_model_config() -> ModelConfig:
    return ModelConfig(
        n_mels=8, n_classes=2, conv_blocks=1, channels=(2,), pool_factor=2, recurrent_hidden=3
    )


@pytest.fixture
def sine():
    def make(freq: float, seconds: float = 1.0, sample_rate: int = 16000, amp: float = 0.5):
        t = np.arange(int(seconds * sample_rate)) / sample_rate
        return Waveform(amp * np.sin(2 * np.pi * freq * t), sample_rate)

    return make
