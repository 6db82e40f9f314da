import numpy as np
import pytest
import torch

from disque.network import DualHeadUNet, NetConfig
from disque.synthetic import colorful_corpus


@pytest.fixture(scope="session")
def corpus():
    return colorful_corpus(6, seed=3, size=96)


@pytest.fixture
def toy_model():
    torch.manual_seed(0)
    return DualHeadUNet(NetConfig.toy(64)).eval()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
