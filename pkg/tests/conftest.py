import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bncover.bayesnet import AbstractionConfig, fit_abstraction
from bncover.discretise import Partition
from bncover.fixtures import concolic_fixture, digits_conv_model, uniform_dataset


@pytest.fixture(scope="session")
def small_pipeline():
    """Small dense model, seed pool, and a fitted abstraction."""
    model, seeds = concolic_fixture(seed=0)
    cfg = AbstractionConfig(analysed_layers=(1, 2), technique="pca", components=2,
                            strategy="quantile", bins=3, extended=True, seed=0,
                            epsilon=1e-8)
    bn = fit_abstraction(model, seeds, cfg)
    return model, seeds, bn


@pytest.fixture(scope="session")
def conv_model():
    return digits_conv_model(seed=7)


@pytest.fixture(scope="session")
def conv_model_maxp():
    return digits_conv_model(seed=7, maxpool=True)


def binary_partition(boundary=0.0):
    return Partition(boundaries=(boundary,), strategy="uniform")
