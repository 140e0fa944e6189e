"""Seeded builders for the networks and datasets used in tests and demos.

Everything here is deterministic in its seed; the two digit-recognition
architectures mirror the shipped fixture files (a 3x3x8 convolution over
28x28 inputs followed by dense layers, with and without max-pooling).
"""

from __future__ import annotations

import numpy as np

from .model import Dataset, LayerSpec, Model, classify


def random_dense_model(sizes, seed: int = 0, input_domain=(0.0, 1.0),
                       hidden_activation: str = "relu") -> Model:
    """Fully-connected network with 1/sqrt(fan-in) scaled random weights."""
    rng = np.random.default_rng(seed)
    layers = []
    for i in range(1, len(sizes)):
        W = rng.standard_normal((sizes[i], sizes[i - 1])) / np.sqrt(sizes[i - 1])
        b = rng.standard_normal(sizes[i]) * 0.1
        act = hidden_activation if i < len(sizes) - 1 else "none"
        layers.append(LayerSpec("dense", (sizes[i - 1],), (sizes[i],), act, W, b))
    return Model(layers=tuple(layers), input_domain=input_domain,
                 label_count=sizes[-1])


def digits_conv_model(seed: int = 0, maxpool: bool = False) -> Model:
    """28x28x1 -> conv 3x3x8 (ReLU) [-> maxpool 2x2] -> flatten -> dense 42
    (ReLU) -> dense 10 (softmax), with random weights."""
    rng = np.random.default_rng(seed)
    layers = [LayerSpec("conv2d", (28, 28, 1), (26, 26, 8), "relu",
                        rng.standard_normal((3, 3, 1, 8)) / 3.0,
                        rng.standard_normal(8) * 0.1)]
    shape = (26, 26, 8)
    if maxpool:
        layers.append(LayerSpec("maxpool2d", shape, (13, 13, 8), "none",
                                pool=(2, 2), stride=(2, 2)))
        shape = (13, 13, 8)
    flat = int(np.prod(shape))
    layers.append(LayerSpec("flatten", shape, (flat,), "none"))
    layers.append(LayerSpec("dense", (flat,), (42,), "relu",
                            rng.standard_normal((42, flat)) / np.sqrt(flat),
                            rng.standard_normal(42) * 0.1))
    layers.append(LayerSpec("dense", (42,), (10,), "softmax",
                            rng.standard_normal((10, 42)) / np.sqrt(42),
                            rng.standard_normal(10) * 0.1))
    return Model(layers=tuple(layers), input_domain=(0.0, 1.0), label_count=10)


def uniform_dataset(model: Model, n: int, seed: int = 0,
                    low: float | None = None, high: float | None = None,
                    self_labelled: bool = True) -> Dataset:
    """Inputs drawn uniformly from (a sub-box of) the input domain; labels
    default to the model's own classifications (trivially correct seeds)."""
    rng = np.random.default_rng(seed)
    lo, hi = model.input_domain
    low = lo if low is None else low
    high = hi if high is None else high
    inputs = rng.uniform(low, high, size=(n,) + model.input_shape)
    labels = None
    if self_labelled:
        labels = np.array([classify(model, x) for x in inputs], dtype=np.int64)
    return Dataset(inputs=inputs, labels=labels)


def concolic_fixture(seed: int = 0):
    """Small dense network + seed pool used by the generation-loop checks.

    Inputs concentrate on an inner sub-box so that extended partitions
    leave LP-reachable corner regions inside the input domain.
    """
    model = random_dense_model([12, 10, 8, 4], seed=seed)
    seeds = uniform_dataset(model, 100, seed=seed + 1, low=0.2, high=0.8)
    return model, seeds
