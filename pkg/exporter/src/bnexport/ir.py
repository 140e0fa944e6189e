"""Framework-neutral layer description shared by all checkpoint readers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SUPPORTED_KINDS = ("dense", "conv2d", "maxpool2d", "flatten")


class UnsupportedLayerError(ValueError):
    """Checkpoint contains a layer the portable format cannot express."""


@dataclass
class LayerIR:
    """One layer in portable terms: channels-last, valid padding.

    dense weights: (out, in); conv2d kernel: (kh, kw, cin, cout).
    """

    kind: str
    input_shape: tuple[int, ...]
    output_shape: tuple[int, ...]
    activation: str = "none"
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    pool: tuple[int, int] | None = None
    stride: tuple[int, int] = (1, 1)

    @property
    def parameter_count(self) -> int:
        n = 0
        if self.weights is not None:
            n += self.weights.size
        if self.bias is not None:
            n += self.bias.size
        return n


def check_chain(layers: list[LayerIR], input_shape) -> None:
    prev = tuple(input_shape)
    for i, layer in enumerate(layers):
        if layer.kind not in SUPPORTED_KINDS:
            raise UnsupportedLayerError(f"layer {i}: unsupported kind {layer.kind!r}")
        if tuple(layer.input_shape) != prev:
            raise UnsupportedLayerError(
                f"layer {i}: input {layer.input_shape} does not chain with {prev}")
        prev = tuple(layer.output_shape)
