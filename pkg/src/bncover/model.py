"""Sequential feed-forward models and their evaluation.

A model is an ordered list of layers (dense, conv2d, maxpool2d, flatten).
Evaluation records, for every layer, the neuron values both before and
after the activation function; the "before" values are what the feature
extraction downstream consumes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

LAYER_KINDS = ("dense", "conv2d", "maxpool2d", "flatten")
ACTIVATIONS = ("relu", "none", "softmax")


class ModelError(ValueError):
    """Inconsistent layer specification or model structure."""


class ShapeMismatchError(ModelError):
    """Input or weight shapes do not chain."""


def _as_readonly(a):
    if a is None:
        return None
    # canonical layout: evaluation results must not depend on whether the
    # weights were built in memory or reloaded from a container
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a sequential network.

    Weights layout: dense stores (out, in); conv2d stores the kernel as
    (kh, kw, in_channels, out_channels) with channels-last activations and
    valid padding.  maxpool2d and flatten carry no weights.
    """

    kind: str
    input_shape: tuple[int, ...]
    output_shape: tuple[int, ...]
    activation: str = "none"
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    pool: tuple[int, int] | None = None  # maxpool2d window
    stride: tuple[int, int] = (1, 1)

    def __post_init__(self):
        object.__setattr__(self, "weights", _as_readonly(self.weights))
        object.__setattr__(self, "bias", _as_readonly(self.bias))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "output_shape", tuple(int(s) for s in self.output_shape))

    @property
    def size(self) -> int:
        """Number of neurons in this layer."""
        return int(np.prod(self.output_shape))

    @property
    def parameter_count(self) -> int:
        n = 0
        if self.weights is not None:
            n += self.weights.size
        if self.bias is not None:
            n += self.bias.size
        return n


def validate_layer(layer: LayerSpec, index: int) -> None:
    if layer.kind not in LAYER_KINDS:
        raise ModelError(f"layer {index}: unsupported layer kind {layer.kind!r}")
    if layer.activation not in ACTIVATIONS:
        raise ModelError(f"layer {index}: unsupported activation {layer.activation!r}")
    if layer.kind in ("maxpool2d", "flatten"):
        if layer.weights is not None or layer.bias is not None:
            raise ModelError(f"layer {index}: {layer.kind} carries no weights")
        if layer.activation != "none":
            raise ModelError(f"layer {index}: {layer.kind} has no activation")
    if layer.kind == "dense":
        out = int(np.prod(layer.output_shape))
        inp = int(np.prod(layer.input_shape))
        if layer.weights is None or layer.weights.shape != (out, inp):
            got = None if layer.weights is None else layer.weights.shape
            raise ShapeMismatchError(
                f"layer {index}: dense weights must be {(out, inp)}, got {got}"
            )
        if layer.bias is None or layer.bias.shape != (out,):
            raise ShapeMismatchError(f"layer {index}: dense bias must be ({out},)")
    elif layer.kind == "conv2d":
        if len(layer.input_shape) != 3 or len(layer.output_shape) != 3:
            raise ShapeMismatchError(f"layer {index}: conv2d needs 3-d shapes (h, w, c)")
        if layer.weights is None or layer.weights.ndim != 4:
            raise ShapeMismatchError(f"layer {index}: conv2d kernel must be 4-d")
        kh, kw, cin, cout = layer.weights.shape
        h, w, c = layer.input_shape
        sh, sw = layer.stride
        if c != cin:
            raise ShapeMismatchError(
                f"layer {index}: kernel expects {cin} input channels, layer has {c}"
            )
        expected = ((h - kh) // sh + 1, (w - kw) // sw + 1, cout)
        if layer.output_shape != expected:
            raise ShapeMismatchError(
                f"layer {index}: conv2d output shape {layer.output_shape} != {expected}"
            )
        if layer.bias is None or layer.bias.shape != (cout,):
            raise ShapeMismatchError(f"layer {index}: conv2d bias must be ({cout},)")
    elif layer.kind == "maxpool2d":
        if layer.pool is None:
            raise ModelError(f"layer {index}: maxpool2d needs a pool size")
        h, w, c = layer.input_shape
        ph, pw = layer.pool
        sh, sw = layer.stride
        expected = ((h - ph) // sh + 1, (w - pw) // sw + 1, c)
        if layer.output_shape != expected:
            raise ShapeMismatchError(
                f"layer {index}: maxpool2d output shape {layer.output_shape} != {expected}"
            )
    elif layer.kind == "flatten":
        if int(np.prod(layer.input_shape)) != int(np.prod(layer.output_shape)):
            raise ShapeMismatchError(f"layer {index}: flatten must preserve element count")


@dataclass(frozen=True)
class Model:
    """A validated sequential network plus its input domain."""

    layers: tuple[LayerSpec, ...]
    input_domain: tuple[float, float] = (0.0, 1.0)
    label_count: int = 0
    source_digest: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ModelError("model has no layers")
        for i, layer in enumerate(self.layers):
            validate_layer(layer, i)
            if i > 0 and layer.input_shape != self.layers[i - 1].output_shape:
                raise ShapeMismatchError(
                    f"layer {i}: input shape {layer.input_shape} does not chain with "
                    f"previous output {self.layers[i - 1].output_shape}"
                )
            if layer.activation == "softmax" and i != len(self.layers) - 1:
                raise ModelError(f"layer {i}: softmax permitted only on the final layer")
        lo, hi = self.input_domain
        if not lo < hi:
            raise ModelError("input_domain must be a non-empty closed range")

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.layers[0].input_shape

    @property
    def input_size(self) -> int:
        return int(np.prod(self.input_shape))


@dataclass(frozen=True)
class Activations:
    """Per-layer neuron values for one input.

    ``pre[i]`` holds the values before the activation function and
    ``post[i]`` the values after it; both keep the layer's natural shape.
    For layers without an activation the two are identical.
    """

    input: np.ndarray
    pre: tuple[np.ndarray, ...]
    post: tuple[np.ndarray, ...]

    def pre_flat(self, i: int) -> np.ndarray:
        return self.pre[i].ravel()

    def post_flat(self, i: int) -> np.ndarray:
        return self.post[i].ravel()

    @property
    def label(self) -> int:
        # ties resolve to the lowest index (np.argmax convention)
        return int(np.argmax(self.post[-1].ravel()))


@dataclass(frozen=True)
class Dataset:
    """Inputs (n, *input_shape) with optional integer class labels."""

    inputs: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "inputs", np.asarray(self.inputs, dtype=np.float64))
        if self.labels is not None:
            object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
            if len(self.labels) != len(self.inputs):
                raise ValueError("labels and inputs disagree in length")

    def __len__(self) -> int:
        return len(self.inputs)


def _conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, stride) -> np.ndarray:
    kh, kw, _, cout = kernel.shape
    sh, sw = stride
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(0, 1))
    windows = windows[::sh, ::sw]  # (oh, ow, c, kh, kw)
    oh, ow = windows.shape[:2]
    # rearrange to (oh*ow, kh*kw*c) matching kernel's (kh, kw, cin) ordering
    cols = windows.transpose(0, 1, 3, 4, 2).reshape(oh * ow, -1)
    out = cols @ kernel.reshape(-1, cout) + bias
    return out.reshape(oh, ow, cout)


def _maxpool_windows(in_shape, pool, stride):
    """Yield (flat output index, flat input indices of its window)."""
    h, w, c = in_shape
    ph, pw = pool
    sh, sw = stride
    oh, ow = (h - ph) // sh + 1, (w - pw) // sw + 1
    flat = np.arange(h * w * c).reshape(h, w, c)
    for oy in range(oh):
        for ox in range(ow):
            for ch in range(c):
                window = flat[oy * sh : oy * sh + ph, ox * sw : ox * sw + pw, ch]
                yield (oy * ow + ox) * c + ch, window.ravel()


def _maxpool(x: np.ndarray, pool, stride) -> np.ndarray:
    ph, pw = pool
    sh, sw = stride
    windows = np.lib.stride_tricks.sliding_window_view(x, (ph, pw), axis=(0, 1))
    windows = windows[::sh, ::sw]
    return windows.max(axis=(3, 4))


def softmax(v: np.ndarray) -> np.ndarray:
    z = np.exp(v - np.max(v))
    return z / z.sum()


def forward(model: Model, x) -> Activations:
    """Evaluate the network on one input, capturing every layer's values.

    Pure function of (model, x); repeated calls are bit-identical.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.input_shape:
        raise ShapeMismatchError(
            f"input shape {x.shape} does not match model input {model.input_shape}"
        )
    pre, post = [], []
    cur = x
    for layer in model.layers:
        if layer.kind == "dense":
            p = layer.weights @ cur.ravel() + layer.bias
        elif layer.kind == "conv2d":
            p = _conv2d(cur, layer.weights, layer.bias, layer.stride)
        elif layer.kind == "maxpool2d":
            p = _maxpool(cur, layer.pool, layer.stride)
        else:  # flatten
            p = cur.reshape(layer.output_shape)
        if layer.activation == "relu":
            q = np.maximum(p, 0.0)
        elif layer.activation == "softmax":
            q = softmax(p.ravel()).reshape(p.shape)
        else:
            q = p
        pre.append(p)
        post.append(q)
        cur = q
    return Activations(x, tuple(pre), tuple(post))


def classify(model: Model, x) -> int:
    """Classification label: argmax of the final layer, lowest index on ties.

    Softmax is monotone, so the argmax is taken over the pre-activation
    values of the final layer.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.input_shape:
        raise ShapeMismatchError(
            f"input shape {x.shape} does not match model input {model.input_shape}"
        )
    cur = x
    for layer in model.layers:
        if layer.kind == "dense":
            p = layer.weights @ cur.ravel() + layer.bias
        elif layer.kind == "conv2d":
            p = _conv2d(cur, layer.weights, layer.bias, layer.stride)
        elif layer.kind == "maxpool2d":
            p = _maxpool(cur, layer.pool, layer.stride)
        else:
            p = cur.reshape(layer.output_shape)
        cur = np.maximum(p, 0.0) if layer.activation == "relu" else p
    return int(np.argmax(cur.ravel()))


def maxpool_selection_matrix(model: Model, i: int, act: Activations) -> np.ndarray:
    """Binary selection matrix of a max-pooling layer for one evaluation.

    S[j, k] = 1 iff previous-layer neuron k lies in window j and attains
    the window maximum; rows can hold several ones when values tie.
    """
    layer = model.layers[i]
    if layer.kind != "maxpool2d":
        raise ModelError(f"layer {i} is {layer.kind}, not maxpool2d")
    prev = act.post[i - 1].ravel() if i > 0 else act.input.ravel()
    out = act.pre[i].ravel()
    S = np.zeros((layer.size, prev.size), dtype=bool)
    for j, window in _maxpool_windows(layer.input_shape, layer.pool, layer.stride):
        S[j, window] = prev[window] == out[j]
    return S


def model_digest(model: Model) -> str:
    """Stable content hash over architecture and weights."""
    if model.source_digest is not None:
        return model.source_digest
    h = hashlib.sha256()
    h.update(repr((model.input_domain, model.label_count)).encode())
    for layer in model.layers:
        h.update(
            repr(
                (layer.kind, layer.activation, layer.input_shape, layer.output_shape,
                 layer.pool, layer.stride)
            ).encode()
        )
        if layer.weights is not None:
            h.update(np.ascontiguousarray(layer.weights).tobytes())
        if layer.bias is not None:
            h.update(np.ascontiguousarray(layer.bias).tobytes())
    return h.hexdigest()
