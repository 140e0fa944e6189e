"""Read sequential Keras HDF5 checkpoints into the portable layer IR.

Handles both the current layout (datasets named ``kernel``/``bias``
nested under ``model_weights/<layer>/...``) and the legacy one
(``<layer>/kernel:0``).  Only valid-padding conv/maxpool/flatten/dense
stacks are convertible.
"""

from __future__ import annotations

import json

import h5py
import numpy as np

from .ir import LayerIR, UnsupportedLayerError

_ACTIVATIONS = {"relu": "relu", "linear": "none", "softmax": "softmax",
                None: "none"}


def _layer_weights(group) -> dict:
    """kernel/bias datasets anywhere below a layer's weight group."""
    found = {}

    def visit(name, obj):
        if isinstance(obj, h5py.Dataset):
            leaf = name.split("/")[-1].split(":")[0]
            if leaf in ("kernel", "bias"):
                found[leaf] = np.asarray(obj)

    group.visititems(visit)
    return found


def _pair(value) -> tuple[int, int]:
    if isinstance(value, (list, tuple)):
        return int(value[0]), int(value[1])
    return int(value), int(value)


def read_keras_h5(path):
    """(layers, input_shape) of a sequential HDF5 checkpoint."""
    with h5py.File(path, "r") as f:
        raw_config = f.attrs.get("model_config")
        if raw_config is None:
            raise UnsupportedLayerError("checkpoint carries no model_config")
        if isinstance(raw_config, bytes):
            raw_config = raw_config.decode("utf-8")
        config = json.loads(raw_config)
        if config.get("class_name") != "Sequential":
            raise UnsupportedLayerError(
                f"only sequential checkpoints are supported, got "
                f"{config.get('class_name')!r}")
        weight_root = f["model_weights"] if "model_weights" in f else f

        layers: list[LayerIR] = []
        input_shape = None
        shape = None
        entries = config["config"]["layers"]
        for i, entry in enumerate(entries):
            cls = entry["class_name"]
            cfg = entry["config"]
            name = cfg.get("name", f"layer_{i}")
            if cls == "InputLayer":
                batch = cfg.get("batch_shape") or cfg.get("batch_input_shape")
                shape = tuple(int(s) for s in batch[1:])
                input_shape = shape
                continue
            if shape is None:
                batch = cfg.get("batch_input_shape")
                if batch is None:
                    raise UnsupportedLayerError("cannot determine the input shape")
                shape = tuple(int(s) for s in batch[1:])
                input_shape = shape

            activation = _ACTIVATIONS.get(cfg.get("activation"))
            if cls in ("Conv2D", "Dense") and activation is None:
                raise UnsupportedLayerError(
                    f"layer {name}: unsupported activation {cfg.get('activation')!r}")

            if cls == "Conv2D":
                if cfg.get("padding") != "valid":
                    raise UnsupportedLayerError(
                        f"layer {name}: only valid padding is supported")
                if _pair(cfg.get("dilation_rate", 1)) != (1, 1):
                    raise UnsupportedLayerError(f"layer {name}: dilation unsupported")
                w = _layer_weights(weight_root[name])
                kernel, bias = w["kernel"], w.get("bias")
                if bias is None:
                    bias = np.zeros(kernel.shape[-1], dtype=kernel.dtype)
                kh, kw, cin, cout = kernel.shape
                sh, sw = _pair(cfg.get("strides", 1))
                h, wd, c = shape
                out = ((h - kh) // sh + 1, (wd - kw) // sw + 1, cout)
                layers.append(LayerIR("conv2d", shape, out, activation,
                                      kernel, bias, stride=(sh, sw)))
                shape = out
            elif cls == "MaxPooling2D":
                ph, pw = _pair(cfg.get("pool_size", 2))
                sh, sw = _pair(cfg.get("strides") or (ph, pw))
                h, wd, c = shape
                out = ((h - ph) // sh + 1, (wd - pw) // sw + 1, c)
                layers.append(LayerIR("maxpool2d", shape, out,
                                      pool=(ph, pw), stride=(sh, sw)))
                shape = out
            elif cls == "Flatten":
                out = (int(np.prod(shape)),)
                layers.append(LayerIR("flatten", shape, out))
                shape = out
            elif cls == "Dense":
                w = _layer_weights(weight_root[name])
                kernel, bias = w["kernel"], w.get("bias")
                if bias is None:
                    bias = np.zeros(kernel.shape[-1], dtype=kernel.dtype)
                out = (kernel.shape[1],)
                layers.append(LayerIR("dense", shape, out, activation,
                                      kernel.T, bias))
                shape = out
            elif cls in ("Dropout",):
                continue  # inference no-op
            else:
                raise UnsupportedLayerError(
                    f"layer {name}: unsupported layer {cls}")
        if input_shape is None or not layers:
            raise UnsupportedLayerError("checkpoint has no convertible layers")
        return layers, input_shape
