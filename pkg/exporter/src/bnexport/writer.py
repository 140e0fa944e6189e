"""Emit the portable .bnm/.bnd containers.

Standalone implementation of the documented container layout: a UTF-8
header terminated by an ``end`` line, then little-endian IEEE-754 blocks
at header-declared byte offsets.  Writers are byte-deterministic for
identical inputs and write atomically (temp + rename).
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from .ir import LayerIR

_DTYPES = {"float32": "<f4", "float64": "<f8"}


def write_atomic(path, data: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def model_bytes(layers: list[LayerIR], input_shape, input_domain=(0.0, 1.0),
                label_count: int = 10, dtype: str = "float32") -> bytes:
    np_dtype = np.dtype(_DTYPES[dtype])
    lines = ["BNMODEL 1",
             f"dtype={dtype}",
             "input_shape=" + ",".join(str(s) for s in input_shape),
             f"input_domain={input_domain[0]!r},{input_domain[1]!r}",
             f"label_count={label_count}",
             f"layer_count={len(layers)}"]
    blocks = []
    offset = 0

    def block(a) -> str:
        nonlocal offset
        a = np.ascontiguousarray(a, dtype=np_dtype)
        blocks.append(a.tobytes())
        spec = f"{offset}:{a.size}"
        offset += a.nbytes
        return spec

    for layer in layers:
        parts = [f"layer={layer.kind}",
                 f"activation={layer.activation}",
                 "input=" + ",".join(str(s) for s in layer.input_shape),
                 "output=" + ",".join(str(s) for s in layer.output_shape)]
        if layer.kind == "conv2d":
            parts.append("kernel=" + ",".join(str(s) for s in layer.weights.shape))
            parts.append(f"stride={layer.stride[0]},{layer.stride[1]}")
        if layer.kind == "maxpool2d":
            parts.append(f"pool={layer.pool[0]},{layer.pool[1]}")
            parts.append(f"stride={layer.stride[0]},{layer.stride[1]}")
        if layer.weights is not None:
            parts.append("weights=" + block(layer.weights))
            parts.append("bias=" + block(layer.bias))
        lines.append(" ".join(parts))
    return ("\n".join(lines) + "\nend\n").encode("utf-8") + b"".join(blocks)


def dataset_bytes(inputs: np.ndarray, labels=None, dtype: str = "float64") -> bytes:
    np_dtype = np.dtype(_DTYPES[dtype])
    n = len(inputs)
    shape = inputs.shape[1:]
    lines = ["BNDATA 1",
             f"dtype={dtype}",
             f"count={n}",
             "shape=" + ",".join(str(s) for s in shape),
             f"labels={1 if labels is not None else 0}",
             "end",
             ""]
    payload = np.ascontiguousarray(inputs, dtype=np_dtype).tobytes()
    if labels is not None:
        labels = np.asarray(labels)
        if labels.size and (labels.min() < 0 or labels.max() > 255):
            raise ValueError("labels must fit in one unsigned byte")
        payload += labels.astype("<u1").tobytes()
    return "\n".join(lines).encode("utf-8") + payload
