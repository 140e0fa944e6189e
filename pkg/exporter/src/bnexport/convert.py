"""Checkpoint and dataset conversion with round-trip verification.

``export_model`` reads a checkpoint (Keras HDF5 or ONNX), writes the
portable model container, and verifies it by comparing the primary
toolkit's forward pass against a reference evaluation of the converted
layers on random inputs.  ``export_dataset`` converts MNIST-style IDX
pairs into the portable dataset container.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import idx
from .ir import LayerIR, UnsupportedLayerError, check_chain
from .keras_h5 import read_keras_h5
from .onnx_reader import read_onnx
from .writer import dataset_bytes, model_bytes, write_atomic

LOGIT_TOLERANCE = 1e-4
VERIFY_SAMPLES = 100


class VerificationError(RuntimeError):
    """Exported model disagrees with the source beyond tolerance."""


@dataclass
class ExportManifest:
    source: str
    out: str
    layer_mapping: list
    dtype: str
    parameter_counts: list
    sha256: str
    max_logit_error: float
    training_metadata: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "source": self.source,
            "out": self.out,
            "layer_mapping": self.layer_mapping,
            "dtype": self.dtype,
            "parameter_counts": self.parameter_counts,
            "sha256": self.sha256,
            "max_logit_error": self.max_logit_error,
            "training_metadata": self.training_metadata,
        }


def read_checkpoint(path):
    """Dispatch on the checkpoint flavour: HDF5 or ONNX."""
    with open(path, "rb") as f:
        head = f.read(8)
    if head.startswith(b"\x89HDF"):
        return read_keras_h5(path)
    return read_onnx(path)


def reference_forward(layers, x: np.ndarray) -> np.ndarray:
    """Straight numpy evaluation of the converted layers (float64)."""
    cur = np.asarray(x, dtype=np.float64)
    for layer in layers:
        if layer.kind == "dense":
            cur = np.asarray(layer.weights, dtype=np.float64) @ cur.ravel() \
                + np.asarray(layer.bias, dtype=np.float64)
        elif layer.kind == "conv2d":
            kh, kw, cin, cout = layer.weights.shape
            sh, sw = layer.stride
            h, w, _ = cur.shape
            oh, ow = (h - kh) // sh + 1, (w - kw) // sw + 1
            out = np.empty((oh, ow, cout))
            k64 = np.asarray(layer.weights, dtype=np.float64)
            for oy in range(oh):
                for ox in range(ow):
                    patch = cur[oy * sh:oy * sh + kh, ox * sw:ox * sw + kw, :]
                    out[oy, ox, :] = np.tensordot(patch, k64, axes=3) \
                        + np.asarray(layer.bias, dtype=np.float64)
            cur = out
        elif layer.kind == "maxpool2d":
            ph, pw = layer.pool
            sh, sw = layer.stride
            h, w, c = cur.shape
            oh, ow = (h - ph) // sh + 1, (w - pw) // sw + 1
            out = np.empty((oh, ow, c))
            for oy in range(oh):
                for ox in range(ow):
                    out[oy, ox, :] = cur[oy * sh:oy * sh + ph,
                                         ox * sw:ox * sw + pw, :].max(axis=(0, 1))
            cur = out
        else:  # flatten
            cur = cur.ravel()
        if layer.activation == "relu":
            cur = np.maximum(cur, 0.0)
        # softmax is monotone; logits compare pre-softmax
    return cur.ravel()


def _verify_against_primary(out_path, layers, input_shape, samples, seed) -> float:
    from bncover import forward, load_model
    model = load_model(out_path)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        x = rng.random(input_shape)
        got = forward(model, x).pre[-1].ravel()
        want = reference_forward(layers, x)
        worst = max(worst, float(np.abs(got - want).max()))
    return worst


def export_model(checkpoint_path, out_path, input_domain=(0.0, 1.0),
                 label_count=None, dtype: str = "float32",
                 training_metadata=None, verify_seed: int = 0) -> ExportManifest:
    """Convert a checkpoint into a .bnm container and verify the result.

    The verification evaluates the written container through the primary
    toolkit and compares its final-layer values against a reference
    evaluation of the converted weights on random inputs.
    """
    layers, input_shape = read_checkpoint(checkpoint_path)
    check_chain(layers, input_shape)
    if label_count is None:
        label_count = int(np.prod(layers[-1].output_shape))
    data = model_bytes(layers, input_shape, input_domain=input_domain,
                       label_count=label_count, dtype=dtype)
    write_atomic(out_path, data)

    worst = _verify_against_primary(out_path, layers, input_shape,
                                    VERIFY_SAMPLES, verify_seed)
    if worst > LOGIT_TOLERANCE:
        raise VerificationError(
            f"primary forward pass deviates by {worst:.3e} (> {LOGIT_TOLERANCE})")
    mapping = [
        {"index": i, "kind": l.kind, "activation": l.activation,
         "output_shape": list(l.output_shape), "parameters": l.parameter_count}
        for i, l in enumerate(layers)
    ]
    return ExportManifest(
        source=str(checkpoint_path), out=str(out_path), layer_mapping=mapping,
        dtype=dtype, parameter_counts=[l.parameter_count for l in layers],
        sha256=hashlib.sha256(data).hexdigest(), max_logit_error=worst,
        training_metadata=dict(training_metadata or {}))


def export_dataset(images_path, labels_path, out_path, limit=None,
                   dtype: str = "float64") -> dict:
    """IDX image/label pair -> .bnd with pixels normalised into [0, 1]."""
    inputs, labels = idx.load_mnist_pair(images_path, labels_path)
    if limit is not None:
        if limit <= 0:
            raise ValueError("empty selection")
        inputs, labels = inputs[:limit], labels[:limit]
    if len(inputs) == 0:
        raise ValueError("empty selection")
    data = dataset_bytes(inputs, labels, dtype=dtype)
    write_atomic(out_path, data)
    return {"out": str(out_path), "count": len(inputs),
            "shape": list(inputs.shape[1:]),
            "sha256": hashlib.sha256(data).hexdigest()}


def export_array_dataset(inputs, labels, out_path, dtype: str = "float64") -> dict:
    """In-memory arrays -> .bnd (fixture regeneration plumbing)."""
    data = dataset_bytes(np.asarray(inputs, dtype=np.float64), labels, dtype=dtype)
    write_atomic(out_path, data)
    return {"out": str(out_path), "count": len(inputs),
            "sha256": hashlib.sha256(data).hexdigest()}


def write_manifest(manifest: ExportManifest, path) -> None:
    write_atomic(path, json.dumps(manifest.as_dict(), indent=2,
                                  sort_keys=True).encode("utf-8"))
