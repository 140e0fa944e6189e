"""Portable binary containers.

All containers share one layout: a UTF-8 text header terminated by a
line reading ``end``, followed by raw little-endian IEEE-754 blocks at
the byte offsets the header declares (offsets are relative to the first
byte after the header).  Headers start with a magic word and a format
version integer.  Writers are deterministic and atomic (temp + rename).
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

import numpy as np

from .model import Dataset, LayerSpec, Model, ModelError

MODEL_MAGIC = "BNMODEL"
DATA_MAGIC = "BNDATA"
VERSION = 1

_DTYPES = {"float32": "<f4", "float64": "<f8"}


class FormatError(ValueError):
    """Malformed or unsupported container content."""


def write_atomic(path, data: bytes) -> None:
    """Write bytes to path via a temp file in the same directory + rename."""
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


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _split_container(raw: bytes, magic: str):
    """Return (header lines, binary blob) after checking magic/version."""
    end = raw.find(b"\nend\n")
    if end < 0:
        raise FormatError(f"malformed header: no 'end' line ({magic})")
    lines = raw[:end].decode("utf-8").splitlines()
    blob = raw[end + len(b"\nend\n"):]
    if not lines:
        raise FormatError("empty header")
    head = lines[0].split()
    if len(head) != 2 or head[0] != magic:
        raise FormatError(f"bad magic line {lines[0]!r}, expected {magic!r}")
    if int(head[1]) != VERSION:
        raise FormatError(f"unsupported {magic} version {head[1]}")
    return lines[1:], blob


def _kv(line: str) -> dict:
    out = {}
    for tok in line.split():
        if "=" not in tok:
            continue
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(t) for t in s.split(",") if t)


def _read_block(blob: bytes, offset: int, count: int, dtype: str) -> np.ndarray:
    itemsize = np.dtype(dtype).itemsize
    if offset + count * itemsize > len(blob):
        raise FormatError(f"block at {offset} (count {count}) exceeds payload size")
    return np.frombuffer(blob, dtype=dtype, count=count, offset=offset).astype(np.float64)


# --- model container (.bnm) ------------------------------------------------

def save_model(model: Model, path, dtype: str = "float64") -> None:
    if dtype not in _DTYPES:
        raise FormatError(f"unsupported dtype {dtype!r}")
    np_dtype = np.dtype(_DTYPES[dtype])
    lines = [f"{MODEL_MAGIC} {VERSION}"]
    lines.append(f"dtype={dtype}")
    lines.append("input_shape=" + ",".join(str(s) for s in model.input_shape))
    lo, hi = model.input_domain
    lines.append(f"input_domain={lo!r},{hi!r}")
    lines.append(f"label_count={model.label_count}")
    lines.append(f"layer_count={len(model.layers)}")

    blocks = []
    offset = 0

    def block(a: np.ndarray) -> str:
        nonlocal offset
        a = np.ascontiguousarray(a, dtype=np_dtype)
        blocks.append(a.tobytes())
        spec = f"{offset}:{a.size}"
        offset += a.size * np_dtype.itemsize
        return spec

    for layer in model.layers:
        parts = [
            f"layer={layer.kind}",
            f"activation={layer.activation}",
            "input=" + ",".join(str(s) for s in layer.input_shape),
            "output=" + ",".join(str(s) for s in layer.output_shape),
        ]
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

    data = ("\n".join(lines) + "\nend\n").encode("utf-8") + b"".join(blocks)
    write_atomic(path, data)


def load_model(path) -> Model:
    """Read a model container, validating the declared shape chain."""
    with open(path, "rb") as f:
        raw = f.read()
    lines, blob = _split_container(raw, MODEL_MAGIC)
    meta = {}
    layer_lines = []
    for line in lines:
        if line.startswith("layer="):
            layer_lines.append(line)
        else:
            meta.update(_kv(line))
    try:
        dtype = _DTYPES[meta["dtype"]]
        input_shape = _ints(meta["input_shape"])
        lo, hi = (float(t) for t in meta["input_domain"].split(","))
        label_count = int(meta["label_count"])
        layer_count = int(meta["layer_count"])
    except (KeyError, ValueError) as e:
        raise FormatError(f"malformed model header: {e}") from e
    if layer_count != len(layer_lines):
        raise FormatError(
            f"header declares {layer_count} layers, found {len(layer_lines)}"
        )

    layers = []
    prev_shape = input_shape
    for i, line in enumerate(layer_lines):
        kv = _kv(line)
        kind = kv["layer"]
        try:
            inp = _ints(kv["input"])
            out = _ints(kv["output"])
            activation = kv["activation"]
            weights = bias = None
            pool = None
            stride = (1, 1)
            if "stride" in kv:
                stride = _ints(kv["stride"])
            if "pool" in kv:
                pool = _ints(kv["pool"])
            if "weights" in kv:
                woff, wcount = (int(t) for t in kv["weights"].split(":"))
                boff, bcount = (int(t) for t in kv["bias"].split(":"))
                weights = _read_block(blob, woff, wcount, dtype)
                bias = _read_block(blob, boff, bcount, dtype)
                if kind == "conv2d":
                    weights = weights.reshape(_ints(kv["kernel"]))
                else:
                    weights = weights.reshape(int(np.prod(out)), int(np.prod(inp)))
        except (KeyError, ValueError) as e:
            raise FormatError(f"layer {i}: malformed entry: {e}") from e
        if kind not in ("dense", "conv2d", "maxpool2d", "flatten"):
            raise FormatError(f"layer {i}: unsupported layer kind {kind!r}")
        if inp != prev_shape:
            raise FormatError(
                f"layer {i}: input shape {inp} does not chain with previous {prev_shape}"
            )
        layers.append(
            LayerSpec(kind=kind, input_shape=inp, output_shape=out,
                      activation=activation, weights=weights, bias=bias,
                      pool=pool, stride=stride)
        )
        prev_shape = out

    try:
        return Model(
            layers=tuple(layers),
            input_domain=(lo, hi),
            label_count=label_count,
            source_digest=hashlib.sha256(raw).hexdigest(),
        )
    except ModelError as e:
        raise FormatError(str(e)) from e


# --- dataset container (.bnd) ----------------------------------------------

def save_dataset(ds: Dataset, path, dtype: str = "float64") -> None:
    if dtype not in _DTYPES:
        raise FormatError(f"unsupported dtype {dtype!r}")
    np_dtype = np.dtype(_DTYPES[dtype])
    n = len(ds.inputs)
    shape = ds.inputs.shape[1:]
    lines = [
        f"{DATA_MAGIC} {VERSION}",
        f"dtype={dtype}",
        f"count={n}",
        "shape=" + ",".join(str(s) for s in shape),
        f"labels={1 if ds.labels is not None else 0}",
        "end",
        "",
    ]
    payload = np.ascontiguousarray(ds.inputs, dtype=np_dtype).tobytes()
    if ds.labels is not None:
        labels = np.asarray(ds.labels)
        if labels.min() < 0 or labels.max() > 255:
            raise FormatError("labels must fit in one unsigned byte")
        payload += labels.astype("<u1").tobytes()
    write_atomic(path, "\n".join(lines).encode("utf-8") + payload)


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        raw = f.read()
    lines, blob = _split_container(raw, DATA_MAGIC)
    meta = {}
    for line in lines:
        meta.update(_kv(line))
    try:
        dtype = _DTYPES[meta["dtype"]]
        n = int(meta["count"])
        shape = _ints(meta["shape"])
        has_labels = bool(int(meta["labels"]))
    except (KeyError, ValueError) as e:
        raise FormatError(f"malformed dataset header: {e}") from e
    per_item = int(np.prod(shape))
    inputs = _read_block(blob, 0, n * per_item, dtype).reshape((n,) + shape)
    labels = None
    if has_labels:
        off = n * per_item * np.dtype(dtype).itemsize
        if off + n > len(blob):
            raise FormatError("label block exceeds payload size")
        labels = np.frombuffer(blob, dtype="<u1", count=n, offset=off).astype(np.int64)
    return Dataset(inputs=inputs, labels=labels)


# --- JSON-headed containers (.bnf, .bna) -------------------------------------
#
# Same container idea, but the metadata is a JSON document: the text part
# is "<MAGIC> <VERSION>\njson=<nbytes>\nend\n", followed by the JSON bytes
# and then the raw little-endian blocks it references.

FEATURE_MAGIC = "BNFEAT"
ABSTRACTION_MAGIC = "BNABST"


class _BlockWriter:
    def __init__(self):
        self.specs = []
        self.chunks = []
        self.offset = 0

    def add(self, a, dtype: str) -> int:
        a = np.ascontiguousarray(a, dtype=dtype)
        self.specs.append({"offset": self.offset, "dtype": dtype,
                           "shape": list(a.shape)})
        self.chunks.append(a.tobytes())
        self.offset += a.nbytes
        return len(self.specs) - 1

    def payload(self) -> bytes:
        return b"".join(self.chunks)


def _write_json_container(path, magic: str, header: dict, blocks: _BlockWriter):
    header = dict(header)
    header["blocks"] = blocks.specs
    doc = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    head = f"{magic} {VERSION}\njson={len(doc)}\nend\n".encode("utf-8")
    write_atomic(path, head + doc + blocks.payload())


def _read_json_container(path, magic: str):
    with open(path, "rb") as f:
        raw = f.read()
    lines, blob = _split_container(raw, magic)
    meta = {}
    for line in lines:
        meta.update(_kv(line))
    try:
        nbytes = int(meta["json"])
    except (KeyError, ValueError) as e:
        raise FormatError(f"malformed {magic} header: {e}") from e
    if nbytes > len(blob):
        raise FormatError("JSON document exceeds payload size")
    try:
        header = json.loads(blob[:nbytes].decode("utf-8"))
    except ValueError as e:
        raise FormatError(f"malformed JSON header: {e}") from e
    payload = blob[nbytes:]

    def block(i):
        spec = header["blocks"][i]
        a = np.frombuffer(payload, dtype=spec["dtype"],
                          count=int(np.prod(spec["shape"], dtype=np.int64)),
                          offset=spec["offset"])
        return a.reshape(spec["shape"]).copy()

    return header, block


def _feature_map_entry(fm, blocks: _BlockWriter) -> dict:
    entry = {
        "layer": fm.layer,
        "technique": fm.technique,
        "seed": fm.seed,
        "W": blocks.add(fm.W, "<f8"),
        "B": blocks.add(fm.B, "<f8"),
        "mean": None if fm.mean is None else blocks.add(fm.mean, "<f8"),
        "scale": None if fm.scale is None else blocks.add(fm.scale, "<f8"),
        "explained_variance": None if fm.explained_variance is None
            else blocks.add(fm.explained_variance, "<f8"),
    }
    return entry


def _feature_map_from_entry(entry: dict, block):
    from .features import FeatureMap
    opt = lambda i: None if i is None else block(i)
    return FeatureMap(layer=int(entry["layer"]), technique=entry["technique"],
                      W=block(entry["W"]), B=block(entry["B"]),
                      mean=opt(entry["mean"]), scale=opt(entry["scale"]),
                      seed=entry["seed"],
                      explained_variance=opt(entry["explained_variance"]))


def save_feature_map(fm, path) -> None:
    blocks = _BlockWriter()
    _write_json_container(path, FEATURE_MAGIC, _feature_map_entry(fm, blocks), blocks)


def load_feature_map(path):
    header, block = _read_json_container(path, FEATURE_MAGIC)
    return _feature_map_from_entry(header, block)


def save_abstraction(bn, path) -> None:
    """Serialise a fitted abstraction: structure, partitions, feature maps,
    raw count tables, and provenance.  Counts stay integers, so reloading
    reproduces every probability bit-exactly."""
    blocks = _BlockWriter()
    header = {
        "analysed_layers": list(bn.structure.analysed_layers),
        "epsilon": bn.epsilon,
        "sample_count": bn.tables.sample_count,
        "provenance": bn.provenance,
        "feature_maps": [_feature_map_entry(fm, blocks) for fm in bn.feature_maps],
        "partitions": [
            [
                {"strategy": p.strategy, "extended": p.extended,
                 "boundaries": blocks.add(np.asarray(p.boundaries), "<f8")}
                for p in per_layer
            ]
            for per_layer in bn.structure.partitions
        ],
        "layer_combo_counts": [blocks.add(c, "<i8")
                               for c in bn.tables.layer_combo_counts],
        "pair_counts": [
            [blocks.add(t, "<i8") for t in per_layer]
            for per_layer in bn.tables.pair_counts
        ],
    }
    _write_json_container(path, ABSTRACTION_MAGIC, header, blocks)


def load_abstraction(path):
    from .bayesnet import BNAbstraction, BNStructure, ProbabilityTables
    from .discretise import Partition

    header, block = _read_json_container(path, ABSTRACTION_MAGIC)
    try:
        layers = tuple(int(x) for x in header["analysed_layers"])
        partitions = tuple(
            tuple(
                Partition(boundaries=tuple(block(p["boundaries"])),
                          strategy=p["strategy"], extended=bool(p["extended"]),
                          layer=layers[pos], component=j)
                for j, p in enumerate(per_layer)
            )
            for pos, per_layer in enumerate(header["partitions"])
        )
        structure = BNStructure(analysed_layers=layers, partitions=partitions)
        tables = ProbabilityTables(
            layer_combo_counts=tuple(block(i) for i in header["layer_combo_counts"]),
            pair_counts=tuple(tuple(block(i) for i in per_layer)
                              for per_layer in header["pair_counts"]),
            sample_count=int(header["sample_count"]),
        )
        feature_maps = tuple(_feature_map_from_entry(e, block)
                             for e in header["feature_maps"])
        return BNAbstraction(structure=structure, tables=tables,
                             feature_maps=feature_maps,
                             provenance=header.get("provenance", {}),
                             epsilon=float(header["epsilon"]))
    except (KeyError, IndexError, TypeError) as e:
        raise FormatError(f"malformed abstraction container: {e}") from e
