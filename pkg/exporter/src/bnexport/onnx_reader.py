"""Read sequential ONNX checkpoints into the portable layer IR.

This environment offers no ONNX runtime, so the module decodes the
protobuf wire format directly for the small message subset a sequential
conv/maxpool/flatten/dense graph uses.  ONNX activations are NCHW;
conversion to the portable channels-last layout transposes convolution
kernels and permutes the columns of the first dense layer after a
flatten.
"""

from __future__ import annotations

import struct

import numpy as np

from .ir import LayerIR, UnsupportedLayerError


class OnnxFormatError(ValueError):
    """Undecodable or structurally unexpected ONNX payload."""


# --- protobuf wire-format primitives -----------------------------------------

def _read_varint(buf: bytes, pos: int):
    out = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise OnnxFormatError("truncated varint")
        b = buf[pos]
        pos += 1
        out |= (b & 0x7F) << shift
        if not b & 0x80:
            return out, pos
        shift += 7
        if shift > 70:
            raise OnnxFormatError("varint too long")


def _fields(buf: bytes):
    """Yield (field number, wire type, payload) triples of one message."""
    pos = 0
    while pos < len(buf):
        key, pos = _read_varint(buf, pos)
        field, wire = key >> 3, key & 0x7
        if wire == 0:
            value, pos = _read_varint(buf, pos)
        elif wire == 1:
            value, pos = buf[pos:pos + 8], pos + 8
        elif wire == 2:
            size, pos = _read_varint(buf, pos)
            value, pos = buf[pos:pos + size], pos + size
            if len(value) != size:
                raise OnnxFormatError("truncated length-delimited field")
        elif wire == 5:
            value, pos = buf[pos:pos + 4], pos + 4
        else:
            raise OnnxFormatError(f"unsupported wire type {wire}")
        yield field, wire, value


def _packed_varints(payload) -> list[int]:
    if isinstance(payload, int):
        return [payload]
    out = []
    pos = 0
    while pos < len(payload):
        v, pos = _read_varint(payload, pos)
        out.append(v)
    return out


def _signed(v: int) -> int:
    return v - (1 << 64) if v >= (1 << 63) else v


# --- message decoding ---------------------------------------------------------

_FLOAT = 1
_INT64 = 7
_DOUBLE = 11


def _tensor(buf: bytes):
    dims, data_type, name = [], None, ""
    raw = None
    float_data, int64_data, double_data = [], [], []
    for field, wire, value in _fields(buf):
        if field == 1:
            dims += [_signed(v) for v in _packed_varints(value)]
        elif field == 2:
            data_type = value
        elif field == 4:
            if wire == 5:
                float_data.append(struct.unpack("<f", value)[0])
            else:
                float_data += list(np.frombuffer(value, dtype="<f4"))
        elif field == 7:
            int64_data += [_signed(v) for v in _packed_varints(value)]
        elif field == 8:
            name = value.decode("utf-8")
        elif field == 9:
            raw = value
        elif field == 10:
            if wire == 1:
                double_data.append(struct.unpack("<d", value)[0])
            else:
                double_data += list(np.frombuffer(value, dtype="<f8"))
    if data_type == _FLOAT:
        a = (np.frombuffer(raw, dtype="<f4") if raw is not None
             else np.array(float_data, dtype=np.float32))
    elif data_type == _DOUBLE:
        a = (np.frombuffer(raw, dtype="<f8") if raw is not None
             else np.array(double_data, dtype=np.float64))
    elif data_type == _INT64:
        a = (np.frombuffer(raw, dtype="<i8") if raw is not None
             else np.array(int64_data, dtype=np.int64))
    else:
        raise OnnxFormatError(f"tensor {name!r}: unsupported data type {data_type}")
    return name, a.reshape(dims).copy()


def _attribute(buf: bytes):
    name, value = "", None
    ints = []
    for field, wire, payload in _fields(buf):
        if field == 1:
            name = payload.decode("utf-8")
        elif field == 2:
            value = struct.unpack("<f", payload)[0]
        elif field == 3:
            value = _signed(payload)
        elif field == 4:
            value = payload
        elif field == 8:
            ints += [_signed(v) for v in _packed_varints(payload)]
    return name, ints if ints else value


def _node(buf: bytes):
    inputs, outputs, op_type, attrs = [], [], "", {}
    for field, wire, value in _fields(buf):
        if field == 1:
            inputs.append(value.decode("utf-8"))
        elif field == 2:
            outputs.append(value.decode("utf-8"))
        elif field == 4:
            op_type = value.decode("utf-8")
        elif field == 5:
            k, v = _attribute(value)
            attrs[k] = v
    return {"op": op_type, "inputs": inputs, "outputs": outputs, "attrs": attrs}


def _value_info_shape(buf: bytes):
    name, dims = "", []
    for field, _, value in _fields(buf):
        if field == 1:
            name = value.decode("utf-8")
        elif field == 2:  # TypeProto
            for f2, _, v2 in _fields(value):
                if f2 != 1:  # tensor_type
                    continue
                for f3, _, v3 in _fields(v2):
                    if f3 != 2:  # shape
                        continue
                    for f4, _, v4 in _fields(v3):
                        if f4 != 1:  # dim
                            continue
                        dim_value = 0
                        for f5, _, v5 in _fields(v4):
                            if f5 == 1:
                                dim_value = _signed(v5)
                        dims.append(dim_value)
    return name, dims


def _graph(buf: bytes):
    nodes, initializers, inputs, outputs = [], {}, [], []
    for field, _, value in _fields(buf):
        if field == 1:
            nodes.append(_node(value))
        elif field == 5:
            name, tensor = _tensor(value)
            initializers[name] = tensor
        elif field == 11:
            inputs.append(_value_info_shape(value))
        elif field == 12:
            outputs.append(_value_info_shape(value))
    return nodes, initializers, inputs, outputs


def parse_model(raw: bytes):
    """(nodes, initializers, graph inputs) of a serialized ModelProto."""
    graph = None
    for field, _, value in _fields(raw):
        if field == 7:
            graph = value
    if graph is None:
        raise OnnxFormatError("payload carries no graph")
    return _graph(graph)


# --- conversion to the portable IR --------------------------------------------

def _pair_attr(attrs, key, default):
    v = attrs.get(key)
    if v is None:
        return default
    return int(v[0]), int(v[1])


def _flatten_permutation(c, h, w) -> np.ndarray:
    """For each channels-last flat index, the NCHW flat index it reads."""
    perm = np.empty(c * h * w, dtype=np.int64)
    for hh in range(h):
        for ww in range(w):
            for cc in range(c):
                perm[hh * (w * c) + ww * c + cc] = cc * (h * w) + hh * w + ww
    return perm


def read_onnx(path):
    """(layers, input_shape) with activations converted to channels-last."""
    with open(path, "rb") as f:
        raw = f.read()
    nodes, init, inputs, _ = parse_model(raw)
    graph_inputs = [(n, dims) for n, dims in inputs if n not in init]
    if len(graph_inputs) != 1:
        raise OnnxFormatError(f"expected one graph input, got {len(graph_inputs)}")
    dims = graph_inputs[0][1]
    if len(dims) == 4:  # NCHW
        _, c, h, w = dims
        shape = (int(h), int(w), int(c))  # channels-last equivalent
    elif len(dims) == 2:
        shape = (int(dims[1]),)
    else:
        raise OnnxFormatError(f"unsupported input rank {len(dims)}")
    input_shape = shape

    layers: list[LayerIR] = []
    perm = None  # pending column permutation after a flatten of NCHW data

    def out_shape_conv(kh, kw, cout, sh, sw):
        hh, ww, _ = shape
        return ((hh - kh) // sh + 1, (ww - kw) // sw + 1, cout)

    pending_matmul = None
    for node in nodes:
        op = node["op"]
        attrs = node["attrs"]
        if pending_matmul is not None and op != "Add":
            raise UnsupportedLayerError("MatMul without a following Add")
        if op == "Conv":
            W = init[node["inputs"][1]]
            b = (init[node["inputs"][2]] if len(node["inputs"]) > 2
                 else np.zeros(W.shape[0], dtype=W.dtype))
            pads = attrs.get("pads", [0, 0, 0, 0])
            if any(int(p) != 0 for p in pads):
                raise UnsupportedLayerError("only valid (zero) padding is supported")
            if int(attrs.get("group", 1)) != 1:
                raise UnsupportedLayerError("grouped convolutions are unsupported")
            sh, sw = _pair_attr(attrs, "strides", (1, 1))
            kernel = np.transpose(W, (2, 3, 1, 0))  # -> (kh, kw, cin, cout)
            out = out_shape_conv(kernel.shape[0], kernel.shape[1],
                                 kernel.shape[3], sh, sw)
            layers.append(LayerIR("conv2d", shape, out, "none", kernel, b,
                                  stride=(sh, sw)))
            shape = out
        elif op == "MaxPool":
            ph, pw = _pair_attr(attrs, "kernel_shape", (2, 2))
            sh, sw = _pair_attr(attrs, "strides", (ph, pw))
            pads = attrs.get("pads", [0, 0, 0, 0])
            if any(int(p) != 0 for p in pads):
                raise UnsupportedLayerError("padded pooling is unsupported")
            hh, ww, cc = shape
            out = ((hh - ph) // sh + 1, (ww - pw) // sw + 1, cc)
            layers.append(LayerIR("maxpool2d", shape, out, pool=(ph, pw),
                                  stride=(sh, sw)))
            shape = out
        elif op in ("Flatten", "Reshape"):
            if len(shape) == 1:
                continue  # already flat
            hh, ww, cc = shape
            perm = _flatten_permutation(cc, hh, ww)
            out = (hh * ww * cc,)
            layers.append(LayerIR("flatten", shape, out))
            shape = out
        elif op == "Relu":
            if not layers or layers[-1].kind not in ("dense", "conv2d"):
                raise UnsupportedLayerError("standalone Relu is unsupported")
            layers[-1].activation = "relu"
        elif op == "Softmax":
            if not layers or layers[-1].kind != "dense":
                raise UnsupportedLayerError("Softmax must follow a dense layer")
            layers[-1].activation = "softmax"
        elif op == "Gemm":
            if attrs.get("alpha", 1.0) not in (None, 1.0) or \
               attrs.get("beta", 1.0) not in (None, 1.0):
                raise UnsupportedLayerError("Gemm with scaling is unsupported")
            W = init[node["inputs"][1]]
            b = (init[node["inputs"][2]] if len(node["inputs"]) > 2
                 else np.zeros(W.shape[0], dtype=W.dtype))
            if int(attrs.get("transB", 0)) == 1:
                kernel = np.array(W)  # (out, in) already
            else:
                kernel = np.array(W.T)
            kernel, perm = _apply_perm(kernel, perm)
            layers.append(LayerIR("dense", shape, (kernel.shape[0],), "none",
                                  kernel, b))
            shape = (kernel.shape[0],)
        elif op == "MatMul":
            W = init[node["inputs"][1]]
            pending_matmul = np.array(W.T)  # (out, in)
        elif op == "Add" and pending_matmul is not None:
            b = init[node["inputs"][1]] if node["inputs"][1] in init \
                else init[node["inputs"][0]]
            kernel, perm = _apply_perm(pending_matmul, perm)
            layers.append(LayerIR("dense", shape, (kernel.shape[0],), "none",
                                  kernel, np.asarray(b).ravel()))
            shape = (kernel.shape[0],)
            pending_matmul = None
        elif op in ("Identity", "Dropout", "Cast"):
            continue
        else:
            raise UnsupportedLayerError(f"unsupported ONNX operator {op!r}")
    if not layers:
        raise UnsupportedLayerError("graph has no convertible layers")
    return layers, input_shape


def _apply_perm(kernel, perm):
    """Reorder dense input columns from NCHW-flat to channels-last-flat."""
    if perm is not None:
        kernel = kernel[:, perm]
    return kernel, None
