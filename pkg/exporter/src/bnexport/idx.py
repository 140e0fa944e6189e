"""IDX container codec (the MNIST distribution format).

Layout: two zero bytes, a dtype code, a dimension-count byte, then one
big-endian uint32 per dimension, then the raw data in C order.
"""

from __future__ import annotations

import gzip
import struct

import numpy as np

_DTYPE_CODES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_CODE_FOR = {v: k for k, v in _DTYPE_CODES.items()}


class IdxFormatError(ValueError):
    """Magic-number or size mismatch in an IDX file."""


def _open(path):
    return gzip.open(path, "rb") if str(path).endswith(".gz") else open(path, "rb")


def read_idx(path) -> np.ndarray:
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise IdxFormatError("file too short for an IDX header")
    zero, code, ndim = raw[0] << 8 | raw[1], raw[2], raw[3]
    if zero != 0:
        raise IdxFormatError(f"bad IDX magic: first two bytes {raw[:2].hex()}")
    if code not in _DTYPE_CODES:
        raise IdxFormatError(f"unknown IDX dtype code 0x{code:02x}")
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise IdxFormatError("truncated IDX dimension table")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    dtype = _DTYPE_CODES[code]
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - header_len != expected:
        raise IdxFormatError(
            f"IDX payload is {len(raw) - header_len} bytes, expected {expected}")
    return np.frombuffer(raw, dtype=dtype, offset=header_len).reshape(dims).copy()


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    be = array.dtype.newbyteorder(">")
    if be not in _CODE_FOR:
        raise IdxFormatError(f"dtype {array.dtype} has no IDX code")
    header = bytes([0, 0, _CODE_FOR[be], array.ndim])
    header += struct.pack(f">{array.ndim}I", *array.shape)
    with open(path, "wb") as f:
        f.write(header + np.ascontiguousarray(array, dtype=be).tobytes())


def load_mnist_pair(images_path, labels_path):
    """(images scaled to [0,1] with shape (n, 28, 28, 1), labels)."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise IdxFormatError(f"image file has rank {images.ndim}, expected 3")
    if labels.ndim != 1 or len(labels) != len(images):
        raise IdxFormatError("label file does not match the image count")
    scaled = images.astype(np.float64) / 255.0
    return scaled[..., None], labels.astype(np.int64)
