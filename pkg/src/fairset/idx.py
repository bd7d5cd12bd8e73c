"""Bit-exact reader/writer for the IDX binary format used by MNIST and Fashion-MNIST.

Layout: bytes 0-1 are zero, byte 2 is the element type code (only 0x08,
unsigned 8-bit, is supported), byte 3 is the number of dimensions, followed
by that many big-endian u32 dimension sizes, then row-major element data.
Gzip payloads are detected by their leading two bytes and handled
transparently on read; writing compresses only on request.
"""

from __future__ import annotations

import gzip
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CapacityError,
    DecompressionError,
    LabelRangeError,
    LengthMismatchError,
    MalformedMagicError,
    PairingError,
    ShapeError,
    UnsupportedTypeError,
)

UBYTE_TYPE_CODE = 0x08
GZIP_MAGIC = b"\x1f\x8b"
MAX_DIMS = 4
# Dim products beyond this cannot be addressed as a flat buffer on any
# platform we target; serialize refuses rather than producing a bad header.
MAX_ELEMENTS = 2**63 - 1


@dataclass(frozen=True)
class IdxTensor:
    """A parsed IDX payload: type code, dimension sizes, flat row-major bytes."""

    elem_type: int
    dims: tuple[int, ...]
    data: bytes

    def validate(self) -> None:
        if self.elem_type != UBYTE_TYPE_CODE:
            raise UnsupportedTypeError(f"unsupported element type code 0x{self.elem_type:02x}")
        if not 1 <= len(self.dims) <= MAX_DIMS:
            raise MalformedMagicError(f"dimension count {len(self.dims)} outside 1..{MAX_DIMS}")
        for d in self.dims:
            if not 0 <= d <= 0xFFFFFFFF:
                raise CapacityError(f"dimension {d} does not fit in u32")
        n = self.num_elements()
        if n > MAX_ELEMENTS:
            raise CapacityError(f"dim product {n} exceeds addressable length")
        if len(self.data) != n:
            raise LengthMismatchError(
                f"data length {len(self.data)} != dim product {n}"
            )

    def num_elements(self) -> int:
        n = 1
        for d in self.dims:
            n *= d
        return n

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self.data, dtype=np.uint8).reshape(self.dims)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "IdxTensor":
        if arr.dtype != np.uint8:
            raise UnsupportedTypeError(f"only uint8 arrays map to IDX ubyte, got {arr.dtype}")
        return cls(UBYTE_TYPE_CODE, tuple(int(d) for d in arr.shape), arr.tobytes())


def parse_idx(buf: bytes) -> IdxTensor:
    """Decode a complete IDX payload (optionally gzip-compressed) into a tensor."""
    if buf[:2] == GZIP_MAGIC:
        try:
            buf = gzip.decompress(buf)
        except (OSError, EOFError, zlib.error) as e:
            raise DecompressionError(f"corrupt gzip stream: {e}") from e
    if len(buf) < 4:
        raise MalformedMagicError(f"payload too short for magic: {len(buf)} bytes")
    if buf[0] != 0 or buf[1] != 0:
        raise MalformedMagicError(f"nonzero leading bytes {buf[0]:02x} {buf[1]:02x}")
    elem_type = buf[2]
    if elem_type != UBYTE_TYPE_CODE:
        raise UnsupportedTypeError(f"unsupported element type code 0x{elem_type:02x}")
    ndims = buf[3]
    if not 1 <= ndims <= MAX_DIMS:
        raise MalformedMagicError(f"dimension count {ndims} outside 1..{MAX_DIMS}")
    header_len = 4 + 4 * ndims
    if len(buf) < header_len:
        raise LengthMismatchError(f"payload truncated inside dims ({len(buf)} bytes)")
    dims = struct.unpack(f">{ndims}I", buf[4:header_len])
    tensor = IdxTensor(elem_type, dims, buf[header_len:])
    n = tensor.num_elements()
    if len(tensor.data) != n:
        raise LengthMismatchError(
            f"declared {n} elements but payload carries {len(tensor.data)} bytes"
        )
    return tensor


def serialize_idx(tensor: IdxTensor, compress: bool = False) -> bytes:
    """Encode a tensor to the exact IDX layout; gzip the stream when asked."""
    tensor.validate()
    header = struct.pack(
        f">BBBB{len(tensor.dims)}I", 0, 0, tensor.elem_type, len(tensor.dims), *tensor.dims
    )
    raw = header + tensor.data
    if compress:
        # mtime pinned so identical tensors serialize to identical bytes
        return gzip.compress(raw, compresslevel=9, mtime=0)
    return raw


@dataclass
class ImageSet:
    """N labeled 28x28 grayscale images, the unit everything downstream consumes."""

    images: np.ndarray  # (N, 28, 28) uint8
    labels: np.ndarray  # (N,) uint8

    @property
    def n(self) -> int:
        return int(self.images.shape[0])

    def subset(self, indices) -> "ImageSet":
        idx = np.asarray(indices)
        return ImageSet(self.images[idx], self.labels[idx])


def image_set_from_tensors(images: IdxTensor, labels: IdxTensor) -> ImageSet:
    """Pair an images tensor with a labels tensor, enforcing MNIST-family shape."""
    if len(images.dims) != 3:
        raise ShapeError(f"images file must have 3 dims, got {len(images.dims)}")
    if len(labels.dims) != 1:
        raise ShapeError(f"labels file must have 1 dim, got {len(labels.dims)}")
    if images.dims[1:] != (28, 28):
        raise ShapeError(f"images must be 28x28, got {images.dims[1]}x{images.dims[2]}")
    if images.dims[0] != labels.dims[0]:
        raise PairingError(
            f"images carry {images.dims[0]} items but labels carry {labels.dims[0]}"
        )
    label_arr = labels.to_array()
    if label_arr.size and label_arr.max() > 9:
        raise LabelRangeError(f"label {int(label_arr.max())} outside 0..9")
    return ImageSet(images.to_array(), label_arr)


def load_image_set(images_path, labels_path) -> ImageSet:
    """Load a paired images/labels IDX file duo into an ImageSet."""
    images = parse_idx(Path(images_path).read_bytes())
    labels = parse_idx(Path(labels_path).read_bytes())
    return image_set_from_tensors(images, labels)
