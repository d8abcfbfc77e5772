"""TensorBundle: a single-file container for named tensors plus metadata.

Byte layout (all integers little-endian):

    offset 0   magic "ITB1" (4 bytes)
    offset 4   header length H (uint32)
    offset 8   header: UTF-8 JSON, H bytes
    offset 8+H payload: raw row-major tensor bytes, little-endian
    trailing   CRC32 of the payload (uint32)

The header object carries::

    {
      "format_version": 1,
      "dtype": "<default dtype>",
      "tensors": [
        {"name": ..., "shape": [...], "dtype": ..., "offset": ..., "length": ...},
        ...
      ],
      "metadata": {...}
    }

Offsets are 0-based into the payload and ascending; descriptors are sorted
by name so identical content yields identical bytes. Supported dtypes:
float32, float64, int32, int64. Readers distinguish four failure modes:
wrong magic and unsupported version are schema errors (this is not a file
we speak), truncation and CRC mismatch are corrupt-data errors.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import CorruptBundleError, SchemaError

__all__ = ["MAGIC", "TensorBundle", "write_bundle", "read_bundle"]

MAGIC = b"ITB1"
FORMAT_VERSION = 1

_DTYPES = {
    "float32": np.dtype("<f4"),
    "float64": np.dtype("<f8"),
    "int32": np.dtype("<i4"),
    "int64": np.dtype("<i8"),
}
_DTYPE_NAMES = {np.dtype(k): name for name, k in
                (("float32", np.float32), ("float64", np.float64),
                 ("int32", np.int32), ("int64", np.int64))}


@dataclass
class TensorBundle:
    """In-memory view of a bundle: named arrays plus the metadata object."""

    tensors: dict[str, np.ndarray]
    metadata: dict
    default_dtype: str = "float32"


def _dtype_name(arr: np.ndarray) -> str:
    key = np.dtype(arr.dtype).newbyteorder("=")  # any byte order of a supported kind
    if key not in _DTYPE_NAMES:
        raise SchemaError(f"unsupported tensor dtype {arr.dtype}")
    return _DTYPE_NAMES[key]


def write_bundle(
    path,
    tensors: Mapping[str, np.ndarray],
    metadata: Mapping | None = None,
    *,
    default_dtype: str | None = None,
) -> None:
    """Serialize tensors and metadata; an empty tensor map is valid."""
    named = {}
    for name, arr in tensors.items():
        if not isinstance(name, str) or not name:
            raise SchemaError(f"tensor names must be non-empty strings, got {name!r}")
        arr = np.asarray(arr)
        named[name] = arr
    if len(named) != len(tensors):
        raise SchemaError("duplicate tensor names")

    if default_dtype is None:
        default_dtype = (
            _dtype_name(next(iter(named.values()))) if named else "float32"
        )
    if default_dtype not in _DTYPES:
        raise SchemaError(f"unsupported default dtype {default_dtype!r}")

    descriptors = []
    chunks = []
    offset = 0
    for name in sorted(named):
        arr = named[name]
        dtype_name = _dtype_name(arr)
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[dtype_name]).tobytes()
        desc = {
            "name": name,
            "shape": list(arr.shape),
            "offset": offset,
            "length": len(raw),
        }
        if dtype_name != default_dtype:
            desc["dtype"] = dtype_name
        descriptors.append(desc)
        chunks.append(raw)
        offset += len(raw)

    header = {
        "format_version": FORMAT_VERSION,
        "dtype": default_dtype,
        "tensors": descriptors,
        "metadata": dict(metadata or {}),
    }
    header_bytes = json.dumps(
        header, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    payload = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header_bytes).to_bytes(4, "little"))
        fh.write(header_bytes)
        fh.write(payload)
        fh.write(zlib.crc32(payload).to_bytes(4, "little"))


def read_bundle(path) -> TensorBundle:
    """Parse and verify a bundle file; see the module docstring for errors."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8:
        raise CorruptBundleError(f"{path}: truncated before the header length")
    if blob[:4] != MAGIC:
        raise SchemaError(
            f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}"
        )
    header_len = int.from_bytes(blob[4:8], "little")
    if len(blob) < 8 + header_len + 4:
        raise CorruptBundleError(f"{path}: truncated inside header or payload")
    try:
        header = json.loads(blob[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{path}: unreadable header ({exc})") from exc
    if not isinstance(header, dict):
        raise SchemaError(f"{path}: header must be a JSON object")
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported format version {version!r}")
    default_dtype = header.get("dtype", "float32")
    if default_dtype not in _DTYPES:
        raise SchemaError(f"{path}: unsupported default dtype {default_dtype!r}")

    payload = blob[8 + header_len : -4]
    stored_crc = int.from_bytes(blob[-4:], "little")
    actual_crc = zlib.crc32(payload)
    if stored_crc != actual_crc:
        raise CorruptBundleError(
            f"{path}: payload CRC mismatch "
            f"(stored {stored_crc:#010x}, computed {actual_crc:#010x})"
        )

    descriptors = header.get("tensors", [])
    if not isinstance(descriptors, list):
        raise SchemaError(f"{path}: 'tensors' must be a list")
    tensors: dict[str, np.ndarray] = {}
    for desc in descriptors:
        try:
            name = desc["name"]
            shape = tuple(int(s) for s in desc["shape"])
            offset = int(desc["offset"])
            length = int(desc["length"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"{path}: malformed tensor descriptor {desc!r}") from exc
        if name in tensors:
            raise SchemaError(f"{path}: duplicate tensor name {name!r}")
        dtype_name = desc.get("dtype", default_dtype)
        if dtype_name not in _DTYPES:
            raise SchemaError(f"{path}: unsupported dtype {dtype_name!r} for {name!r}")
        dtype = _DTYPES[dtype_name]
        count = 1
        for s in shape:
            if s < 0:
                raise SchemaError(f"{path}: negative dimension in {name!r}")
            count *= s
        if length != count * dtype.itemsize:
            raise SchemaError(
                f"{path}: tensor {name!r} length {length} != "
                f"shape {shape} x {dtype_name}"
            )
        if offset < 0 or offset + length > len(payload):
            raise CorruptBundleError(
                f"{path}: tensor {name!r} extends past the payload"
            )
        arr = np.frombuffer(
            payload, dtype=dtype, count=count, offset=offset
        ).reshape(shape).copy()
        tensors[name] = arr

    metadata = header.get("metadata", {})
    if not isinstance(metadata, dict):
        raise SchemaError(f"{path}: metadata must be a JSON object")
    return TensorBundle(
        tensors=tensors, metadata=metadata, default_dtype=default_dtype
    )
