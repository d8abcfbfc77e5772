"""Writer and reader for the tensor-bundle container format.

This is an independent implementation of the on-disk contract the itigen
toolchain consumes; the two packages share no code, only bytes. Layout
(all integers little-endian):

    offset 0   magic "ITB1" (4 bytes)
    offset 4   header length H (uint32)
    offset 8   header: UTF-8 JSON, H bytes
    offset 8+H payload: raw row-major little-endian tensor bytes
    trailing   CRC32 of the payload (uint32)

The header object is ``{"dtype": ..., "format_version": 1, "metadata":
{...}, "tensors": [...]}`` serialized with sorted keys and no spaces.
Tensor descriptors are sorted by name with ascending payload offsets and
omit their "dtype" entry when it equals the file default, so identical
content always yields identical bytes.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ExportDataError, ManifestError

__all__ = ["MAGIC", "LoadedBundle", "write_bundle", "read_bundle"]

MAGIC = b"ITB1"
FORMAT_VERSION = 1

_DTYPES = {
    "float32": np.dtype("<f4"),
    "float64": np.dtype("<f8"),
    "int32": np.dtype("<i4"),
    "int64": np.dtype("<i8"),
}


@dataclass
class LoadedBundle:
    tensors: dict[str, np.ndarray]
    metadata: dict
    default_dtype: str


def _dtype_name(arr: np.ndarray) -> str:
    native = arr.dtype.newbyteorder("=")
    for name, dt in _DTYPES.items():
        if native == dt:
            return name
    raise ManifestError(f"unsupported tensor dtype {arr.dtype}")


def write_bundle(
    path,
    tensors: Mapping[str, np.ndarray],
    metadata: Mapping | None = None,
    *,
    default_dtype: str = "float32",
) -> None:
    if default_dtype not in _DTYPES:
        raise ManifestError(f"unsupported default dtype {default_dtype!r}")
    descriptors = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
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


def read_bundle(path) -> LoadedBundle:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise ExportDataError(f"{path}: not a tensor bundle")
    header_len = int.from_bytes(blob[4:8], "little")
    if len(blob) < 8 + header_len + 4:
        raise ExportDataError(f"{path}: truncated bundle")
    header = json.loads(blob[8 : 8 + header_len].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise ExportDataError(
            f"{path}: unsupported format version {header.get('format_version')!r}"
        )
    payload = blob[8 + header_len : -4]
    if int.from_bytes(blob[-4:], "little") != zlib.crc32(payload):
        raise ExportDataError(f"{path}: payload CRC mismatch")
    default_dtype = header.get("dtype", "float32")
    tensors = {}
    for desc in header.get("tensors", []):
        dtype = _DTYPES[desc.get("dtype", default_dtype)]
        shape = tuple(desc["shape"])
        count = int(np.prod(shape)) if shape else 1
        tensors[desc["name"]] = np.frombuffer(
            payload, dtype=dtype, count=count, offset=desc["offset"]
        ).reshape(shape).copy()
    return LoadedBundle(
        tensors=tensors,
        metadata=header.get("metadata", {}),
        default_dtype=default_dtype,
    )
