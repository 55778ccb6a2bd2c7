"""Interchange file formats: ".tns" tensors and WeightStore bundles.

".tns" layout (little-endian throughout):
    magic "TNSR" | u32 rank | rank x u32 dims | prod(dims) x f32, row-major

WeightStore layout:
    magic "WSTR" | u32 header_len | header JSON (UTF-8) | payload
The header is ``{"entries": [{"path": ..., "dims": [...], "offset": ...}]}``
with offsets measured from the start of the payload region; each payload
slot is one complete ".tns" blob.  Entries keep manifest order and the
JSON is written without whitespace, so save(load(f)) is byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

__all__ = ["TnsFormatError", "WeightStore", "tensor_to_bytes", "tensor_from_bytes",
           "save_tensor", "load_tensor", "save_weightstore", "load_weightstore"]

_TNS_MAGIC = b"TNSR"
_STORE_MAGIC = b"WSTR"
_MAX_RANK = 4


class TnsFormatError(ValueError):
    """Malformed ".tns" or WeightStore content; message names the bad field."""


def tensor_to_bytes(t: Tensor) -> bytes:
    head = _TNS_MAGIC + struct.pack("<I", len(t.dims))
    head += struct.pack(f"<{len(t.dims)}I", *t.dims)
    return head + t.data.astype("<f4").tobytes(order="C")


def tensor_from_bytes(blob: bytes) -> Tensor:
    if len(blob) < 8:
        raise TnsFormatError("payload shorter than header dims")
    if blob[:4] != _TNS_MAGIC:
        raise TnsFormatError("bad magic (expected TNSR)")
    rank = struct.unpack("<I", blob[4:8])[0]
    if rank < 1 or rank > _MAX_RANK:
        raise TnsFormatError(f"rank {rank} outside 1..{_MAX_RANK}")
    if len(blob) < 8 + 4 * rank:
        raise TnsFormatError("payload shorter than header dims")
    dims = struct.unpack(f"<{rank}I", blob[8:8 + 4 * rank])
    if any(d < 1 for d in dims):
        raise TnsFormatError("dimension must be positive")
    count = 1
    for d in dims:
        count *= d
    body = blob[8 + 4 * rank:]
    if len(body) < 4 * count:
        raise TnsFormatError("payload shorter than header dims")
    if len(body) > 4 * count:
        raise TnsFormatError("payload longer than header dims")
    data = np.frombuffer(body, dtype="<f4", count=count).reshape(dims)
    return Tensor(data.copy())


def save_tensor(path: str | Path, t: Tensor) -> None:
    Path(path).write_bytes(tensor_to_bytes(t))


def load_tensor(path: str | Path) -> Tensor:
    return tensor_from_bytes(Path(path).read_bytes())


class WeightStore:
    """Ordered, uniquely named parameter tensors."""

    def __init__(self):
        self.entries: list[tuple[str, Tensor]] = []
        self._index: dict[str, Tensor] = {}

    def add(self, path: str, t: Tensor) -> None:
        if path in self._index:
            raise ValueError(f"duplicate weight path '{path}'")
        self.entries.append((path, t))
        self._index[path] = t

    def get(self, path: str) -> Tensor:
        try:
            return self._index[path]
        except KeyError:
            raise TnsFormatError(f"weight path '{path}' missing from store") from None

    def __contains__(self, path: str) -> bool:
        return path in self._index

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def manifest(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(p, t.dims) for p, t in self.entries]

    def total_values(self) -> int:
        return sum(t.size for _, t in self.entries)


def weightstore_to_bytes(store: WeightStore) -> bytes:
    blobs, manifest, offset = [], [], 0
    for path, t in store.entries:
        blob = tensor_to_bytes(t)
        manifest.append({"path": path, "dims": list(t.dims), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"entries": manifest}, separators=(",", ":")).encode("utf-8")
    return _STORE_MAGIC + struct.pack("<I", len(header)) + header + b"".join(blobs)


def weightstore_from_bytes(blob: bytes) -> WeightStore:
    if len(blob) < 8 or blob[:4] != _STORE_MAGIC:
        raise TnsFormatError("bad magic (expected WSTR)")
    header_len = struct.unpack("<I", blob[4:8])[0]
    if len(blob) < 8 + header_len:
        raise TnsFormatError("header truncated")
    try:
        header = json.loads(blob[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise TnsFormatError(f"header not valid JSON: {e}") from None
    payload = blob[8 + header_len:]
    store = WeightStore()
    for ent in header.get("entries", []):
        off = ent["offset"]
        if off < 0 or off > len(payload):
            raise TnsFormatError(f"offset {off} outside payload")
        t = tensor_from_bytes_prefix(payload[off:])
        if list(t.dims) != list(ent["dims"]):
            raise TnsFormatError(f"dims mismatch for '{ent['path']}'")
        store.add(ent["path"], t)
    return store


def tensor_from_bytes_prefix(blob: bytes) -> Tensor:
    """Parse one ".tns" blob from the head of ``blob`` (trailing bytes allowed)."""
    if len(blob) < 8 or blob[:4] != _TNS_MAGIC:
        raise TnsFormatError("bad magic (expected TNSR)")
    rank = struct.unpack("<I", blob[4:8])[0]
    if rank < 1 or rank > _MAX_RANK:
        raise TnsFormatError(f"rank {rank} outside 1..{_MAX_RANK}")
    dims = struct.unpack(f"<{rank}I", blob[8:8 + 4 * rank])
    count = 1
    for d in dims:
        count *= d
    end = 8 + 4 * rank + 4 * count
    if len(blob) < end:
        raise TnsFormatError("payload shorter than header dims")
    return tensor_from_bytes(blob[:end])


def save_weightstore(path: str | Path, store: WeightStore) -> None:
    Path(path).write_bytes(weightstore_to_bytes(store))


def load_weightstore(path: str | Path) -> WeightStore:
    return weightstore_from_bytes(Path(path).read_bytes())
