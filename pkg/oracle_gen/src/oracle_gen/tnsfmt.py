"""Writers/readers for the documented interchange formats.

".tns": magic "TNSR", u32 LE rank, rank x u32 LE dims, f32 LE row-major
payload.  WeightStore: magic "WSTR", u32 LE header length, minified JSON
header {"entries": [{"path", "dims", "offset"}]} with offsets relative to
the payload region, then concatenated ".tns" blobs in manifest order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np


def tensor_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    head = b"TNSR" + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes(order="C")


def read_tensor(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:4] != b"TNSR":
        raise ValueError(f"{path}: bad magic")
    rank = struct.unpack("<I", blob[4:8])[0]
    dims = struct.unpack(f"<{rank}I", blob[8:8 + 4 * rank])
    count = int(np.prod(dims))
    data = np.frombuffer(blob[8 + 4 * rank:], dtype="<f4", count=count)
    return data.reshape(dims).copy()


def write_tensor(path: str | Path, arr: np.ndarray) -> None:
    Path(path).write_bytes(tensor_bytes(arr))


def write_weightstore(path: str | Path, entries: list[tuple[str, np.ndarray]]) -> None:
    blobs, manifest, offset = [], [], 0
    for name, arr in entries:
        blob = tensor_bytes(arr)
        manifest.append({"path": name, "dims": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"entries": manifest}, separators=(",", ":")).encode()
    out = b"WSTR" + struct.pack("<I", len(header)) + header + b"".join(blobs)
    Path(path).write_bytes(out)


def read_weightstore(path: str | Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != b"WSTR":
        raise ValueError(f"{path}: bad magic")
    header_len = struct.unpack("<I", blob[4:8])[0]
    header = json.loads(blob[8:8 + header_len].decode())
    payload = blob[8 + header_len:]
    out = {}
    for ent in header["entries"]:
        off = ent["offset"]
        rank = struct.unpack("<I", payload[off + 4:off + 8])[0]
        dims = struct.unpack(f"<{rank}I", payload[off + 8:off + 8 + 4 * rank])
        count = int(np.prod(dims))
        start = off + 8 + 4 * rank
        data = np.frombuffer(payload[start:start + 4 * count], dtype="<f4")
        out[ent["path"]] = data.reshape(dims).copy()
    return out
