"""MDNW weights file IO, written against the published byte layout.

    magic "MDNW" | version u32 LE | header_len u32 LE | header JSON (UTF-8)
    | float32 LE payload, row-major, offsets in float counts
    | CRC32 of the payload (u32 LE)

Header: {"metadata": {...}, "tensors": [{name, shape, offset, count}, ...]}.
This is an independent implementation of the format; it shares no code with
the planner-side loader.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"MDNW"
VERSION = 1


class WeightsIOError(ValueError):
    """Weights file unreadable or internally inconsistent."""


@dataclass
class WeightsFile:
    metadata: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)


def write_weights(wf: WeightsFile, path) -> None:
    entries = []
    payload = bytearray()
    offset = 0
    for name in sorted(wf.tensors):
        arr = np.ascontiguousarray(wf.tensors[name], dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape),
                        "offset": offset, "count": int(arr.size)})
        payload.extend(arr.tobytes())
        offset += int(arr.size)
    header = json.dumps({"metadata": wf.metadata, "tensors": entries},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        fh.write(bytes(payload))
        fh.write(struct.pack("<I", zlib.crc32(bytes(payload)) & 0xFFFFFFFF))


def read_weights(path) -> WeightsFile:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise WeightsIOError("not an MDNW file")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise WeightsIOError(f"unsupported version {version}")
    header = json.loads(raw[12:12 + header_len].decode("utf-8"))
    entries = header["tensors"]
    total = max(e["offset"] + e["count"] for e in entries)
    body = raw[12 + header_len:]
    if len(body) != 4 * total + 4:
        raise WeightsIOError(f"payload size mismatch: {len(body)} bytes for "
                             f"{total} floats")
    payload = body[:-4]
    (crc,) = struct.unpack("<I", body[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise WeightsIOError("checksum mismatch")
    flat = np.frombuffer(payload, dtype="<f4")
    tensors = {}
    for e in entries:
        shape = tuple(int(s) for s in e["shape"])
        arr = flat[e["offset"]:e["offset"] + e["count"]]
        if arr.size != int(np.prod(shape)):
            raise WeightsIOError(f"tensor {e['name']}: bad count")
        tensors[e["name"]] = arr.reshape(shape).copy()
    return WeightsFile(metadata=header["metadata"], tensors=tensors)
