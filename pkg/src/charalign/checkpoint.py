"""Self-describing binary tensor container used for checkpoints and galleries.

Layout: 4-byte magic, uint32 format version, uint64 header length, UTF-8
JSON header, then the raw tensor bytes. The header records tensor names,
dtypes, shapes, and offsets, a sha256 checksum of the data section, and an
arbitrary JSON metadata object. Everything is little-endian and written in
sorted-name order, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np
import torch

MAGIC = b"CALN"
VERSION = 1

_DTYPES = {
    "float32": torch.float32,
    "float64": torch.float64,
    "int64": torch.int64,
    "int32": torch.int32,
    "uint8": torch.uint8,
    "bool": torch.bool,
}


class CorruptFile(ValueError):
    pass


class VersionMismatch(ValueError):
    pass


def _np_dtype(name):
    return {"bool": np.bool_}.get(name, np.dtype(name))


def save_tensors(path, tensors: dict, meta: dict):
    """Write named tensors plus JSON-able metadata."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        t = tensors[name].detach().cpu().contiguous()
        dtype = str(t.dtype).removeprefix("torch.")
        if dtype not in _DTYPES:
            raise ValueError(f"unsupported dtype {dtype} for {name}")
        raw = t.numpy().astype(_np_dtype(dtype), copy=False)
        if raw.dtype.byteorder == ">":
            raw = raw.byteswap().view(raw.dtype.newbyteorder("<"))
        blob = raw.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": dtype,
                "shape": list(t.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    data = b"".join(blobs)
    header = {
        "tensors": entries,
        "meta": meta,
        "checksum": hashlib.sha256(data).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(VERSION.to_bytes(4, "little"))
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        fh.write(data)


def load_tensors(path):
    """Read a container; returns (tensors dict, meta dict)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CorruptFile(f"{path}: bad magic")
    version = int.from_bytes(raw[4:8], "little")
    if version != VERSION:
        raise VersionMismatch(f"{path}: format version {version}, expected {VERSION}")
    header_len = int.from_bytes(raw[8:16], "little")
    if len(raw) < 16 + header_len:
        raise CorruptFile(f"{path}: truncated header")
    try:
        header = json.loads(raw[16 : 16 + header_len].decode())
    except ValueError as exc:
        raise CorruptFile(f"{path}: unreadable header: {exc}") from exc
    data = raw[16 + header_len :]
    if hashlib.sha256(data).hexdigest() != header["checksum"]:
        raise CorruptFile(f"{path}: checksum mismatch (truncated or damaged)")
    tensors = {}
    for e in header["tensors"]:
        chunk = data[e["offset"] : e["offset"] + e["nbytes"]]
        arr = np.frombuffer(chunk, dtype=_np_dtype(e["dtype"])).copy()
        tensors[e["name"]] = torch.from_numpy(arr).reshape(e["shape"]).to(_DTYPES[e["dtype"]])
    return tensors, header["meta"]
