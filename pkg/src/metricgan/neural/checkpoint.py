"""Binary checkpoint format for a ParamSet.

Layout::

    b"MGF1" | u32 version | u64 header length | JSON header | tensor data

The header lists every tensor (section, name, dtype, shape, offset, byte
count) plus the Adam step counter, RNG state and network metadata. Tensor
data is little-endian; a CRC32 over the data block catches corruption and
the declared length catches truncation.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .params import ParamSet
from .tensor import Tensor

MAGIC = b"MGF1"
VERSION = 1
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_SECTIONS = ("param", "adam_m", "adam_v", "sn_u", "buffer")


class CheckpointError(ValueError):
    pass


def _dtype_tag(arr: np.ndarray) -> str:
    for tag, dt in _DTYPES.items():
        if arr.dtype == dt.newbyteorder("="):
            return tag
    raise CheckpointError(f"unsupported dtype {arr.dtype}")


def _sections(params: ParamSet):
    yield "param", params.arrays()
    yield "adam_m", params.m
    yield "adam_v", params.v
    yield "sn_u", params.sn_u
    yield "buffer", params.buffers


def to_bytes(params: ParamSet) -> bytes:
    entries, blobs, offset = [], [], 0
    for section, table in _sections(params):
        for name, arr in table.items():
            arr = np.asarray(arr)
            tag = _dtype_tag(arr)
            raw = np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
            entries.append({"section": section, "name": name, "dtype": tag,
                            "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
            blobs.append(raw)
            offset += len(raw)
    data = b"".join(blobs)
    header = {
        "dtype": _dtype_tag(np.zeros(0, params.dtype)),
        "step": params.step,
        "meta": params.meta,
        "rng_state": params.rng_state,
        "entries": entries,
        "data_nbytes": len(data),
        "crc32": zlib.crc32(data),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<IQ", VERSION, len(hbytes)) + hbytes + data


def from_bytes(buf: bytes) -> ParamSet:
    if len(buf) < 16 or buf[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<IQ", buf[4:16])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if len(buf) < 16 + hlen:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(buf[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    data = buf[16 + hlen:]
    if len(data) != header["data_nbytes"]:
        raise CheckpointError(f"truncated checkpoint: {len(data)} of {header['data_nbytes']} data bytes")
    if zlib.crc32(data) != header["crc32"]:
        raise CheckpointError("checkpoint data checksum mismatch")

    params = ParamSet(_DTYPES[header["dtype"]].newbyteorder("="), meta=header["meta"])
    params.step = int(header["step"])
    params.rng_state = header["rng_state"]
    for e in header["entries"]:
        if e["section"] not in _SECTIONS:
            raise CheckpointError(f"unknown section {e['section']}")
        dt = _DTYPES[e["dtype"]]
        chunk = data[e["offset"]:e["offset"] + e["nbytes"]]
        arr = np.frombuffer(chunk, dtype=dt).reshape(e["shape"]).astype(dt.newbyteorder("="))
        if e["section"] == "param":
            params.params[e["name"]] = Tensor(arr, requires_grad=True, name=e["name"])
        elif e["section"] == "adam_m":
            params.m[e["name"]] = arr
        elif e["section"] == "adam_v":
            params.v[e["name"]] = arr
        elif e["section"] == "sn_u":
            params.sn_u[e["name"]] = arr
        else:
            params.buffers[e["name"]] = arr
    for name in params.params:
        if params.m[name].shape != params[name].shape or params.v[name].shape != params[name].shape:
            raise CheckpointError(f"optimizer state shape mismatch for {name}")
    return params


def save_checkpoint(params: ParamSet, path) -> Path:
    path = Path(path)
    payload = to_bytes(params)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> ParamSet:
    return from_bytes(Path(path).read_bytes())
