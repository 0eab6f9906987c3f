"""Binary checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic  b"MTACKPT\\0"
    u32       format version (1)
    u32       header length in bytes
    u32       CRC-32 of header bytes + payload bytes
    header    UTF-8 JSON: architecture config, tensor table, free-form meta
    payload   tensors in declaration order, float64 little-endian, C order
"""
import json
import struct
import zlib

import numpy as np

from ..errors import CheckpointError
from .graph import ArchitectureConfig, build

MAGIC = b"MTACKPT\0"
VERSION = 1
_PREFIX = struct.Struct("<8sIII")


def save_checkpoint(path, config, params, meta=None):
    tensors = [
        {"name": n, "group": params.groups[n], "shape": list(params[n].shape)} for n in params
    ]
    header = json.dumps(
        {"config": config.to_dict(), "tensors": tensors, "meta": meta or {}},
        sort_keys=True,
    ).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(params[n], dtype="<f8").tobytes() for n in params)
    crc = zlib.crc32(header + payload)
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header), crc))
        fh.write(header)
        fh.write(payload)


def read_checkpoint(path):
    """Return ``(config, {name: array}, meta)`` after verifying the checksum."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if len(blob) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, hlen, crc = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    body = blob[_PREFIX.size :]
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch")
    header = json.loads(body[:hlen].decode("utf-8"))
    payload = body[hlen:]
    tensors, offset = {}, 0
    for t in header["tensors"]:
        count = int(np.prod(t["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        tensors[t["name"]] = arr.reshape(t["shape"]).astype(np.float64)
        offset += 8 * count
    if offset != len(payload):
        raise CheckpointError(f"{path}: payload size does not match tensor table")
    return ArchitectureConfig.from_dict(header["config"]), tensors, header["meta"]


def load_into(params, tensors, strict=True):
    """Copy checkpoint tensors into ``params``; mismatches raise with a full list."""
    problems = []
    for name in params:
        if name not in tensors:
            problems.append(f"{name}: missing from checkpoint")
        elif tensors[name].shape != params[name].shape:
            problems.append(f"{name}: shape {tensors[name].shape} != {params[name].shape}")
    if strict:
        problems += [f"{n}: not in target architecture" for n in tensors if n not in params.params]
    if problems:
        raise CheckpointError("incompatible checkpoint:\n  " + "\n  ".join(problems))
    for name in params:
        params.params[name][...] = tensors[name]


def load_checkpoint(path):
    """Rebuild ``(graph, params, meta)`` from a checkpoint file."""
    config, tensors, meta = read_checkpoint(path)
    graph, params = build(config, seed=0)
    load_into(params, tensors)
    return graph, params, meta
