"""Versioned binary container used for graph bundles and checkpoints.

Layout (little endian)::

    magic[8] | u32 version | u32 n_sections |
    n_sections x ( u16 name_len | name | u8 kind | u64 payload_len | payload )

``kind`` 0 is an ``.npy`` array (dtype and shape in its own header), 1 is
UTF-8 JSON. Sections keep insertion order, so equal content gives equal bytes.
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import DualError

VERSION = 1
BUNDLE_MAGIC = b"DUALBNDL"
CHECKPOINT_MAGIC = b"DUALCKPT"

_ARRAY, _JSON = 0, 1


class ContainerError(DualError):
    pass


def encode(magic: bytes, sections: dict) -> bytes:
    if len(magic) != 8:
        raise ValueError("magic must be 8 bytes")
    out = io.BytesIO()
    out.write(magic)
    out.write(struct.pack("<II", VERSION, len(sections)))
    for name, value in sections.items():
        if isinstance(value, np.ndarray):
            buf = io.BytesIO()
            np.save(buf, np.asarray(value, order="C"), allow_pickle=False)
            kind, payload = _ARRAY, buf.getvalue()
        else:
            kind, payload = _JSON, json.dumps(value, sort_keys=True).encode("utf-8")
        key = name.encode("utf-8")
        out.write(struct.pack("<H", len(key)))
        out.write(key)
        out.write(struct.pack("<BQ", kind, len(payload)))
        out.write(payload)
    return out.getvalue()


def decode(data: bytes, magic: bytes) -> dict:
    if data[:8] != magic:
        raise ContainerError(f"bad magic {data[:8]!r}, expected {magic!r}")
    version, n = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    pos = 16
    sections = {}
    try:
        for _ in range(n):
            (klen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + klen].decode("utf-8")
            pos += klen
            kind, plen = struct.unpack_from("<BQ", data, pos)
            pos += 9
            payload = data[pos:pos + plen]
            if len(payload) != plen:
                raise ContainerError(f"section {name!r} truncated")
            pos += plen
            if kind == _ARRAY:
                sections[name] = np.load(io.BytesIO(payload), allow_pickle=False)
            elif kind == _JSON:
                sections[name] = json.loads(payload.decode("utf-8"))
            else:
                raise ContainerError(f"section {name!r} has unknown kind {kind}")
    except struct.error as exc:
        raise ContainerError(f"truncated container: {exc}") from None
    return sections


def write(path, magic: bytes, sections: dict) -> str:
    data = encode(magic, sections)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def read(path, magic: bytes) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    return decode(path.read_bytes(), magic)
