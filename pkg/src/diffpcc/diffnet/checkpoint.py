"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"DPCKPT" | version u8 | meta_len u32 | meta JSON (utf-8) | n_records u32 | records...

    record := name_len u16 | name utf-8 | ndim u8 | shape u32 * ndim | float64 LE data (row-major)

Record names are ``param/<name>``, ``adam_m/<name>`` and ``adam_v/<name>``.
The JSON metadata carries the model configuration, the optimizer step and
whether the codebook has been seeded.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from ..errors import CorruptStreamError
from .params import ModelConfig, ParamStore

MAGIC = b"DPCKPT"
VERSION = 1


def _record(name, arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    raw = name.encode("utf-8")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def dumps(store, extra=None):
    meta = {
        "config": store.config.to_dict(),
        "step": store.step,
        "codebook_ready": store.codebook_ready,
    }
    if extra:
        meta["extra"] = extra
    meta_raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    records = []
    for name in store.names():
        records.append(_record(f"param/{name}", store.values[name]))
        records.append(_record(f"adam_m/{name}", store.m[name]))
        records.append(_record(f"adam_v/{name}", store.v[name]))
    out = [MAGIC, struct.pack("<BI", VERSION, len(meta_raw)), meta_raw, struct.pack("<I", len(records))]
    return b"".join(out + records)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CorruptStreamError("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(buf):
    """Parse checkpoint bytes; returns (ParamStore, extra-metadata dict)."""
    rd = _Reader(buf)
    if rd.take(len(MAGIC)) != MAGIC:
        raise CorruptStreamError("not a checkpoint (bad magic)")
    version, meta_len = rd.unpack("<BI")
    if version != VERSION:
        raise CorruptStreamError(f"unsupported checkpoint version {version}")
    try:
        meta = json.loads(rd.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptStreamError(f"bad checkpoint metadata: {exc}") from None
    (n_records,) = rd.unpack("<I")
    groups = {"param": {}, "adam_m": {}, "adam_v": {}}
    for _ in range(n_records):
        (name_len,) = rd.unpack("<H")
        full = rd.take(name_len).decode("utf-8")
        (ndim,) = rd.unpack("<B")
        shape = rd.unpack(f"<{ndim}I")
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(rd.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
        kind, _, name = full.partition("/")
        if kind not in groups:
            raise CorruptStreamError(f"unknown checkpoint record {full!r}")
        groups[kind][name] = data
    if rd.pos != len(buf):
        raise CorruptStreamError("trailing bytes after checkpoint records")
    store = ParamStore(
        config=ModelConfig.from_dict(meta["config"]),
        values=groups["param"],
        m=groups["adam_m"],
        v=groups["adam_v"],
        step=int(meta["step"]),
        codebook_ready=bool(meta["codebook_ready"]),
    )
    return store, meta.get("extra", {})


def save_checkpoint(store, path, extra=None):
    """Write atomically: serialize to a temp file, then rename over ``path``."""
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(dumps(store, extra))
    os.replace(tmp, path)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
