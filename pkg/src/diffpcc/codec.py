"""Bitstream format and the compress / decompress pipelines.

Stream layout (byte exact, integers little-endian, floats IEEE-754)::

    "DPCC" | version u8 | P u32 | d u16 | C u16 | N u16 | model-id u64
           | centroid 3 x f32 | scale f32 | payload

The payload holds C fixed-width indices of log2(N) bits each, packed
most-significant-bit first and zero-padded to a byte boundary.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import geometry, quantizer
from .diffnet.models import encode
from .diffusion import build_schedule, decode, decode_batch
from .errors import CorruptStreamError, WrongModelError

MAGIC = b"DPCC"
VERSION = 1
HEADER = struct.Struct("<4sBIHHHQ4f")


def pack_indices(indices, bits):
    """Concatenate fixed-width fields MSB-first; pad the tail with zero bits."""
    if bits < 0:
        raise ValueError("bits per index must be nonnegative")
    acc = 0
    for i in indices:
        i = int(i)
        if i < 0 or i >= 1 << bits:
            raise ValueError(f"index {i} does not fit in {bits} bits")
        acc = (acc << bits) | i
    total = bits * len(indices)
    nbytes = (total + 7) // 8
    pad = nbytes * 8 - total
    return (acc << pad).to_bytes(nbytes, "big")


def unpack_indices(data, C, bits):
    total = C * bits
    nbytes = (total + 7) // 8
    if len(data) != nbytes:
        raise CorruptStreamError(f"payload has {len(data)} bytes, expected {nbytes}")
    acc = int.from_bytes(bytes(data), "big")
    pad = nbytes * 8 - total
    if acc & ((1 << pad) - 1):
        raise CorruptStreamError("nonzero padding bits in payload")
    acc >>= pad
    mask = (1 << bits) - 1
    return [(acc >> (bits * (C - 1 - k))) & mask for k in range(C)]


@dataclass(frozen=True)
class Bitstream:
    P: int
    d: int
    C: int
    N: int
    model_id: int
    centroid: tuple
    scale: float
    payload: bytes
    version: int = VERSION

    @property
    def payload_bits(self):
        return quantizer.rate_bits(self.C, self.N)

    def indices(self):
        return unpack_indices(self.payload, self.C, quantizer.bits_per_index(self.N))

    def to_bytes(self):
        head = HEADER.pack(MAGIC, self.version, self.P, self.d, self.C, self.N, self.model_id,
                           *self.centroid, self.scale)
        return head + bytes(self.payload)

    @classmethod
    def from_bytes(cls, data):
        data = bytes(data)
        if len(data) < HEADER.size:
            raise CorruptStreamError(f"stream shorter than the {HEADER.size}-byte header")
        magic, version, P, d, C, N, model_id, cx, cy, cz, scale = HEADER.unpack_from(data)
        if magic != MAGIC:
            raise CorruptStreamError("bad stream magic")
        if version != VERSION:
            raise CorruptStreamError(f"unsupported stream version {version}")
        if P < 1 or C < 1 or d % C or N < 1 or N & (N - 1):
            raise CorruptStreamError(f"inconsistent header fields P={P} d={d} C={C} N={N}")
        if not (np.isfinite([cx, cy, cz, scale]).all() and scale > 0):
            raise CorruptStreamError("invalid normalization stats in header")
        stream = cls(P=P, d=d, C=C, N=N, model_id=model_id, centroid=(cx, cy, cz), scale=scale,
                     payload=data[HEADER.size:], version=version)
        stream.indices()  # validates payload length and padding
        return stream

    def wire_bits(self):
        return 8 * (HEADER.size + len(self.payload))


def bpp(stream):
    """Theoretical rate C*log2(N)/P; header and padding bits are excluded."""
    return quantizer.rate_bits(stream.C, stream.N) / stream.P


def wire_bpp(stream):
    return stream.wire_bits() / stream.P


def _f32(x):
    return float(np.float32(x))


def compress(pc, params):
    """normalize -> encode -> quantize -> pack."""
    cfg = params.config
    normed, stats = geometry.normalize(pc)
    z = encode(params.constants(), normed.points, cfg).data
    code, _ = quantizer.quantize(z, quantizer.Codebook(params["codebook"]), cfg.C)
    payload = pack_indices(code.indices, quantizer.bits_per_index(cfg.N))
    return Bitstream(
        P=len(pc), d=cfg.d, C=cfg.C, N=cfg.N, model_id=params.model_id(),
        centroid=tuple(_f32(c) for c in stats.centroid), scale=_f32(stats.scale),
        payload=payload,
    )


def check_model(stream, params):
    cfg = params.config
    if stream.model_id != params.model_id():
        raise WrongModelError(
            f"stream was produced by model {stream.model_id:016x}, decoder has {params.model_id():016x}")
    if (stream.d, stream.C, stream.N) != (cfg.d, cfg.C, cfg.N):
        raise WrongModelError("stream dimensions do not match the model configuration")


def stream_latent(stream, params):
    """Dequantized latent for a stream, after checking it belongs to ``params``."""
    check_model(stream, params)
    return quantizer.dequantize(stream.indices(), quantizer.Codebook(params["codebook"]))


def decompress(stream, params, seed=0, sched=None):
    """unpack -> dequantize -> reverse diffusion -> denormalize."""
    cfg = params.config
    zhat = stream_latent(stream, params)
    if sched is None:
        sched = build_schedule(cfg.T, cfg.beta_1, cfg.beta_T)
    pts = decode(params, zhat, stream.P, sched, seed)
    stats = geometry.NormStats(np.array(stream.centroid, dtype=np.float64), float(stream.scale))
    return geometry.denormalize(geometry.PointCloud(pts), stats)


def decompress_many(streams, params, seed=0):
    """Decode several streams that share a point count in one batched reverse pass.

    Every stream uses the same decoder ``seed``, exactly as separate
    ``decompress`` calls would.
    """
    streams = list(streams)
    if not streams:
        return []
    if len({s.P for s in streams}) != 1:
        raise ValueError("batched decoding needs streams with equal point counts")
    cfg = params.config
    zhat = np.stack([stream_latent(s, params) for s in streams])
    sched = build_schedule(cfg.T, cfg.beta_1, cfg.beta_T)
    pts = decode_batch(params, zhat, streams[0].P, sched, [seed] * len(streams))
    out = []
    for s, p in zip(streams, pts):
        stats = geometry.NormStats(np.array(s.centroid, dtype=np.float64), float(s.scale))
        out.append(geometry.denormalize(geometry.PointCloud(p), stats))
    return out
