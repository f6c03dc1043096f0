"""Model configuration and the named parameter store."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigurationError
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; everything needed to rebuild a model from a checkpoint."""

    d: int = 256
    C: int = 32
    N: int = 128
    T: int = 200
    beta_1: float = 1e-4
    beta_T: float = 0.05
    point_widths: tuple = (128, 256)
    head_widths: tuple = (256,)
    denoiser_widths: tuple = (128, 256, 128)
    time_dim: int = 64
    slope: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "point_widths", tuple(self.point_widths))
        object.__setattr__(self, "head_widths", tuple(self.head_widths))
        object.__setattr__(self, "denoiser_widths", tuple(self.denoiser_widths))
        if self.d < 1 or self.C < 1 or self.d % self.C:
            raise ConfigurationError(f"C={self.C} must divide d={self.d}")
        if self.N < 1 or self.N & (self.N - 1):
            raise ConfigurationError(f"codebook size N={self.N} must be a power of two")
        if self.time_dim % 2:
            raise ConfigurationError("time_dim must be even")
        if not self.point_widths:
            raise ConfigurationError("point_widths must be non-empty")

    @property
    def chunk_dim(self):
        return self.d // self.C

    def to_dict(self):
        out = asdict(self)
        for k in ("point_widths", "head_widths", "denoiser_widths"):
            out[k] = list(out[k])
        return out

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class ParamStore:
    """Named float64 arrays plus Adam moments and the optimizer step counter."""

    config: ModelConfig
    values: dict
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    codebook_ready: bool = False

    def __post_init__(self):
        for name, arr in self.values.items():
            self.m.setdefault(name, np.zeros_like(arr))
            self.v.setdefault(name, np.zeros_like(arr))

    def __getitem__(self, name):
        return self.values[name]

    def names(self):
        return list(self.values)

    def leaves(self):
        """Fresh gradient-tracking leaves, one per parameter."""
        return {name: Tensor(arr, requires_grad=True, name=name) for name, arr in self.values.items()}

    def constants(self):
        return {name: Tensor(arr, name=name) for name, arr in self.values.items()}

    def copy(self):
        return ParamStore(
            config=self.config,
            values={k: a.copy() for k, a in self.values.items()},
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
            step=self.step,
            codebook_ready=self.codebook_ready,
        )

    def model_id(self):
        """64-bit checksum of parameter names, shapes and values (optimizer state excluded)."""
        h = hashlib.blake2b(digest_size=8)
        for name in sorted(self.values):
            arr = np.ascontiguousarray(self.values[name], dtype="<f8")
            h.update(name.encode())
            h.update(np.asarray(arr.shape, dtype="<i8").tobytes())
            h.update(arr.tobytes())
        return int.from_bytes(h.digest(), "little")


def init_params(config, seed=0):
    rng = np.random.default_rng(seed)
    values = {}
    widths = (3,) + config.point_widths
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        values[f"enc.point{i}.w"] = glorot(rng, a, b)
        values[f"enc.point{i}.b"] = np.zeros(b)
    widths = (config.point_widths[-1],) + config.head_widths + (config.d,)
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        values[f"enc.head{i}.w"] = glorot(rng, a, b)
        values[f"enc.head{i}.b"] = np.zeros(b)
    ctx = config.time_dim + config.d
    widths = (3,) + config.denoiser_widths + (3,)
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        values[f"den.layer{i}.wh"] = glorot(rng, a, b)
        values[f"den.layer{i}.wc"] = glorot(rng, ctx, b)
        values[f"den.layer{i}.b"] = np.zeros(b)
    # placeholder entries until the warm-up batch seeds the codebook
    values["codebook"] = rng.standard_normal((config.N, config.chunk_dim))
    return ParamStore(config=config, values=values)
