"""Chunked vector quantization of latent codes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffnet import tensor as tt
from .errors import ConfigurationError, CorruptStreamError


@dataclass
class Codebook:
    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.entries.ndim != 2 or self.entries.shape[0] < 1:
            raise ValueError(f"codebook entries must be (N, k) with N >= 1, got {self.entries.shape}")
        if not np.all(np.isfinite(self.entries)):
            raise ValueError("codebook entries must be finite")

    @property
    def N(self):
        return self.entries.shape[0]

    @property
    def chunk_dim(self):
        return self.entries.shape[1]


@dataclass(frozen=True)
class QuantizedCode:
    indices: tuple
    N: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(i < 0 or i >= self.N for i in idx):
            raise CorruptStreamError(f"codebook index out of range [0, {self.N})")
        object.__setattr__(self, "indices", idx)

    @property
    def C(self):
        return len(self.indices)


def split_chunks(z, C):
    """Split the last axis of ``z`` into C contiguous equal slices -> (..., C, d/C)."""
    z = np.asarray(z, dtype=np.float64)
    d = z.shape[-1]
    if C < 1 or d % C:
        raise ValueError(f"C={C} does not divide d={d}")
    return z.reshape(z.shape[:-1] + (C, d // C))


def nearest_indices(entries, chunks):
    """Index of the closest entry (squared Euclidean) for every chunk in ``chunks`` (..., k).

    ``argmin`` returns the first minimizer, so ties go to the lowest index.
    """
    entries = np.asarray(entries, dtype=np.float64)
    chunks = np.asarray(chunks, dtype=np.float64)
    if chunks.shape[-1] != entries.shape[1]:
        raise ValueError(f"chunk dimension {chunks.shape[-1]} != codebook dimension {entries.shape[1]}")
    flat = chunks.reshape(-1, entries.shape[1])
    diff = flat[:, None, :] - entries[None, :, :]
    dist = np.sum(diff * diff, axis=-1)
    return np.argmin(dist, axis=1).reshape(chunks.shape[:-1])


def nearest_entry(cb, chunk):
    chunk = np.asarray(chunk, dtype=np.float64)
    if chunk.shape != (cb.chunk_dim,):
        raise ValueError(f"chunk shape {chunk.shape} != ({cb.chunk_dim},)")
    return int(nearest_indices(cb.entries, chunk[None, :])[0])


def quantize(z, cb, C):
    """Quantize a single latent vector; returns (QuantizedCode, zhat)."""
    chunks = split_chunks(z, C)
    if chunks.ndim != 2:
        raise ValueError("quantize expects a single latent vector")
    idx = nearest_indices(cb.entries, chunks)
    code = QuantizedCode(tuple(idx.tolist()), cb.N)
    return code, cb.entries[idx].reshape(-1)


def dequantize(code, cb):
    idx = np.asarray(code.indices if isinstance(code, QuantizedCode) else code, dtype=np.int64)
    if np.any(idx < 0) or np.any(idx >= cb.N):
        raise CorruptStreamError(f"codebook index out of range [0, {cb.N})")
    return cb.entries[idx].reshape(-1)


def vq_loss(chunks, codebook, idx=None):
    """Codebook term plus commitment term, summed over chunks and divided by C.

    ``chunks`` is a Tensor (C, k) or (B, C, k), ``codebook`` a Tensor (N, k).
    The first term only moves the codebook, the second only the encoder output;
    multiple clouds are averaged.
    """
    chunks = tt.as_tensor(chunks)
    codebook = tt.as_tensor(codebook)
    if idx is None:
        idx = nearest_indices(codebook.data, chunks.data)
    e = tt.take_rows(codebook, idx)
    codebook_term = tt.sum_(tt.square(tt.sub(tt.stop_gradient(chunks), e)))
    commit_term = tt.sum_(tt.square(tt.sub(tt.stop_gradient(e), chunks)))
    n_codes = int(np.prod(chunks.shape[:-1]))
    return tt.mul(tt.add(codebook_term, commit_term), 1.0 / n_codes)


def quantize_st(z, codebook, C):
    """Differentiable quantization of a batch of latents z (B, d).

    Returns (zhat, vq-loss, indices): ``zhat`` carries the selected entries
    forward and hands its gradient straight back to ``z``.
    """
    z = tt.as_tensor(z)
    B, d = z.shape
    if d % C:
        raise ValueError(f"C={C} does not divide d={d}")
    chunks = tt.reshape(z, (B, C, d // C))
    idx = nearest_indices(codebook.data, chunks.data)
    loss = vq_loss(chunks, codebook, idx)
    zhat = tt.straight_through(z, codebook.data[idx].reshape(B, d))
    return zhat, loss, idx


def rate_bits(C, N):
    """Bits to transmit C indices into a codebook of N (a power of two) entries."""
    if N < 1 or N & (N - 1):
        raise ConfigurationError(f"codebook size N={N} must be a power of two")
    return C * (N.bit_length() - 1)


def bits_per_index(N):
    return rate_bits(1, N)


def init_from_chunks(chunks, N, seed=0):
    """Seed N entries by sampling (without replacement where possible) from observed chunks."""
    chunks = np.asarray(chunks, dtype=np.float64).reshape(-1, np.shape(chunks)[-1])
    rng = np.random.default_rng(seed)
    n = len(chunks)
    if n >= N:
        pick = rng.choice(n, size=N, replace=False)
    else:
        pick = np.concatenate([rng.permutation(n), rng.choice(n, size=N - n)])
    entries = chunks[pick].copy()
    if n < N:
        # repeated picks would be dead entries under lowest-index tie breaking
        spread = chunks.std(axis=0) + 1e-6
        entries[n:] += 0.05 * spread * rng.standard_normal(entries[n:].shape)
    return entries


def fit_codebook(chunks, N, iters=100, seed=0):
    """Lloyd iterations on a frozen chunk corpus: the fixed point of the codebook term.

    Returns the (N, k) entries. Empty clusters keep their previous entry.
    """
    chunks = np.asarray(chunks, dtype=np.float64)
    entries = init_from_chunks(chunks, N, seed)
    for _ in range(iters):
        idx = nearest_indices(entries, chunks)
        sums = np.zeros_like(entries)
        np.add.at(sums, idx, chunks)
        counts = np.bincount(idx, minlength=N)
        filled = counts > 0
        new = entries.copy()
        new[filled] = sums[filled] / counts[filled, None]
        if np.array_equal(new, entries):
            break
        entries = new
    return entries


def quantization_mse(z, entries, C):
    """Mean over vectors of the squared error ||z - zhat||^2 for a batch z (M, d)."""
    chunks = split_chunks(z, C)
    idx = nearest_indices(entries, chunks)
    diff = chunks - entries[idx]
    return float(np.mean(np.sum(diff * diff, axis=(-2, -1))))

