"""PointNet-style set encoder and the per-point conditional noise predictor."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError
from . import tensor as tt
from .tensor import Tensor, as_tensor


def _layer_count(W, prefix):
    n = 0
    while f"{prefix}{n}.b" in W:
        n += 1
    return n


def _points_array(points):
    if isinstance(points, Tensor):
        return points
    arr = getattr(points, "points", points)
    return as_tensor(arr)


def encode(W, points, config, slope=None):
    """Map point sets to latent codes.

    ``points`` is (P, 3) or (B, P, 3); the result is (d,) or (B, d). ``W`` maps
    parameter names to Tensors (see ``ParamStore.leaves``/``constants``).
    Max-pooling over the point axis makes the output permutation invariant.
    """
    slope = config.slope if slope is None else slope
    x = _points_array(points)
    single = x.data.ndim == 2
    if single:
        x = tt.reshape(x, (1,) + x.shape)
    h = x
    for i in range(_layer_count(W, "enc.point")):
        h = tt.leaky_relu(tt.matmul(h, W[f"enc.point{i}.w"]) + W[f"enc.point{i}.b"], slope)
    h = tt.max_over(h, axis=1)
    n_head = _layer_count(W, "enc.head")
    for i in range(n_head):
        h = tt.matmul(h, W[f"enc.head{i}.w"]) + W[f"enc.head{i}.b"]
        if i < n_head - 1:
            h = tt.leaky_relu(h, slope)
    if h.shape[-1] != config.d:
        raise ConfigurationError(f"encoder produces {h.shape[-1]} features but d={config.d}")
    if single:
        h = tt.reshape(h, (config.d,))
    return h


def time_embedding(t, T, dim=64):
    """Sinusoidal features of t/T; ``t`` may be a scalar or a (B,) integer array."""
    s = np.asarray(t, dtype=np.float64) / T
    half = dim // 2
    freqs = np.exp(np.linspace(0.0, np.log(1000.0), half))
    ang = s[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


def _check_t(t, T):
    t = np.asarray(t)
    if not np.issubdtype(t.dtype, np.integer) or np.any(t < 1) or np.any(t > T):
        raise ValueError(f"timestep must be an integer in [1, {T}], got {t}")
    return t


def denoise(W, x, t, zhat, config, slope=None):
    """Predict the noise in each noisy point.

    Shapes: x (B, P, 3), t (B,), zhat (B, d) -> (B, P, 3). The context
    [time embedding, zhat] is concatenated to every layer's input; since it is
    shared by all points of a cloud, its contribution is computed once per cloud
    and broadcast, so each point is processed independently of the others.
    """
    slope = config.slope if slope is None else slope
    t = _check_t(t, config.T)
    x = as_tensor(x)
    zhat = as_tensor(zhat)
    temb = Tensor(time_embedding(t, config.T, config.time_dim))
    ctx = tt.concat([temb, zhat], axis=-1)
    B = ctx.shape[0]
    h = x
    n = _layer_count(W, "den.layer")
    for i in range(n):
        cond = tt.matmul(ctx, W[f"den.layer{i}.wc"]) + W[f"den.layer{i}.b"]
        h = tt.matmul(h, W[f"den.layer{i}.wh"]) + tt.reshape(cond, (B, 1, cond.shape[-1]))
        if i < n - 1:
            h = tt.leaky_relu(h, slope)
    return h


def denoise_eps(W, x, t, zhat, config):
    """Convenience wrapper for a single cloud or a single point.

    x may be (3,) or (P, 3); t a scalar; zhat (d,). Returns a numpy array shaped like x.
    """
    x = np.asarray(x, dtype=np.float64)
    shape = x.shape
    pts = x.reshape(1, -1, 3)
    out = denoise(W, pts, np.array([t]), np.asarray(zhat, dtype=np.float64)[None, :], config)
    return out.data.reshape(shape)
