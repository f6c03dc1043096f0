from __future__ import annotations

import numpy as np

from ..errors import DivergenceError


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads, max_norm):
    """Rescale gradients so their joint L2 norm is at most ``max_norm``.

    Returns (grads, norm_before, clipped).
    """
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads, norm, False
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm, True


def adam_step(store, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8, frozen=()):
    """One bias-corrected Adam update, in place. Returns the store.

    Parameters named in ``frozen`` keep their values and moments.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {name!r}", term=name)
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, g in grads.items():
        if name in frozen:
            continue
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        if lr != 0.0:
            store.values[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return store
