"""Finite-difference verification of the reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, backward, sum_


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    trials: int
    worst_input: str = ""


def _rel_error(a, n):
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def _vjp_fd(fn, arrays, name, r, h):
    """Central differences of <r, fn(arrays)> with respect to arrays[name].

    The output difference is divided by the step actually realized in floating
    point before it is weighted by ``r``.
    """
    base = arrays[name]
    out = np.zeros_like(base)
    flat = base.reshape(-1)
    res = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = flat[i]
        y_plus = _evaluate(fn, arrays)
        flat[i] = orig - h
        lo = flat[i]
        y_minus = _evaluate(fn, arrays)
        flat[i] = orig
        res[i] = np.sum(r * ((y_plus - y_minus) / (hi - lo)))
    return out


def _evaluate(fn, arrays):
    # copy: an output may alias an input array that is about to be perturbed again
    return np.array(fn({k: Tensor(v) for k, v in arrays.items()}).data, dtype=np.float64)


def grad_check(fn, make_inputs, trials=10, tol=1e-4, h=1e-4, seed=0, wrt=None, reference=None):
    """Compare reverse-mode gradients of ``fn`` against central differences.

    ``fn`` takes a dict of Tensors and returns a Tensor of any shape; the check
    contracts the output with a random cotangent. ``make_inputs(rng)`` returns
    the dict of float64 arrays for one trial. ``wrt`` restricts which inputs are
    checked (default: all). Failures are reported, never raised.

    Finite differences are taken of ``reference`` when given (same signature
    and output shape as ``fn``). Stop-gradient and straight-through graphs need
    this: their gradient is that of a surrogate with the stopped side frozen,
    not of the forward value itself.
    """
    rng = np.random.default_rng(seed)
    worst, worst_name = 0.0, ""
    for _ in range(trials):
        arrays = {k: np.array(v, dtype=np.float64) for k, v in make_inputs(rng).items()}
        names = list(arrays) if wrt is None else list(wrt)
        leaves = {k: Tensor(v.copy(), requires_grad=k in names, name=k) for k, v in arrays.items()}
        out = fn(leaves)
        r = rng.standard_normal(out.shape)
        analytic = backward(sum_(out * r), {k: leaves[k] for k in names})
        for name in names:
            err = _rel_error(analytic[name], _vjp_fd(reference or fn, arrays, name, r, h))
            if err > worst:
                worst, worst_name = err, name
    return GradCheckReport(max_rel_error=worst, passed=worst < tol, trials=trials, worst_input=worst_name)
