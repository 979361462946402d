"""Finite-difference gradient verification helpers."""

import numpy as np

from .tensor import Tensor, no_grad


def _scalar(fn, inputs) -> float:
    out = fn(*inputs)
    if isinstance(out, Tensor):
        return float(out.data)
    return float(out)


def directional_relative_error(fn, inputs, wrt=None, step: float = 1e-5,
                               seed: int = 0) -> float:
    """Compare <grad, v> against a central difference along random unit v.

    One random direction per checked tensor; aggregates every coordinate,
    so it stays meaningful when individual entries are near zero. Returns
    the max over checked tensors of |analytic - numeric| / max(|a|, |n|,
    1e-8).
    """
    if wrt is None:
        wrt = [i for i, t in enumerate(inputs) if t.requires_grad]
    for t in inputs:
        t.grad = None
    out = fn(*inputs)
    out.backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in wrt:
        t = inputs[i]
        grad = np.zeros_like(t.data) if t.grad is None else t.grad
        v = rng.standard_normal(t.data.shape)
        v /= max(np.linalg.norm(v), 1e-12)
        base = t.data.copy()
        with no_grad():
            t.data[...] = base + step * v
            f_plus = _scalar(fn, inputs)
            t.data[...] = base - step * v
            f_minus = _scalar(fn, inputs)
        t.data[...] = base
        numeric = (f_plus - f_minus) / (2.0 * step)
        analytic = float((grad * v).sum())
        denom = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst


def max_relative_error(fn, inputs, wrt=None, step: float = 1e-5,
                       max_coords: int = 64, seed: int = 0) -> float:
    """Compare tape gradients of a scalar-valued fn against central differences.

    inputs: Tensors, float64 recommended. wrt: indices of inputs to check
    (default all that require grad). Coordinates are sampled when a tensor
    has more than max_coords entries. Relative error per coordinate is
    |a - n| / max(|a|, |n|, 1e-8); the max over all checked coordinates is
    returned.
    """
    if wrt is None:
        wrt = [i for i, t in enumerate(inputs) if t.requires_grad]
    for t in inputs:
        t.grad = None
    out = fn(*inputs)
    out.backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in wrt:
        t = inputs[i]
        grad = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        n = flat.size
        if n > max_coords:
            coords = rng.choice(n, size=max_coords, replace=False)
        else:
            coords = np.arange(n)
        for c in coords:
            orig = flat[c]
            with no_grad():
                flat[c] = orig + step
                f_plus = _scalar(fn, inputs)
                flat[c] = orig - step
                f_minus = _scalar(fn, inputs)
            flat[c] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            analytic = float(grad.reshape(-1)[c])
            denom = max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst
