"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .tensor import backward

REL_FLOOR = 1e-8


def finite_diff_check(fn, store, step=1e-6, param_names=None):
    """Max relative error between backward() gradients and central differences.

    fn rebuilds the forward graph from the store's current parameter values and
    returns a scalar Tensor. Every entry of every selected parameter is
    perturbed by +-step in place. Relative error per entry is
    |analytic - numeric| / max(|numeric|, 1e-8).
    """
    base = fn()
    if base.data.size != 1:
        raise ValueError(f"objective must be scalar, got shape {base.data.shape}")
    if not np.isfinite(base.data):
        raise FloatingPointError("objective is non-finite at the base point")
    analytic = backward(base, store)

    names = list(param_names) if param_names is not None else store.names()
    worst = 0.0
    for name in names:
        flat = store[name].data.reshape(-1)
        grad = analytic[name].reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            hi = float(fn().data)
            flat[i] = saved - step
            lo = float(fn().data)
            flat[i] = saved
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise FloatingPointError(f"objective non-finite while perturbing {name}[{i}]")
            numeric = (hi - lo) / (2.0 * step)
            err = abs(grad[i] - numeric) / max(abs(numeric), REL_FLOOR)
            if err > worst:
                worst = err
    return worst
