"""Kernel backend selection.

The extension wins only where fusing away numpy's intermediate arrays pays:
the backward passes that are pure arithmetic (tanh_bwd, softmax_bwd). The
transcendental-heavy kernels lose to numpy's vectorized exp and tanh no matter
the size, so they stay on numpy even when the extension is present;
benchmarks/bench_kernels.py reproduces that measurement. Selection happens
once at import so a process computes with a single backend throughout
(forward values are bit-identical run to run within one build). Set
FIELDSTREAM_PURE_PYTHON=1 to force the fallback; use_backend() exists for the
benchmark, which compares the two inside one process.
"""

import os

import numpy as np

from . import _numpy_kernels as _np_impl

_cy_impl = None
if not os.environ.get("FIELDSTREAM_PURE_PYTHON"):
    try:
        from . import _speedups as _cy_impl
    except ImportError:
        _cy_impl = None

_active = "compiled" if _cy_impl is not None else "numpy"

# kernels the compiled backend actually takes over (measured faster)
_ROUTED = frozenset({"tanh_bwd", "softmax_bwd"})


def available_backends():
    return ("numpy", "compiled") if _cy_impl is not None else ("numpy",)


def backend():
    return _active


def use_backend(name):
    """Switch backends at runtime. Intended for benchmarking, not training."""
    global _active
    if name not in available_backends():
        raise ValueError(f"backend {name!r} not available; have {available_backends()}")
    _active = name


def _flat(x):
    return np.ascontiguousarray(x).reshape(-1)


def _rows(x):
    return np.ascontiguousarray(x).reshape(-1, x.shape[-1])


def _compiled(name, x):
    return _active == "compiled" and name in _ROUTED and x.dtype == np.float64


def raw_implementations(name):
    """Every backend's callable for one kernel, bypassing the routing table.

    The benchmark uses this to measure kernels the router would never pick.
    """
    table = {"numpy": getattr(_np_impl, name)}
    if _cy_impl is not None:
        raw = getattr(_cy_impl, name)
        if name.startswith("softmax"):
            if name.endswith("_fwd"):
                table["compiled"] = lambda x: raw(_rows(x)).reshape(x.shape)
            else:
                table["compiled"] = lambda a, b: raw(_rows(a), _rows(b)).reshape(a.shape)
        elif name.endswith("_fwd"):
            table["compiled"] = lambda x: raw(_flat(x)).reshape(x.shape)
        else:
            table["compiled"] = lambda a, b: raw(_flat(a), _flat(b)).reshape(a.shape)
    return table


def tanh_fwd(x):
    return _np_impl.tanh_fwd(x)


def tanh_bwd(y, g):
    if _compiled("tanh_bwd", y):
        return _cy_impl.tanh_bwd(_flat(y), _flat(g)).reshape(y.shape)
    return _np_impl.tanh_bwd(y, g)


def gelu_fwd(x):
    return _np_impl.gelu_fwd(x)


def gelu_bwd(x, g):
    return _np_impl.gelu_bwd(x, g)


def softmax_fwd(x):
    """Softmax along the last axis of a 2-d array."""
    return _np_impl.softmax_fwd(x)


def softmax_bwd(y, g):
    if _compiled("softmax_bwd", y):
        return _cy_impl.softmax_bwd(_rows(y), _rows(g)).reshape(y.shape)
    return _np_impl.softmax_bwd(y, g)
