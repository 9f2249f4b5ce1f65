"""Pure numpy implementations of the tape's elementwise and softmax kernels.

This is the fallback backend; the compiled extension in _speedups.pyx exposes
the same call signatures. Softmax kernels operate on 2-d arrays with the
reduction along the last axis.
"""

import numpy as np

GELU_C0 = 0.7978845608028654  # sqrt(2/pi)
GELU_C1 = 0.044715


def tanh_fwd(x):
    return np.tanh(x)


def tanh_bwd(y, g):
    # y is the forward output, so the derivative needs no extra transcendentals
    return (1.0 - y * y) * g


def gelu_fwd(x):
    inner = GELU_C0 * (x + GELU_C1 * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_bwd(x, g):
    x2 = x * x
    t = np.tanh(GELU_C0 * (x + GELU_C1 * x * x2))
    sech2 = 1.0 - t * t
    return g * (0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C0 * (1.0 + 3.0 * GELU_C1 * x2))


def softmax_fwd(x):
    # max subtracted before exponentiation so large logits cannot overflow
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd(y, g):
    dot = (y * g).sum(axis=1, keepdims=True)
    return y * (g - dot)
