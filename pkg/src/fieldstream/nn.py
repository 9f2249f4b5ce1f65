"""Small feed-forward building blocks shared by the model components."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

ACTIVATIONS = {
    "tanh": ad.tanh,
    "gelu": ad.gelu,
    "sine": ad.sin,
}


def activation_fn(name):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; options: {sorted(ACTIVATIONS)}") from None


class Linear:
    """y = x W + b.

    init="uniform" is the store's default +-1/sqrt(fan_in) draw. init="orthogonal"
    uses a (semi-)orthogonal W scaled by gain with a zero bias, which keeps signal
    magnitudes roughly constant when layers are composed.
    """

    def __init__(self, store, prefix, n_in, n_out, rng, init="uniform", gain=1.0):
        if init == "uniform":
            self.w = store.linear_init(f"{prefix}.w", (n_in, n_out), rng)
            self.b = store.linear_init(f"{prefix}.b", (1, n_out), rng, fan_in=n_in)
        elif init == "orthogonal":
            self.w = store.orthogonal_init(f"{prefix}.w", (n_in, n_out), rng, gain=gain)
            self.b = store.add(f"{prefix}.b", np.zeros((1, n_out)))
        else:
            raise ValueError(f"unknown init {init!r}; options: uniform, orthogonal")

    def __call__(self, x):
        return ad.matmul(x, self.w) + self.b


class MLP:
    """Fully connected stack: hidden layers with one activation, linear output."""

    def __init__(self, store, prefix, n_in, hidden, n_out, rng, activation="tanh",
                 init="uniform", gain=1.0):
        self.act = activation_fn(activation)
        widths = [n_in, *hidden, n_out]
        self.layers = [
            Linear(store, f"{prefix}.{i}", widths[i], widths[i + 1], rng, init=init, gain=gain)
            for i in range(len(widths) - 1)
        ]

    def __call__(self, x):
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i != last:
                x = self.act(x)
        return x
