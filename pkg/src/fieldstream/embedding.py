"""Continuous coordinate embeddings.

Each grid mode gets its own small network: a learnable frequency bank turns a
scalar coordinate into [cos(2 pi phi_j x), sin(2 pi phi_j x)] features, and a
sine-activated MLP maps those to the mode's feature vector. Coordinates are
the normalized grid positions in [0, 1], so the same network evaluates at
observed points and at arbitrary off-grid queries alike.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .nn import MLP

TWO_PI = 2.0 * math.pi


class ModeEmbedder:
    """One spatial mode: scalar coordinate -> feature vector of length rank."""

    def __init__(self, store, prefix, rank, n_freq=16, hidden=(64, 64), rng=None):
        if rank < 1 or n_freq < 1:
            raise ValueError(f"rank and n_freq must be positive, got {rank}, {n_freq}")
        self.rank = rank
        self.n_freq = n_freq
        self.dtype = store.dtype
        # log-spaced initial frequencies in [1, n_freq]; trained thereafter
        self.freq = store.add(f"{prefix}.freq", np.geomspace(1.0, float(n_freq), n_freq))
        self.mlp = MLP(store, f"{prefix}.mlp", 2 * n_freq, hidden, rank, rng, activation="sine",
                       init="orthogonal", gain=1.2)

    def features(self, x):
        """Frequency features for a batch of scalar coordinates, shape (N, 2F)."""
        x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
        if not np.isfinite(x).all():
            raise ValueError("non-finite coordinate")
        angles = ad.mul(ad.mul(ad.constant(x, self.dtype), ad.reshape(self.freq, (1, -1))),
                        TWO_PI)
        return ad.concat([ad.cos(angles), ad.sin(angles)], axis=1)

    def __call__(self, x):
        return self.mlp(self.features(x))


class CoordinateEmbedding:
    """All modes of the grid; concatenation gives the joint coordinate feature."""

    def __init__(self, store, ranks, n_freq=16, hidden=(64, 64), rng=None, prefix="embed"):
        self.ranks = tuple(int(r) for r in ranks)
        self.modes = [
            ModeEmbedder(store, f"{prefix}.mode{k}", r, n_freq=n_freq, hidden=hidden, rng=rng)
            for k, r in enumerate(self.ranks)
        ]

    @property
    def n_modes(self):
        return len(self.modes)

    @property
    def width(self):
        """Total feature width S = sum of mode ranks."""
        return sum(self.ranks)

    def embed_mode(self, k, x):
        return self.modes[k](x)

    def embed_modes(self, coords):
        """Per-mode features for (N, K) coordinates: list of (N, rank_k) tensors."""
        coords = np.asarray(coords, dtype=np.float64)
        if coords.ndim == 1:
            coords = coords.reshape(1, -1)
        if coords.ndim != 2 or coords.shape[1] != self.n_modes:
            raise ValueError(
                f"expected coordinates of shape (N, {self.n_modes}), got {coords.shape}"
            )
        return [self.modes[k](coords[:, k]) for k in range(self.n_modes)]

    def embed(self, coords):
        """Joint features for (N, K) coordinates, shape (N, S)."""
        return ad.concat(self.embed_modes(coords), axis=1)
