"""Sparse observation sets and the attention encoder that summarizes them.

One frame's observations form a set of (coordinate, value) rows with no
meaningful order. A single learned query cross-attends over the set, so the
summary is permutation invariant and handles any set size, including a
different count every frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .nn import MLP, Linear


@dataclass
class ObservationSet:
    """Observations of one frame: timestamp, (N, K) coordinates, N values.

    N may be zero at inference (a frame nobody sensed); encoding such a set is
    rejected, the stream processors substitute a zero summary instead.
    """

    t: float
    coords: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.coords.ndim != 2:
            raise ValueError(f"coords must be (N, K), got shape {self.coords.shape}")
        if self.values.shape != (self.coords.shape[0],):
            raise ValueError(
                f"values shape {self.values.shape} does not match {self.coords.shape[0]} rows"
            )
        if not (np.isfinite(self.coords).all() and np.isfinite(self.values).all()):
            raise ValueError("observations must be finite")

    @property
    def n(self):
        return self.coords.shape[0]


def apply_training_mask(obs, rate, rng):
    """Keep a uniformly random ceil(rate * N) subset, never fewer than one row.

    Row order of the survivors follows the original set; the encoder does not
    care, but stable order keeps runs reproducible.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"mask rate must lie in [0, 1], got {rate}")
    if obs.n == 0:
        raise ValueError("cannot mask an empty observation set")
    keep = max(1, math.ceil(rate * obs.n))
    idx = np.sort(rng.choice(obs.n, size=keep, replace=False))
    return ObservationSet(obs.t, obs.coords[idx], obs.values[idx])


def _layer_norm(h, eps=1e-6):
    # normalization only, no learned affine; the default configuration never calls this
    m = ad.mean(h)
    centered = h - m
    std = ad.sqrt(ad.mean(ad.mul(centered, centered)) + eps)
    return ad.div(centered, ad.reshape(std, (1, 1)))


# Initial attention sharpness: logits start out close to QUERY_SALIENCE * value,
# so softmax weights at the first step already rank observations by their value.
QUERY_SALIENCE = 6.0


class Encoder:
    """Learned-query cross-attention over an observation set -> latent summary.

    Rows are linear projections of [value; coordinate features]. The query is
    a single trained vector shared across frames. With multi_head, the query,
    keys and values are split into H slices, each attended with its own
    1/sqrt(d_h) scale, concatenated, and mixed by an output projection; the
    single-head path uses the full width and a 1/sqrt(D) scale.

    Initialization makes the whole block transparent at the start: the input
    projection is semi-orthogonal, keys, values and the head mixer begin as
    identity maps, the summary MLP is orthogonal with zero biases, and each
    head's query slice points along the value direction of the token space
    (odd heads along its negation, so some heads seek minima). Attention
    therefore starts by ranking observations by value and pooling the
    coordinate features found there, which gives the summary a usable
    dependence on where the large values sit. With a generic small random
    init instead, the pooled vector is dominated by input-independent bias
    terms, the gradient reaching the query is then far too small to ever
    sharpen attention, and training stalls at predicting the dataset mean.
    """

    def __init__(
        self,
        store,
        embedding,
        attn_dim,
        latent_dim,
        heads=1,
        multi_head=None,
        hidden=None,
        activation="tanh",
        layer_norm=False,
        rng=None,
        prefix="enc",
    ):
        if multi_head is None:
            multi_head = heads > 1
        if multi_head and attn_dim % heads != 0:
            raise ValueError(f"attn_dim {attn_dim} not divisible by {heads} heads")
        self.embedding = embedding
        self.attn_dim = attn_dim
        self.latent_dim = latent_dim
        self.heads = heads
        self.multi_head = multi_head
        self.layer_norm = layer_norm
        self.dtype = store.dtype
        self.query = store.add(f"{prefix}.query", np.zeros(attn_dim))
        self.in_proj = Linear(store, f"{prefix}.in_proj", 1 + embedding.width, attn_dim, rng,
                              init="orthogonal")
        self.wk = store.identity_init(f"{prefix}.wk", attn_dim)
        self.wv = store.identity_init(f"{prefix}.wv", attn_dim)
        self.wo = store.identity_init(f"{prefix}.wo", attn_dim) if multi_head else None
        mlp_hidden = hidden if hidden is not None else (attn_dim, attn_dim)
        self.mlp = MLP(store, f"{prefix}.mlp", attn_dim, mlp_hidden, latent_dim, rng,
                       activation=activation, init="orthogonal", gain=1.2)
        self.query.data[:] = self._salience_query()

    def _salience_query(self):
        """Per-head query slices along the value direction of the token space.

        Token row n is v_n * w_val + (feature terms) with w_val the value row of
        the input projection. With identity keys, a query slice of
        sign * QUERY_SALIENCE * sqrt(d_h) * w_val_slice / |w_val_slice| makes the
        head's initial logits approximately sign * QUERY_SALIENCE * |w_val_slice|
        * v_n, so attention opens by ranking observations by value. Sign
        alternates across heads; a head whose slice of w_val is all zero keeps a
        zero query and starts from uniform weights.
        """
        wval = self.in_proj.w.data[0]
        n_heads = self.heads if self.multi_head else 1
        dh = self.attn_dim // n_heads
        q = np.zeros(self.attn_dim)
        for h in range(n_heads):
            seg = wval[h * dh:(h + 1) * dh]
            nrm = np.linalg.norm(seg)
            if nrm > 0:
                sign = 1.0 if h % 2 == 0 else -1.0
                q[h * dh:(h + 1) * dh] = sign * QUERY_SALIENCE * math.sqrt(dh) * seg / nrm
        return q

    def latent_rows(self, obs):
        """Project an observation set to attention rows, shape (N, D)."""
        if obs.n == 0:
            raise ValueError("empty observation set has no rows to project")
        feats = self.embedding.embed(obs.coords)
        vals = ad.constant(obs.values.reshape(-1, 1), self.dtype)
        return self.in_proj(ad.concat([vals, feats], axis=1))

    def attend_single(self, rows):
        keys = ad.matmul(rows, self.wk)
        vals = ad.matmul(rows, self.wv)
        q = ad.reshape(self.query, (1, self.attn_dim))
        scores = ad.mul(ad.matmul(q, ad.transpose(keys)), 1.0 / math.sqrt(self.attn_dim))
        return ad.matmul(ad.softmax(scores, axis=-1), vals)

    def attend_multi(self, rows):
        keys = ad.matmul(rows, self.wk)
        vals = ad.matmul(rows, self.wv)
        dh = self.attn_dim // self.heads
        outs = []
        for h in range(self.heads):
            lo, hi = h * dh, (h + 1) * dh
            qh = ad.reshape(self.query[lo:hi], (1, dh))
            scores = ad.mul(ad.matmul(qh, ad.transpose(keys[:, lo:hi])), 1.0 / math.sqrt(dh))
            outs.append(ad.matmul(ad.softmax(scores, axis=-1), vals[:, lo:hi]))
        return ad.matmul(ad.concat(outs, axis=1), self.wo)

    def encode(self, obs):
        """Latent summary of one frame's observations, shape (P,)."""
        rows = self.latent_rows(obs)
        pooled = self.attend_multi(rows) if self.multi_head else self.attend_single(rows)
        if self.layer_norm:
            pooled = _layer_norm(pooled)
        return ad.reshape(self.mlp(pooled), (self.latent_dim,))
