"""Attention encoder: brute-force oracles, invariances, masking."""

import math

import numpy as np
import pytest

from fieldstream import autodiff as ad
from fieldstream.autodiff import rng as rngmod
from fieldstream.embedding import CoordinateEmbedding
from fieldstream.encoder import Encoder, ObservationSet, apply_training_mask, _layer_norm


def build(attn_dim=16, heads=1, multi_head=None, latent_dim=6, layer_norm=False,
          tag="enc"):
    store = ad.ParameterStore()
    rng = rngmod.stream(0, tag)
    emb = CoordinateEmbedding(store, (3, 2), n_freq=3, hidden=(8,), rng=rng)
    enc = Encoder(store, emb, attn_dim, latent_dim, heads=heads,
                  multi_head=multi_head, hidden=(8,), layer_norm=layer_norm, rng=rng)
    return store, enc


def make_obs(n=10, tag="obs", t=0.0):
    gen = rngmod.stream(0, tag)
    return ObservationSet(t=t, coords=gen.uniform(size=(n, 2)), values=gen.normal(size=n))


def np_softmax(v):
    e = np.exp(v - v.max())
    return e / e.sum()


def test_observation_set_validation():
    with pytest.raises(ValueError):
        ObservationSet(t=0.0, coords=np.zeros((3, 2)), values=np.zeros(4))
    with pytest.raises(ValueError):
        ObservationSet(t=0.0, coords=np.full((2, 2), np.nan), values=np.zeros(2))
    empty = ObservationSet(t=0.0, coords=np.zeros((0, 2)), values=np.zeros(0))
    assert empty.n == 0


def test_single_head_attention_matches_brute_force():
    store, enc = build(attn_dim=16, heads=1)
    obs = make_obs(9)
    got = enc.attend_single(enc.latent_rows(obs)).data

    # independent recompute from the raw parameter arrays
    feats = enc.embedding.embed(obs.coords).data
    rows = np.concatenate([obs.values.reshape(-1, 1), feats], axis=1)
    rows = rows @ store["enc.in_proj.w"].data + store["enc.in_proj.b"].data
    keys = rows @ store["enc.wk"].data
    vals = rows @ store["enc.wv"].data
    q = store["enc.query"].data
    weights = np_softmax(keys @ q / math.sqrt(16))
    np.testing.assert_allclose(got.reshape(-1), weights @ vals, rtol=1e-12)


def test_multi_head_attention_matches_brute_force():
    store, enc = build(attn_dim=12, heads=3, multi_head=True)
    obs = make_obs(7)
    got = enc.attend_multi(enc.latent_rows(obs)).data

    feats = enc.embedding.embed(obs.coords).data
    rows = np.concatenate([obs.values.reshape(-1, 1), feats], axis=1)
    rows = rows @ store["enc.in_proj.w"].data + store["enc.in_proj.b"].data
    keys = rows @ store["enc.wk"].data
    vals = rows @ store["enc.wv"].data
    q = store["enc.query"].data
    dh = 4
    heads = []
    for h in range(3):
        sl = slice(h * dh, (h + 1) * dh)
        w = np_softmax(keys[:, sl] @ q[sl] / math.sqrt(dh))
        heads.append(w @ vals[:, sl])
    want = np.concatenate(heads) @ store["enc.wo"].data
    np.testing.assert_allclose(got.reshape(-1), want, rtol=1e-12)


def test_encode_output_shape():
    _, enc = build(latent_dim=6)
    z = enc.encode(make_obs(5))
    assert z.shape == (6,)


def test_encode_permutation_invariant():
    _, enc = build(attn_dim=12, heads=3, multi_head=True)
    obs = make_obs(12)
    ref = enc.encode(obs).data
    gen = rngmod.stream(0, "perms")
    for _ in range(20):
        p = gen.permutation(obs.n)
        shuffled = ObservationSet(t=obs.t, coords=obs.coords[p], values=obs.values[p])
        got = enc.encode(shuffled).data
        assert np.max(np.abs(got - ref)) < 1e-12


def test_encode_depends_on_values_and_coords():
    _, enc = build()
    obs = make_obs(6)
    ref = enc.encode(obs).data
    bumped = ObservationSet(t=obs.t, coords=obs.coords,
                            values=obs.values + np.eye(6)[0])
    moved = ObservationSet(t=obs.t, coords=np.clip(obs.coords + 0.05, 0, 1),
                           values=obs.values)
    assert np.max(np.abs(enc.encode(bumped).data - ref)) > 1e-8
    assert np.max(np.abs(enc.encode(moved).data - ref)) > 1e-8


def test_empty_set_rejected():
    _, enc = build()
    empty = ObservationSet(t=0.0, coords=np.zeros((0, 2)), values=np.zeros(0))
    with pytest.raises(ValueError, match="empty"):
        enc.encode(empty)


def test_attn_dim_head_divisibility():
    store = ad.ParameterStore()
    rng = rngmod.stream(0, "div")
    emb = CoordinateEmbedding(store, (2, 2), n_freq=2, hidden=(4,), rng=rng)
    with pytest.raises(ValueError, match="divisible"):
        Encoder(store, emb, attn_dim=10, latent_dim=4, heads=3, multi_head=True, rng=rng)


def test_single_head_when_multi_head_off():
    # heads > 1 but multi_head explicitly False must use the single-head path
    _, enc = build(attn_dim=12, heads=3, multi_head=False)
    assert not enc.multi_head
    z = enc.encode(make_obs(5))
    assert z.shape == (6,)


def test_encoder_gradients():
    store, enc = build(attn_dim=8, heads=2, multi_head=True, latent_dim=3)
    obs = make_obs(4)

    def fn():
        z = enc.encode(obs)
        return ad.sum_(ad.mul(z, z))

    assert ad.finite_diff_check(fn, store) < 1e-5


def test_layer_norm_statistics():
    gen = rngmod.stream(0, "ln")
    h = ad.constant(gen.normal(loc=3.0, scale=2.5, size=(1, 64)))
    out = _layer_norm(h).data
    assert abs(out.mean()) < 1e-12
    assert abs(out.std() - 1.0) < 1e-3  # eps keeps it just under one


def test_layer_norm_flag_changes_encoding():
    _, plain = build(tag="lnflag")
    _, normed = build(tag="lnflag", layer_norm=True)
    obs = make_obs(6)
    assert np.max(np.abs(plain.encode(obs).data - normed.encode(obs).data)) > 1e-9


# --------------------------------------------------------------------------
# training mask


def test_mask_keeps_ceil_fraction():
    obs = make_obs(10)
    gen = rngmod.stream(0, "mask")
    assert apply_training_mask(obs, 1.0, gen).n == 10
    assert apply_training_mask(obs, 0.25, gen).n == 3   # ceil(2.5)
    assert apply_training_mask(obs, 0.01, gen).n == 1   # never empty
    assert apply_training_mask(obs, 0.0, gen).n == 1


def test_mask_rows_are_a_subset_in_original_order():
    obs = make_obs(20)
    masked = apply_training_mask(obs, 0.4, rngmod.stream(0, "mask-subset"))
    # every surviving row appears in the original, in order
    pos = []
    for c, v in zip(masked.coords, masked.values):
        hits = np.where((obs.coords == c).all(axis=1) & (obs.values == v))[0]
        assert hits.size == 1
        pos.append(hits[0])
    assert pos == sorted(pos)


def test_mask_rate_validation():
    obs = make_obs(5)
    with pytest.raises(ValueError):
        apply_training_mask(obs, 1.5, rngmod.stream(0, "m"))
    with pytest.raises(ValueError):
        apply_training_mask(obs, -0.1, rngmod.stream(0, "m"))
    empty = ObservationSet(t=0.0, coords=np.zeros((0, 2)), values=np.zeros(0))
    with pytest.raises(ValueError, match="empty"):
        apply_training_mask(empty, 0.5, rngmod.stream(0, "m"))
