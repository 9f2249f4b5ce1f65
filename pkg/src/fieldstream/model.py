"""The assembled streaming model and its configuration."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .decoder import FilmDecoder, TuckerDecoder
from .embedding import CoordinateEmbedding
from .encoder import Encoder
from .ssm import HippoSystem, StreamState, median_step


@dataclass
class ModelConfig:
    """Architecture knobs. Full-scale defaults; presets scale these down.

    state_order is L, attn_dim is D, latent_dim is P, film_width is V; ranks
    give the per-mode feature widths whose sum is the coordinate feature size.
    """

    ranks: tuple = (64, 64)
    n_freq: int = 16
    embed_hidden: tuple = (64, 64)
    state_order: int = 32
    attn_dim: int = 512
    heads: int = 4
    multi_head: bool = True
    latent_dim: int = 64
    encoder_hidden: tuple | None = None
    film_width: int = 64
    film_hidden: tuple = (256, 256)
    readout_hidden: tuple | None = None
    activation: str = "tanh"
    decoder: str = "film"  # "film" or "ftm"
    use_ssm: bool = True
    layer_norm: bool = False
    precision: str = "float64"

    def __post_init__(self):
        self.ranks = tuple(int(r) for r in self.ranks)
        self.embed_hidden = tuple(self.embed_hidden)
        self.film_hidden = tuple(self.film_hidden)
        if self.encoder_hidden is not None:
            self.encoder_hidden = tuple(self.encoder_hidden)
        if self.readout_hidden is not None:
            self.readout_hidden = tuple(self.readout_hidden)
        if self.decoder not in ("film", "ftm"):
            raise ValueError(f"decoder must be 'film' or 'ftm', got {self.decoder!r}")
        if self.precision not in ("float64", "float32"):
            raise ValueError(f"precision must be float64 or float32, got {self.precision!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class StreamModel:
    """Encoder + frozen recurrence + functional decoder over one parameter store.

    Construction is deterministic in (config, seed): every parameter draws
    from a stream derived from the seed and its own name path.
    """

    def __init__(self, config: ModelConfig, seed=0):
        self.config = config
        self.seed = int(seed)
        dtype = np.float64 if config.precision == "float64" else np.float32
        self.store = ad.ParameterStore(dtype=dtype)
        init = ad.stream(self.seed, "init")
        self.embedding = CoordinateEmbedding(
            self.store, config.ranks, n_freq=config.n_freq,
            hidden=config.embed_hidden, rng=init)
        self.encoder = Encoder(
            self.store, self.embedding, config.attn_dim, config.latent_dim,
            heads=config.heads, multi_head=config.multi_head,
            hidden=config.encoder_hidden, activation=config.activation,
            layer_norm=config.layer_norm, rng=init)
        self.hippo = HippoSystem(config.state_order)
        if config.decoder == "film":
            self.decoder = FilmDecoder(
                self.store, config.state_order, config.latent_dim,
                self.embedding.width, config.film_width,
                hidden=config.film_hidden, readout_hidden=config.readout_hidden,
                activation=config.activation, rng=init)
        else:
            self.decoder = TuckerDecoder(
                self.store, config.ranks, state_order=config.state_order,
                latent_dim=config.latent_dim, conditional=True,
                hidden=config.film_hidden, activation=config.activation, rng=init)

    @property
    def n_parameters(self):
        return sum(t.data.size for _, t in self.store.items())

    def init_state(self, timestamps=None, dt_ref=None):
        """Fresh zero state for a record; timestamps set the step normalizer."""
        x0 = ad.constant(np.zeros(
            (self.config.state_order, self.config.latent_dim), dtype=self.store.dtype))
        if dt_ref is None:
            dt_ref = median_step(timestamps) if timestamps is not None else 1.0
        return StreamState(x=x0, dt_ref=dt_ref)

    def summarize(self, obs):
        """Frame summary z_t; an absent or empty frame contributes zeros."""
        if obs is None or obs.n == 0:
            return ad.constant(np.zeros(self.config.latent_dim, dtype=self.store.dtype))
        return self.encoder.encode(obs)

    def advance(self, state, z, t):
        """Fold one frame summary into the carried state at timestamp t."""
        if self.config.use_ssm:
            x_new = self.hippo.step(state.x, z, state.next_dt(t))
        else:
            # state pinned at zero: the decoder then sees only the current frame
            x_new = state.x
        return state.advanced(x_new, t)

    def step(self, state, obs, t=None):
        """summarize + advance in frame order; returns (new state, summary)."""
        if t is None:
            t = obs.t
        z = self.summarize(obs)
        return self.advance(state, z, t), z

    def decode_coords(self, state, z, coords):
        """Field estimate at (N, K) normalized coordinates, shape (N,)."""
        if self.config.decoder == "film":
            params = self.decoder.film_params(state.x, z)
            return self.decoder.decode(params, self.embedding.embed(coords))
        core = self.decoder.core_vector(state.x, z)
        return self.decoder.decode(core, self.embedding.embed_modes(coords))
