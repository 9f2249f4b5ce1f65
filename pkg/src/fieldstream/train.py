"""Training loop, optimizer, and checkpoints.

Each record is one BPTT unit: frames are processed in order, every frame's
RMSE on the full observed set (conditioning on a masked subset) accumulates
into one scalar, and gradients flow back through the whole sequence. Batches
average gradient maps over records; Adam steps once per batch. All
stochasticity (record order, mask rates, subset draws) comes from streams
derived of the run seed, so a run is a pure function of (config, data, seed).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import rng as rngmod
from .encoder import apply_training_mask
from .model import ModelConfig, StreamModel
from .ssm import median_step

CKPT_MAGIC = b"FSCK"
CKPT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Loss left the finite range; names the offending record and frame."""


class CheckpointFormatError(ValueError):
    """Checkpoint container cannot be decoded."""


@dataclass
class TrainConfig:
    epochs: int = 20
    lr: float = 1e-3
    batch_records: int = 1
    mask_range: tuple = (0.1, 1.0)
    clip_norm: float | None = None

    def __post_init__(self):
        self.mask_range = tuple(float(r) for r in self.mask_range)
        lo, hi = self.mask_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError(f"mask_range must satisfy 0 <= lo <= hi <= 1, got {self.mask_range}")

    def to_dict(self):
        return {
            "epochs": self.epochs,
            "lr": self.lr,
            "batch_records": self.batch_records,
            "mask_range": list(self.mask_range),
            "clip_norm": self.clip_norm,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def loss_frame(model, obs_full, obs_masked, state):
    """One frame's RMSE on the full observed set, conditioned on the masked one.

    Returns (scalar loss tensor, advanced state). The summary comes from the
    masked subset; the loss is always scored against every pre-mask
    observation, which is what teaches reconstruction beyond the inputs.
    """
    z = model.summarize(obs_masked)
    state = model.advance(state, z, obs_full.t)
    pred = model.decode_coords(state, z, obs_full.coords)
    err = pred - ad.constant(obs_full.values, model.store.dtype)
    return ad.sqrt(ad.mean(ad.mul(err, err))), state


def record_loss(model, stream, mask_rates=None, mask_rng=None):
    """Mean frame loss over one record with full-sequence gradient flow."""
    state = model.init_state(stream.timestamps())
    total = None
    for m, obs in enumerate(stream.sets):
        if mask_rates is not None:
            masked = apply_training_mask(obs, mask_rates[m], mask_rng[m])
        else:
            masked = obs
        frame_l, state = loss_frame(model, obs, masked, state)
        if not np.isfinite(frame_l.data):
            raise TrainingDiverged(
                f"non-finite loss at record {stream.record_id!r}, frame {m}")
        total = frame_l if total is None else total + frame_l
    if total is None:
        raise ValueError(f"record {stream.record_id!r} has no frames")
    return ad.mul(total, 1.0 / len(stream.sets))


class Adam:
    """Adam with bias correction; moments keyed by parameter name."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, store, grads):
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in store.items():
            g = grads[name]
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            self.m[name] = m
            self.v[name] = v
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = p.data - self.lr * update


def clip_gradients(grads, max_norm):
    """Scale the whole gradient map so its global L2 norm is at most max_norm."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads, total
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}, total


def _mean_grads(maps):
    scale = 1.0 / len(maps)
    out = {}
    for name in maps[0]:
        acc = maps[0][name]
        for other in maps[1:]:
            acc = acc + other[name]
        out[name] = acc * scale
    return out


def train(model, streams, cfg, seed, optimizer=None, start_epoch=0, log_fh=None):
    """Optimize the model on the given streams; returns (optimizer, log rows).

    Mask rates are drawn per frame from U[mask_range]; subsets are drawn per
    (epoch, record, frame). With mask_range (1, 1) the mask keeps everything,
    which is the no-mask ablation.
    """
    if optimizer is None:
        optimizer = Adam(cfg.lr)
    lo, hi = cfg.mask_range
    rows = []
    for epoch in range(start_epoch, start_epoch + cfg.epochs):
        order = rngmod.stream(seed, "order", epoch).permutation(len(streams))
        epoch_losses = []
        for chunk_start in range(0, len(order), cfg.batch_records):
            batch = [streams[i] for i in order[chunk_start:chunk_start + cfg.batch_records]]
            maps = []
            losses = []
            for stream in batch:
                n_frames = len(stream.sets)
                rates = [
                    rngmod.stream(seed, "rate", epoch, stream.record_id, m).uniform(lo, hi)
                    for m in range(n_frames)
                ]
                subset_rngs = [
                    rngmod.stream(seed, "subset", epoch, stream.record_id, m)
                    for m in range(n_frames)
                ]
                loss = record_loss(model, stream, rates, subset_rngs)
                losses.append(float(loss.data))
                maps.append(ad.backward(loss, model.store))
            grads = _mean_grads(maps)
            if cfg.clip_norm is not None:
                grads, _ = clip_gradients(grads, cfg.clip_norm)
            optimizer.step(model.store, grads)
            row = {
                "epoch": epoch,
                "step": optimizer.step_count,
                "loss": sum(losses) / len(losses),
                "lr": optimizer.lr,
            }
            rows.append(row)
            epoch_losses.append(row["loss"])
            if log_fh is not None:
                log_fh.write(json.dumps(row) + "\n")
                log_fh.flush()
    return optimizer, rows


def dataset_time_scale(streams):
    """Median of per-record median steps; checkpoint metadata only."""
    med = [median_step(s.timestamps()) for s in streams if s.n_frames > 0]
    return float(np.median(med)) if med else 1.0


# --------------------------------------------------------------------------
# checkpoints


class LoadedCheckpoint(NamedTuple):
    model: StreamModel
    optimizer: Adam | None
    epochs_done: int
    time_scale: float
    meta: dict


def save_checkpoint(path, model, optimizer=None, epochs_done=0, time_scale=1.0, meta=None):
    """Versioned binary container; array bytes round-trip exactly."""
    names = model.store.names()
    dtype_str = np.dtype(model.store.dtype).str  # e.g. '<f8'
    header = {
        "model_config": model.config.to_dict(),
        "seed": model.seed,
        "params": [[n, list(model.store[n].data.shape)] for n in names],
        "dtype": dtype_str,
        "epochs_done": int(epochs_done),
        "time_scale": float(time_scale),
        "meta": meta or {},
        "adam": None,
    }
    if optimizer is not None:
        header["adam"] = {
            "lr": optimizer.lr,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
            "step_count": optimizer.step_count,
        }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIQ", CKPT_MAGIC, CKPT_VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(model.store[n].data, dtype=dtype_str).tobytes())
        if optimizer is not None:
            for n in names:
                fh.write(np.ascontiguousarray(
                    optimizer.m.get(n, np.zeros_like(model.store[n].data)),
                    dtype=dtype_str).tobytes())
            for n in names:
                fh.write(np.ascontiguousarray(
                    optimizer.v.get(n, np.zeros_like(model.store[n].data)),
                    dtype=dtype_str).tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 16:
        raise CheckpointFormatError(f"{path}: file too short for a checkpoint header")
    magic, version, blob_len = struct.unpack("<4sIQ", buf[:16])
    if magic != CKPT_MAGIC:
        raise CheckpointFormatError(
            f"{path}: bad magic {magic!r} at byte 0, expected {CKPT_MAGIC!r}")
    if version != CKPT_VERSION:
        raise CheckpointFormatError(
            f"{path}: unsupported checkpoint version {version}, loader supports {CKPT_VERSION}")
    if len(buf) < 16 + blob_len:
        raise CheckpointFormatError(f"{path}: truncated header at offset 16")
    header = json.loads(buf[16:16 + blob_len].decode("utf-8"))

    config = ModelConfig.from_dict(header["model_config"])
    model = StreamModel(config, seed=header["seed"])
    dtype = np.dtype(header["dtype"])
    off = 16 + blob_len
    arrays = {}
    for name, shape in header["params"]:
        size = int(np.prod(shape)) if shape else 1
        n_bytes = size * dtype.itemsize
        if off + n_bytes > len(buf):
            raise CheckpointFormatError(
                f"{path}: truncated while reading parameter {name!r}: needed {n_bytes} "
                f"bytes at offset {off}, file has {len(buf)}")
        arrays[name] = np.frombuffer(buf, dtype=dtype, count=size, offset=off).reshape(shape)
        off += n_bytes
    model.store.load_state(arrays)

    optimizer = None
    if header["adam"] is not None:
        a = header["adam"]
        optimizer = Adam(a["lr"], a["beta1"], a["beta2"], a["eps"])
        optimizer.step_count = a["step_count"]
        for moment in (optimizer.m, optimizer.v):
            for name, shape in header["params"]:
                size = int(np.prod(shape)) if shape else 1
                n_bytes = size * dtype.itemsize
                if off + n_bytes > len(buf):
                    raise CheckpointFormatError(
                        f"{path}: truncated while reading moments for {name!r}: needed "
                        f"{n_bytes} bytes at offset {off}, file has {len(buf)}")
                moment[name] = np.frombuffer(
                    buf, dtype=dtype, count=size, offset=off).reshape(shape).copy()
                off += n_bytes
    if off != len(buf):
        raise CheckpointFormatError(f"{path}: {len(buf) - off} trailing bytes at offset {off}")
    return LoadedCheckpoint(
        model=model,
        optimizer=optimizer,
        epochs_done=header["epochs_done"],
        time_scale=header["time_scale"],
        meta=header["meta"],
    )
