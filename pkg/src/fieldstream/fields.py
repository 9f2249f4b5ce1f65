"""Synthetic fields, sparse sampling, and the on-disk formats.

Dense ground truth lives in FieldRecord (binary container); what a model sees
is an ObservationStream (line-delimited JSON), produced by the sampling
functions. Generators are pure functions of configuration and seed. Grid
coordinates are normalized per mode to [0, 1]; index i of a mode with extent n
maps to i/(n-1), and denormalization recovers the index exactly by rounding.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import rng as rngmod
from .encoder import ObservationSet

MAX_EXTENT = 64
MAX_FRAMES = 48

MAGIC = b"FREC"
RECORD_VERSION = 1

STREAM_FIELDS = ("t", "coords", "values", "pattern", "rho", "record_id")


class RecordFormatError(ValueError):
    """Binary record container cannot be decoded."""


class StreamFormatError(ValueError):
    """Observation stream file cannot be decoded."""


def _round_half_up(x):
    return int(math.floor(x + 0.5))


# --------------------------------------------------------------------------
# dense records


@dataclass
class FieldRecord:
    """Dense ground truth: timestamps (M,) and values (M, *extents), float64."""

    record_id: str
    timestamps: np.ndarray
    values: np.ndarray
    _grid_coords: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.timestamps.ndim != 1:
            raise ValueError("timestamps must be one-dimensional")
        if self.values.ndim < 2 or self.values.shape[0] != self.timestamps.shape[0]:
            raise ValueError(
                f"values shape {self.values.shape} does not match "
                f"{self.timestamps.shape[0]} timestamps")
        if self.timestamps.size > 1 and np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if not np.isfinite(self.values).all():
            raise ValueError("field values must be finite")

    @property
    def extents(self):
        return self.values.shape[1:]

    @property
    def n_frames(self):
        return self.timestamps.shape[0]

    @property
    def n_modes(self):
        return len(self.extents)

    def normalized_axis(self, k):
        """Normalized coordinates of mode k's grid lines, shape (extent_k,)."""
        n = self.extents[k]
        if n == 1:
            return np.zeros(1)
        return np.arange(n, dtype=np.float64) / (n - 1)

    def grid_coords(self):
        """Normalized coordinates of every grid point, (G, K), row-major order."""
        if self._grid_coords is None:
            axes = [self.normalized_axis(k) for k in range(self.n_modes)]
            mesh = np.meshgrid(*axes, indexing="ij")
            self._grid_coords = np.stack([m.reshape(-1) for m in mesh], axis=1)
        return self._grid_coords

    def denormalize(self, coords):
        """Map normalized coordinates back to integer grid indices, exactly."""
        coords = np.asarray(coords, dtype=np.float64)
        scale = np.array([max(n - 1, 1) for n in self.extents], dtype=np.float64)
        idx = np.rint(coords * scale).astype(np.int64)
        if np.any(idx < 0) or np.any(idx >= np.array(self.extents)):
            raise ValueError("coordinates fall outside the grid")
        return idx

    def frame_values_at(self, m, flat_indices):
        return self.values[m].reshape(-1)[flat_indices]


# --------------------------------------------------------------------------
# generators


def _wrap(delta, n):
    # periodic displacement in index units, in [-n/2, n/2)
    return (delta + 0.5 * n) % n - 0.5 * n


def gaussian_mixture_frame(extents, t, blobs):
    """Evaluate a sum of periodic Gaussians at every grid point of one frame.

    Each blob is a dict with center, velocity, sigma, amp (centers and
    velocities are per-mode, index units per unit time). Used directly by
    tests that pin specific blob parameters.
    """
    grids = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in extents], indexing="ij")
    out = np.zeros(extents, dtype=np.float64)
    for blob in blobs:
        sq = np.zeros(extents, dtype=np.float64)
        for k, n in enumerate(extents):
            pos = blob["center"][k] + blob["velocity"][k] * t
            d = _wrap(grids[k] - pos, n)
            sq += d * d
        out += blob["amp"] * np.exp(-sq / (2.0 * blob["sigma"] ** 2))
    return out


def _advecting_gaussians(extents, timestamps, gen, params):
    n_blobs = int(params.get("n_blobs", 2))
    amp_lo, amp_hi = params.get("amp_range", (0.6, 1.2))
    sig_lo, sig_hi = params.get("sigma_range", (3.0, 5.5))
    speed = float(params.get("max_speed", 1.5))
    blobs = [
        {
            "center": [gen.uniform(0.0, n) for n in extents],
            "velocity": [gen.uniform(-speed, speed) for _ in extents],
            "sigma": gen.uniform(sig_lo, sig_hi),
            "amp": gen.uniform(amp_lo, amp_hi),
        }
        for _ in range(n_blobs)
    ]
    return np.stack([gaussian_mixture_frame(extents, t, blobs) for t in timestamps])


def _heat_blobs(extents, timestamps, gen, params):
    n_blobs = int(params.get("n_blobs", 3))
    amp_lo, amp_hi = params.get("amp_range", (0.6, 1.2))
    sig_lo, sig_hi = params.get("sigma_range", (2.0, 4.0))
    kappa = float(params.get("kappa", 0.6))
    centers = [[gen.uniform(0.0, n) for n in extents] for _ in range(n_blobs)]
    sigmas = [gen.uniform(sig_lo, sig_hi) for _ in range(n_blobs)]
    amps = [gen.uniform(amp_lo, amp_hi) for _ in range(n_blobs)]
    frames = []
    t0 = timestamps[0]
    for t in timestamps:
        blobs = []
        for c, s0, a0 in zip(centers, sigmas, amps):
            # diffusion widens each blob while conserving its mass
            s_t = math.sqrt(s0 * s0 + 2.0 * kappa * (t - t0))
            blobs.append({
                "center": c,
                "velocity": [0.0] * len(extents),
                "sigma": s_t,
                "amp": a0 * (s0 * s0) / (s_t * s_t),
            })
        frames.append(gaussian_mixture_frame(extents, 0.0, blobs))
    return np.stack(frames)


def _plane_waves(extents, timestamps, gen, params):
    n_waves = int(params.get("n_waves", 2))
    max_wavenumber = int(params.get("max_wavenumber", 3))
    omega_lo, omega_hi = params.get("omega_range", (0.2, 0.9))
    amp_lo, amp_hi = params.get("amp_range", (0.5, 1.0))
    grids = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in extents], indexing="ij")
    waves = [
        {
            # integer wavenumbers keep each wave periodic on the grid
            "k": [int(gen.integers(1, max_wavenumber + 1)) for _ in extents],
            "omega": gen.uniform(omega_lo, omega_hi),
            "phase": gen.uniform(0.0, 2.0 * math.pi),
            "amp": gen.uniform(amp_lo, amp_hi),
        }
        for _ in range(n_waves)
    ]
    frames = []
    for t in timestamps:
        frame = np.zeros(extents, dtype=np.float64)
        for w in waves:
            arg = np.zeros(extents, dtype=np.float64)
            for k, n in enumerate(extents):
                arg += w["k"][k] * grids[k] / n
            frame += w["amp"] * np.sin(2.0 * math.pi * arg - w["omega"] * t + w["phase"])
        frames.append(frame)
    return np.stack(frames)


GENERATORS = {
    "advecting-gaussians": _advecting_gaussians,
    "heat-blobs": _heat_blobs,
    "plane-waves": _plane_waves,
}


def make_timestamps(n_frames, gen=None, jitter=False):
    """Frame times 0, 1, 2, ... or jittered increments drawn from U[0.5, 1.5]."""
    if not jitter:
        return np.arange(n_frames, dtype=np.float64)
    if gen is None:
        raise ValueError("jittered timestamps need a generator")
    steps = gen.uniform(0.5, 1.5, size=max(n_frames - 1, 0))
    return np.concatenate([[0.0], np.cumsum(steps)])


def generate_records(generator, extents, n_frames, n_records, seed,
                     jitter=False, params=None):
    """Pure synthesis: same arguments always give the same records."""
    if generator not in GENERATORS:
        raise ValueError(f"unknown generator {generator!r}; options: {sorted(GENERATORS)}")
    extents = tuple(int(n) for n in extents)
    if not extents or any(n < 2 for n in extents):
        raise ValueError(f"every mode needs extent >= 2, got {extents}")
    if any(n > MAX_EXTENT for n in extents):
        raise ValueError(f"extents {extents} exceed the {MAX_EXTENT} per-mode limit")
    if not 1 <= n_frames <= MAX_FRAMES:
        raise ValueError(f"frame count must lie in [1, {MAX_FRAMES}], got {n_frames}")
    params = dict(params or {})
    fn = GENERATORS[generator]
    records = []
    for i in range(n_records):
        gen = rngmod.stream(seed, "gen", generator, i)
        timestamps = make_timestamps(n_frames, gen, jitter)
        values = fn(extents, timestamps, gen, params)
        records.append(FieldRecord(
            record_id=f"{generator}-s{seed}-r{i:04d}",
            timestamps=timestamps,
            values=values,
        ))
    return records


def split_records(records, n_train, n_test, seed):
    """Deterministic disjoint train/test split by record position."""
    if n_train + n_test > len(records):
        raise ValueError(
            f"cannot split {len(records)} records into {n_train} train + {n_test} test")
    order = rngmod.stream(seed, "split").permutation(len(records))
    train = [records[i] for i in sorted(order[:n_train])]
    test = [records[i] for i in sorted(order[n_train:n_train + n_test])]
    return train, test


# --------------------------------------------------------------------------
# sampling


@dataclass
class ObservationStream:
    """One record's observations in frame order; what inference consumes."""

    record_id: str | None
    pattern: str | None
    rho: float | None
    sets: list[ObservationSet]

    @property
    def n_frames(self):
        return len(self.sets)

    def timestamps(self):
        return np.array([s.t for s in self.sets])


def _check_rho(rho):
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"sampling fraction must lie in (0, 1], got {rho}")


def _observation_set(record, m, flat_indices):
    coords = record.grid_coords()[flat_indices]
    values = record.frame_values_at(m, flat_indices)
    return ObservationSet(t=float(record.timestamps[m]), coords=coords, values=values)


def sample_uniform(record, rho, seed, fixed_sensors=False):
    """Uniform point sampling: round(rho * G) points per frame, at least one.

    A fresh subset is drawn per frame unless fixed_sensors pins one subset
    for the whole record.
    """
    _check_rho(rho)
    total = int(np.prod(record.extents))
    count = max(1, _round_half_up(rho * total))
    fixed = None
    if fixed_sensors:
        fixed = np.sort(rngmod.stream(seed, "uniform", record.record_id)
                        .choice(total, size=count, replace=False))
    sets = []
    for m in range(record.n_frames):
        if fixed is not None:
            idx = fixed
        else:
            gen = rngmod.stream(seed, "uniform", record.record_id, m)
            idx = np.sort(gen.choice(total, size=count, replace=False))
        sets.append(_observation_set(record, m, idx))
    return ObservationStream(record.record_id, "uniform", float(rho), sets)


def sample_slab(record, rho, seed):
    """Slab sampling: whole contiguous slices along one random mode per frame.

    The slab holds round(rho * G / points-per-slice) slices, clamped to at
    least one, so its point count misses the rho budget by at most one slice.
    """
    _check_rho(rho)
    extents = record.extents
    total = int(np.prod(extents))
    flat = np.arange(total).reshape(extents)
    sets = []
    for m in range(record.n_frames):
        gen = rngmod.stream(seed, "slab", record.record_id, m)
        axis = int(gen.integers(len(extents)))
        n_axis = extents[axis]
        per_slice = total // n_axis
        width = max(1, min(n_axis, _round_half_up(rho * total / per_slice)))
        start = int(gen.integers(0, n_axis - width + 1))
        index = [slice(None)] * len(extents)
        index[axis] = slice(start, start + width)
        idx = flat[tuple(index)].reshape(-1)
        sets.append(_observation_set(record, m, idx))
    return ObservationStream(record.record_id, "slab", float(rho), sets)


SAMPLERS = {"uniform": sample_uniform, "slab": sample_slab}


def sample_stream(record, pattern, rho, seed, **kwargs):
    if pattern not in SAMPLERS:
        raise ValueError(f"unknown sampling pattern {pattern!r}; options: {sorted(SAMPLERS)}")
    return SAMPLERS[pattern](record, rho, seed, **kwargs)


# --------------------------------------------------------------------------
# stream files (line-delimited JSON)


def save_stream(stream, path):
    with open(path, "w", encoding="utf-8") as fh:
        for s in stream.sets:
            line = {
                "t": s.t,
                "coords": s.coords.tolist(),
                "values": s.values.tolist(),
                "pattern": stream.pattern,
                "rho": stream.rho,
                "record_id": stream.record_id,
            }
            fh.write(json.dumps(line, separators=(",", ":")) + "\n")


def load_stream(path):
    sets = []
    meta = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                raise StreamFormatError(f"{path}: blank line {lineno}")
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as e:
                raise StreamFormatError(f"{path}: line {lineno}: {e}") from None
            if not isinstance(obj, dict):
                raise StreamFormatError(f"{path}: line {lineno}: expected an object")
            unknown = set(obj) - set(STREAM_FIELDS)
            if unknown:
                raise StreamFormatError(
                    f"{path}: line {lineno}: unknown field {sorted(unknown)[0]!r}")
            missing = set(STREAM_FIELDS) - set(obj)
            if missing:
                raise StreamFormatError(
                    f"{path}: line {lineno}: missing field {sorted(missing)[0]!r}")
            this_meta = (obj["pattern"], obj["rho"], obj["record_id"])
            if meta is None:
                meta = this_meta
            elif meta != this_meta:
                raise StreamFormatError(
                    f"{path}: line {lineno}: metadata changes mid-stream")
            try:
                sets.append(ObservationSet(
                    t=float(obj["t"]),
                    coords=np.array(obj["coords"], dtype=np.float64).reshape(
                        len(obj["values"]), -1),
                    values=np.array(obj["values"], dtype=np.float64),
                ))
            except (TypeError, ValueError) as e:
                raise StreamFormatError(f"{path}: line {lineno}: {e}") from None
    if meta is None:
        return ObservationStream(None, None, None, [])
    pattern, rho, record_id = meta
    return ObservationStream(record_id, pattern, rho, sets)


# --------------------------------------------------------------------------
# record files (binary container)


def save_record(record, path):
    rid = record.record_id.encode("utf-8")
    header = struct.pack(
        "<4sHHIH", MAGIC, RECORD_VERSION, record.n_modes, record.n_frames, len(rid))
    extents = struct.pack(f"<{record.n_modes}I", *record.extents)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(rid)
        fh.write(extents)
        fh.write(np.ascontiguousarray(record.timestamps, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(record.values, dtype="<f8").tobytes())


class _Cursor:
    def __init__(self, buf, path):
        self.buf = buf
        self.path = path
        self.off = 0

    def read(self, n, what):
        if self.off + n > len(self.buf):
            raise RecordFormatError(
                f"{self.path}: truncated while reading {what}: needed {n} bytes "
                f"at offset {self.off}, file has {len(self.buf)}")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out


def load_record(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    cur = _Cursor(buf, path)
    magic, version, n_modes, n_frames, id_len = struct.unpack(
        "<4sHHIH", cur.read(14, "header"))
    if magic != MAGIC:
        raise RecordFormatError(f"{path}: bad magic {magic!r} at byte 0, expected {MAGIC!r}")
    if version != RECORD_VERSION:
        raise RecordFormatError(
            f"{path}: unsupported record version {version}, loader supports {RECORD_VERSION}")
    rid = cur.read(id_len, "record id").decode("utf-8")
    extents = struct.unpack(f"<{n_modes}I", cur.read(4 * n_modes, "extents"))
    timestamps = np.frombuffer(cur.read(8 * n_frames, "timestamps"), dtype="<f8")
    n_values = n_frames * int(np.prod(extents))
    values = np.frombuffer(cur.read(8 * n_values, "values"), dtype="<f8")
    if cur.off != len(buf):
        raise RecordFormatError(
            f"{path}: {len(buf) - cur.off} trailing bytes at offset {cur.off}")
    return FieldRecord(
        record_id=rid,
        timestamps=timestamps.copy(),
        values=values.reshape((n_frames, *extents)).copy(),
    )
