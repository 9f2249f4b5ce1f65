"""Run configuration: JSON in, validated dataclasses out.

Validation is strict at every level: any key the schema does not know is an
error naming the offending dotted path, so typos fail loudly instead of
silently running defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .fields import GENERATORS, SAMPLERS
from .model import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


MODEL_KEYS = set(ModelConfig.__dataclass_fields__)
TRAIN_KEYS = set(TrainConfig.__dataclass_fields__)
DATA_KEYS = {
    "generator", "grid", "frames", "train_records", "test_records",
    "jitter_timestamps", "generator_params", "sampling",
}
SAMPLING_KEYS = {"pattern", "rho", "fixed_sensors"}
EVAL_KEYS = {"patterns", "dump_frames"}
EXPR_KEYS = {
    "grid", "ranks", "steps", "lr", "seeds", "film_width", "n_freq",
    "embed_hidden", "readout_hidden",
}
TIMING_KEYS = {"lengths", "rho"}
TOP_KEYS = {"seed", "out_dir", "data", "model", "train", "eval", "expressivity", "timing"}

GENERATOR_PARAM_KEYS = {
    "advecting-gaussians": {"n_blobs", "amp_range", "sigma_range", "max_speed"},
    "heat-blobs": {"n_blobs", "amp_range", "sigma_range", "kappa"},
    "plane-waves": {"n_waves", "max_wavenumber", "omega_range", "amp_range"},
}


def _check_keys(obj, allowed, path):
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"unknown config key {path}.{key}" if path else
                              f"unknown config key {key}")


@dataclass
class SamplingConfig:
    pattern: str = "uniform"
    rho: float = 0.05
    fixed_sensors: bool = False

    def __post_init__(self):
        if self.pattern not in SAMPLERS:
            raise ConfigError(f"data.sampling.pattern: unknown pattern {self.pattern!r}")
        if not 0.0 < self.rho <= 1.0:
            raise ConfigError(f"data.sampling.rho must lie in (0, 1], got {self.rho}")


@dataclass
class DataConfig:
    generator: str = "advecting-gaussians"
    grid: tuple = (32, 32)
    frames: int = 16
    train_records: int = 20
    test_records: int = 4
    jitter_timestamps: bool = False
    generator_params: dict = None
    sampling: SamplingConfig = None

    def __post_init__(self):
        self.grid = tuple(int(g) for g in self.grid)
        if self.generator not in GENERATORS:
            raise ConfigError(f"data.generator: unknown generator {self.generator!r}")
        self.generator_params = dict(self.generator_params or {})
        allowed = GENERATOR_PARAM_KEYS[self.generator]
        _check_keys(self.generator_params, allowed, "data.generator_params")
        if self.sampling is None:
            self.sampling = SamplingConfig()


@dataclass
class EvalConfig:
    patterns: list = None
    dump_frames: bool = False

    def __post_init__(self):
        if self.patterns is None:
            self.patterns = [["uniform", 0.05]]
        cleaned = []
        for i, entry in enumerate(self.patterns):
            if not (isinstance(entry, (list, tuple)) and len(entry) == 2):
                raise ConfigError(f"eval.patterns[{i}]: expected [pattern, rho]")
            pattern, rho = entry
            if pattern not in SAMPLERS:
                raise ConfigError(f"eval.patterns[{i}]: unknown pattern {pattern!r}")
            cleaned.append((str(pattern), float(rho)))
        self.patterns = cleaned


@dataclass
class RunConfig:
    seed: int
    out_dir: str
    data: DataConfig | None
    model: ModelConfig | None
    train: TrainConfig | None
    eval: EvalConfig | None
    expressivity: dict | None
    timing: dict | None
    raw: dict

    def require(self, *sections):
        for name in sections:
            if getattr(self, name) is None:
                raise ConfigError(f"this command needs a {name!r} section in the config")
        return self


def parse_config(obj):
    """Validate a parsed JSON object and build the run configuration."""
    _check_keys(obj, TOP_KEYS, "")
    if "seed" not in obj:
        raise ConfigError("missing required key: seed")
    if "out_dir" not in obj:
        raise ConfigError("missing required key: out_dir")

    data = model = train_cfg = eval_cfg = None
    if "data" in obj:
        _check_keys(obj["data"], DATA_KEYS, "data")
        section = dict(obj["data"])
        if "sampling" in section:
            _check_keys(section["sampling"], SAMPLING_KEYS, "data.sampling")
            section["sampling"] = SamplingConfig(**section["sampling"])
        try:
            data = DataConfig(**section)
        except TypeError as e:
            raise ConfigError(f"data: {e}") from None
    if "model" in obj:
        _check_keys(obj["model"], MODEL_KEYS, "model")
        try:
            model = ModelConfig(**obj["model"])
        except (TypeError, ValueError) as e:
            raise ConfigError(f"model: {e}") from None
    if "train" in obj:
        _check_keys(obj["train"], TRAIN_KEYS, "train")
        try:
            train_cfg = TrainConfig(**obj["train"])
        except (TypeError, ValueError) as e:
            raise ConfigError(f"train: {e}") from None
    if "eval" in obj:
        _check_keys(obj["eval"], EVAL_KEYS, "eval")
        try:
            eval_cfg = EvalConfig(**obj["eval"])
        except TypeError as e:
            raise ConfigError(f"eval: {e}") from None
    expressivity = None
    if "expressivity" in obj:
        _check_keys(obj["expressivity"], EXPR_KEYS, "expressivity")
        expressivity = dict(obj["expressivity"])
    timing = None
    if "timing" in obj:
        _check_keys(obj["timing"], TIMING_KEYS, "timing")
        timing = dict(obj["timing"])

    return RunConfig(
        seed=int(obj["seed"]),
        out_dir=str(obj["out_dir"]),
        data=data,
        model=model,
        train=train_cfg,
        eval=eval_cfg,
        expressivity=expressivity,
        timing=timing,
        raw=obj,
    )


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return parse_config(obj)
