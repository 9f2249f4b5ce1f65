"""Command-line front end.

Every subcommand takes a JSON config (--config PATH or --preset NAME for the
packaged ones), applies any flag overrides, and records what it ran as a
manifest entry under the output directory. Exit codes: 0 on success, 1 on any
reported failure, 2 on usage errors (argparse's own convention).

Output layout under out_dir:

    manifest.json                       one entry appended per command
    data/records/<id>.rec               ground-truth records (train and test)
    data/streams/train/<id>.jsonl       training observation streams
    data/streams/test/<pattern>-<rho>/<id>.jsonl
    data/index.json                     split ids, grid, frame count
    checkpoint.fsck                     trained model + optimizer state
    train_log.jsonl                     one row per optimizer step
    eval/report-<pattern>-<rho>.json    per-record scores
    eval/summary.txt
    expressivity/result.json
    ablation/{results.json,table.txt,table.csv}
    timing/timing.json
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
import time
from importlib import resources
from pathlib import Path

from . import __version__
from .autodiff import kernels
from .config import ConfigError, load_config, parse_config
from .evaluate import (ablation_run, ablation_table, evaluate_records,
                       expressivity_experiment, process_stream, timing_probe,
                       write_frame_csv, write_pgm, MetricUndefinedError)
from .fields import (RecordFormatError, StreamFormatError, generate_records,
                     load_record, load_stream, sample_stream,
                     save_record, save_stream, split_records)
from .model import StreamModel
from .ssm import median_step
from .train import (CheckpointFormatError, TrainingDiverged, dataset_time_scale,
                    load_checkpoint, save_checkpoint, train)

import numpy as np


class CliError(RuntimeError):
    """A failure the command reports on stderr instead of as a traceback."""


# --------------------------------------------------------------------------
# config plumbing


def preset_names():
    root = resources.files("fieldstream.presets")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_preset_text(name):
    root = resources.files("fieldstream.presets")
    entry = root.joinpath(f"{name}.json")
    if not entry.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return entry.read_text(encoding="utf-8")


def resolve_config(args):
    """Config from --preset or --config, with --seed/--out flag overrides."""
    if getattr(args, "preset", None):
        obj = json.loads(load_preset_text(args.preset))
        if not isinstance(obj, dict):
            raise ConfigError(f"preset {args.preset!r}: top level must be an object")
    else:
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{args.config}: invalid JSON: {e}") from None
        if not isinstance(obj, dict):
            raise ConfigError(f"{args.config}: top level must be an object")
    if args.seed is not None:
        obj["seed"] = args.seed
    if args.out is not None:
        obj["out_dir"] = args.out
    return parse_config(obj)


def append_manifest(out_dir, command, cfg_raw):
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    entries = []
    if path.exists():
        try:
            entries = json.loads(path.read_text(encoding="utf-8"))
            if not isinstance(entries, list):
                entries = []
        except json.JSONDecodeError:
            entries = []
    entries.append({
        "command": command,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "build": {"version": __version__, "kernel_backend": kernels.backend()},
        "config": cfg_raw,
    })
    path.write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


# --------------------------------------------------------------------------
# dataset helpers shared by train / eval / ablate


def read_index(out_dir):
    path = out_dir / "data" / "index.json"
    if not path.exists():
        raise CliError(f"no dataset under {out_dir}; run gen-data first")
    return json.loads(path.read_text(encoding="utf-8"))


def load_train_streams(out_dir, index):
    stream_dir = out_dir / "data" / "streams" / "train"
    return [load_stream(stream_dir / f"{rid}.jsonl") for rid in index["train"]]


def load_test_pairs(out_dir, index, pattern, rho):
    stream_dir = out_dir / "data" / "streams" / "test" / f"{pattern}-{rho:g}"
    if not stream_dir.is_dir():
        raise CliError(f"no test streams under {stream_dir}; "
                       f"add [{pattern!r}, {rho}] to eval.patterns and rerun gen-data")
    rec_dir = out_dir / "data" / "records"
    pairs = []
    for rid in index["test"]:
        stream = load_stream(stream_dir / f"{rid}.jsonl")
        record = load_record(rec_dir / f"{rid}.rec")
        pairs.append((stream, record))
    return pairs


# --------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args):
    cfg = resolve_config(args).require("data")
    out = Path(cfg.out_dir)
    data = cfg.data
    total = data.train_records + data.test_records
    records = generate_records(data.generator, data.grid, data.frames, total,
                               cfg.seed, jitter=data.jitter_timestamps,
                               params=data.generator_params)
    train_recs, test_recs = split_records(records, data.train_records,
                                          data.test_records, cfg.seed)

    rec_dir = out / "data" / "records"
    rec_dir.mkdir(parents=True, exist_ok=True)
    for rec in records:
        save_record(rec, rec_dir / f"{rec.record_id}.rec")

    train_dir = out / "data" / "streams" / "train"
    train_dir.mkdir(parents=True, exist_ok=True)
    kwargs = {}
    if data.sampling.pattern == "uniform" and data.sampling.fixed_sensors:
        kwargs["fixed_sensors"] = True
    for rec in train_recs:
        stream = sample_stream(rec, data.sampling.pattern, data.sampling.rho,
                               cfg.seed, **kwargs)
        save_stream(stream, train_dir / f"{rec.record_id}.jsonl")

    patterns = cfg.eval.patterns if cfg.eval is not None else [
        (data.sampling.pattern, data.sampling.rho)]
    for pattern, rho in patterns:
        test_dir = out / "data" / "streams" / "test" / f"{pattern}-{rho:g}"
        test_dir.mkdir(parents=True, exist_ok=True)
        for rec in test_recs:
            stream = sample_stream(rec, pattern, rho, cfg.seed)
            save_stream(stream, test_dir / f"{rec.record_id}.jsonl")

    index = {
        "generator": data.generator,
        "grid": list(data.grid),
        "frames": data.frames,
        "train": [r.record_id for r in train_recs],
        "test": [r.record_id for r in test_recs],
        "test_patterns": [[p, r] for p, r in patterns],
    }
    (out / "data" / "index.json").write_text(
        json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    append_manifest(out, "gen-data", cfg.raw)
    print(f"wrote {total} records ({data.train_records} train / "
          f"{data.test_records} test) under {out / 'data'}")
    return 0


def cmd_train(args):
    cfg = resolve_config(args).require("data", "model", "train")
    out = Path(cfg.out_dir)
    index = read_index(out)
    streams = load_train_streams(out, index)
    model = StreamModel(cfg.model, seed=cfg.seed)
    print(f"model: {model.n_parameters} parameters, "
          f"{len(streams)} training streams, {cfg.train.epochs} epochs")
    start = time.perf_counter()
    with open(out / "train_log.jsonl", "w", encoding="utf-8") as log_fh:
        optimizer, rows = train(model, streams, cfg.train, seed=cfg.seed,
                                log_fh=log_fh)
    elapsed = time.perf_counter() - start
    meta = {"grid": index["grid"], "generator": index["generator"]}
    save_checkpoint(out / "checkpoint.fsck", model, optimizer=optimizer,
                    epochs_done=cfg.train.epochs,
                    time_scale=dataset_time_scale(streams), meta=meta)
    append_manifest(out, "train", cfg.raw)
    print(f"trained {cfg.train.epochs} epochs in {elapsed:.1f}s, "
          f"final loss {rows[-1]['loss']:.6f}; checkpoint at {out / 'checkpoint.fsck'}")
    return 0


def cmd_eval(args):
    cfg = resolve_config(args).require("eval")
    out = Path(cfg.out_dir)
    ckpt_path = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.fsck"
    if not ckpt_path.exists():
        raise CliError(f"checkpoint not found: {ckpt_path}")
    loaded = load_checkpoint(ckpt_path)
    index = read_index(out)
    eval_dir = out / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    summary = []
    for pattern, rho in cfg.eval.patterns:
        pairs = load_test_pairs(out, index, pattern, rho)
        dump_dir = eval_dir / "frames" / f"{pattern}-{rho:g}" if cfg.eval.dump_frames else None
        report = evaluate_records(loaded.model, pairs, pattern=pattern, rho=rho,
                                  dump_dir=dump_dir)
        report.save(eval_dir / f"report-{pattern}-{rho:g}.json")
        line = (f"{pattern}@{rho:g}: mean VRMSE {report.mean_vrmse:.4f} "
                f"({report.seconds_per_frame * 1e3:.2f} ms/frame, "
                f"{len(report.per_record)} records)")
        summary.append(line)
        print(line)
    (eval_dir / "summary.txt").write_text("\n".join(summary) + "\n", encoding="utf-8")
    append_manifest(out, "eval", cfg.raw)
    return 0


def cmd_infer(args):
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        raise CliError(f"checkpoint not found: {ckpt_path}")
    loaded = load_checkpoint(ckpt_path)
    stream = load_stream(Path(args.stream))
    if stream.n_frames == 0:
        raise CliError(f"{args.stream}: stream has no frames")
    if args.grid:
        try:
            extents = tuple(int(p) for p in args.grid.lower().split("x"))
        except ValueError:
            raise CliError(f"--grid expects INTxINT[xINT...], got {args.grid!r}") from None
    elif "grid" in loaded.meta:
        extents = tuple(loaded.meta["grid"])
    else:
        raise CliError("checkpoint carries no grid; pass --grid, e.g. --grid 32x32")

    axes = [np.arange(n, dtype=np.float64) / max(n - 1, 1) for n in extents]
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([g.reshape(-1) for g in mesh], axis=1)

    out = Path(args.out)
    frame_dir = out / "frames"
    frame_dir.mkdir(parents=True, exist_ok=True)

    def on_frame(m, pred):
        frame = pred.reshape(extents)
        write_frame_csv(frame_dir / f"frame_{m:04d}.csv", frame)
        write_pgm(frame_dir / f"frame_{m:04d}.pgm", frame)

    dt_ref = median_step(stream.timestamps())
    _, frame_seconds = process_stream(loaded.model, stream.sets, coords,
                                      dt_ref=dt_ref, on_frame=on_frame)
    info = {
        "checkpoint": str(ckpt_path),
        "stream": str(args.stream),
        "record_id": stream.record_id,
        "grid": list(extents),
        "frames": stream.n_frames,
        "mean_frame_seconds": float(np.mean(frame_seconds)),
    }
    (out / "infer.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n",
                                    encoding="utf-8")
    print(f"decoded {stream.n_frames} frames on a {'x'.join(map(str, extents))} grid "
          f"into {frame_dir}")
    return 0


def cmd_expressivity(args):
    cfg = resolve_config(args).require("expressivity")
    out = Path(cfg.out_dir)
    section = cfg.expressivity
    kwargs = {}
    if "grid" in section:
        kwargs["grid_n"] = int(section["grid"])
    for key in ("steps", "film_width", "n_freq"):
        if key in section:
            kwargs[key] = int(section[key])
    if "lr" in section:
        kwargs["lr"] = float(section["lr"])
    for key in ("ranks", "seeds", "embed_hidden", "readout_hidden"):
        if key in section:
            kwargs[key] = tuple(section[key])
    result = expressivity_experiment(**kwargs)
    exp_dir = out / "expressivity"
    exp_dir.mkdir(parents=True, exist_ok=True)
    (exp_dir / "result.json").write_text(
        json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    append_manifest(out, "expressivity", cfg.raw)
    print(f"modulated decoder median RMSE  {result.film_median:.6f}")
    print(f"multilinear decoder median RMSE {result.ftm_median:.6f}")
    print(f"multilinear evaluation ranks {result.ftm_ranks} "
          f"(target Gram det {result.det_exp:.3e})")
    return 0


def cmd_ablate(args):
    cfg = resolve_config(args).require("data", "model", "train", "eval")
    out = Path(cfg.out_dir)
    index = read_index(out)
    streams = load_train_streams(out, index)
    suites = [(pattern, rho, load_test_pairs(out, index, pattern, rho))
              for pattern, rho in cfg.eval.patterns]
    results = ablation_run(streams, suites, cfg.model, cfg.train, cfg.seed,
                           progress=print)
    abl_dir = out / "ablation"
    abl_dir.mkdir(parents=True, exist_ok=True)
    text, csv_text = ablation_table(results)
    (abl_dir / "table.txt").write_text(text, encoding="utf-8")
    (abl_dir / "table.csv").write_text(csv_text, encoding="utf-8")
    payload = {
        variant: {
            "mean_vrmse": entry["mean_vrmse"],
            "reports": [r.to_dict() for r in entry["reports"]],
        }
        for variant, entry in results.items()
    }
    (abl_dir / "results.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    append_manifest(out, "ablate", cfg.raw)
    print(text, end="")
    return 0


def cmd_timing(args):
    cfg = resolve_config(args)
    out = Path(cfg.out_dir)
    section = cfg.timing or {}
    lengths = tuple(int(t) for t in section.get("lengths", (16, 32, 64)))
    rho = float(section.get("rho", 0.05))
    if args.checkpoint:
        loaded = load_checkpoint(Path(args.checkpoint))
        model = loaded.model
        if "grid" in loaded.meta:
            extents = tuple(loaded.meta["grid"])
        elif cfg.data is not None:
            extents = cfg.data.grid
        else:
            raise CliError("checkpoint carries no grid and config has no data section")
    else:
        cfg.require("model")
        model = StreamModel(cfg.model, seed=cfg.seed)
        if cfg.data is None:
            raise CliError("without --checkpoint the config needs a data section for the grid")
        extents = cfg.data.grid
    rows = timing_probe(model, extents, lengths=lengths, rho=rho, seed=cfg.seed)
    timing_dir = out / "timing"
    timing_dir.mkdir(parents=True, exist_ok=True)
    (timing_dir / "timing.json").write_text(
        json.dumps(rows, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    append_manifest(out, "timing", cfg.raw)
    for row in rows:
        print(f"T={row['frames']:>3}: {row['total_seconds']:.3f}s total, "
              f"{row['per_frame_seconds'] * 1e3:.2f} ms/frame "
              f"(halves {row['first_half_mean'] * 1e3:.2f} / "
              f"{row['second_half_mean'] * 1e3:.2f} ms), "
              f"state {row['state_bytes']} bytes")
    return 0


# --------------------------------------------------------------------------
# parser


def add_config_args(sub):
    group = sub.add_mutually_exclusive_group(required=True)
    group.add_argument("--config", help="path to a JSON run configuration")
    group.add_argument("--preset", help="name of a packaged configuration")
    sub.add_argument("--seed", type=int, default=None, help="override config seed")
    sub.add_argument("--out", default=None, help="override config out_dir")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fieldstream",
        description="Streaming field reconstruction from sparse observations.")
    parser.add_argument("--version", action="version", version=f"fieldstream {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-data", help="synthesize records and observation streams")
    add_config_args(p)
    p.set_defaults(fn=cmd_gen_data)

    p = subs.add_parser("train", help="train a model on a generated dataset")
    add_config_args(p)
    p.set_defaults(fn=cmd_train)

    p = subs.add_parser("eval", help="score a checkpoint on held-out streams")
    add_config_args(p)
    p.add_argument("--checkpoint", default=None,
                   help="checkpoint path (default: out_dir/checkpoint.fsck)")
    p.set_defaults(fn=cmd_eval)

    p = subs.add_parser("infer", help="decode one stream to per-frame CSV and PGM files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--stream", required=True, help="observation stream (JSONL)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--grid", default=None,
                   help="query grid, e.g. 32x32 (default: from checkpoint)")
    p.set_defaults(fn=cmd_infer)

    p = subs.add_parser("expressivity",
                        help="fit both static decoders to a rank-breaking target")
    add_config_args(p)
    p.set_defaults(fn=cmd_expressivity)

    p = subs.add_parser("ablate", help="train and score every model variant")
    add_config_args(p)
    p.set_defaults(fn=cmd_ablate)

    p = subs.add_parser("timing", help="inference cost versus stream length")
    add_config_args(p)
    p.add_argument("--checkpoint", default=None,
                   help="time this checkpoint instead of a fresh model")
    p.set_defaults(fn=cmd_timing)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, ConfigError, RecordFormatError, StreamFormatError,
            CheckpointFormatError, TrainingDiverged, MetricUndefinedError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
