"""Command-line pipeline: data, teacher, distillation, style, combination, sampling, benchmarks.

Every command reads ``--config`` (JSON, optional: defaults apply) and works
inside ``--out``::

    out/config.json              resolved configuration
    out/data/*.csv, data.json    generated splits and descriptor
    out/teacher.lclb             teacher parameters and codec
    out/acceleration.lclb        distilled LoRA delta
    out/style.lclb               style LoRA delta
    out/combined.lclb            merged parameters
    out/samples/                 CSV + SVG from ``sample``
    out/bench/                   report files from ``bench``
    out/logs/*.json              training logs (the only files with wall times)
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .bench import ModelBundle, emit_report, load_report, run_bench
from .checkpoint import check_delta_against, config_hash, load_checkpoint, save_checkpoint
from .codec import Codec, fit_codec
from .config import ExperimentConfig
from .data import generate, read_csv, write_csv, write_descriptor
from .errors import (CheckpointError, ConfigError, ContractError, DimensionError, MergeError,
                     PreconditionError, TrainingError)
from .lcd import distill_run, encode_dataset, style_finetune_run, train_teacher
from .lora import combine, lora_merge
from .model import Arch, Denoiser
from .solvers import ODE_KINDS, SolverSpec, consistency_sample, solve_trajectory

log = logging.getLogger("lcmlora")

COMMANDS = ("gen-data", "train-teacher", "distill", "finetune-style", "combine", "sample", "bench",
            "report", "pipeline")
STAGE_IDS = {"data": 1, "teacher": 2, "distill": 3, "style": 4, "sample": 5, "bench": 6}
SPLITS = ("train", "heldout", "style", "style_heldout")


def stage_seed(cfg, stage, extra=0):
    return int(np.random.SeedSequence([cfg.seed, STAGE_IDS[stage], extra]).generate_state(1)[0])


class Workspace:
    def __init__(self, out):
        self.out = out

    def path(self, *parts):
        return os.path.join(self.out, *parts)

    def require(self, *parts, hint):
        p = self.path(*parts)
        if not os.path.exists(p):
            raise PreconditionError(f"missing {p}; run '{hint}' first")
        return p

    def data(self, split):
        return read_csv(self.require("data", f"{split}.csv", hint="gen-data"))

    def write_log(self, stage, history):
        os.makedirs(self.path("logs"), exist_ok=True)
        with open(self.path("logs", f"{stage}.json"), "w") as fh:
            json.dump(history, fh, indent=1)


def _check_schedule(meta, schedule, path):
    if meta.get("schedule") != schedule.describe():
        raise PreconditionError(f"{path} was trained with schedule {meta.get('schedule')}, "
                                f"config has {schedule.describe()}")


def load_teacher(ws, schedule):
    path = ws.require("teacher.lclb", hint="train-teacher")
    params, _, meta = load_checkpoint(path)
    _check_schedule(meta, schedule, path)
    codec = Codec.from_parts(meta["codec"], params)
    weights = {k: v for k, v in params.items() if not k.startswith("codec/")}
    return Denoiser(Arch(**meta["arch"]), weights), codec, meta


def load_delta(path, name, base):
    _, deltas, _ = load_checkpoint(path)
    if name not in deltas:
        raise CheckpointError(f"{path} holds no delta named {name!r} (found {sorted(deltas)})")
    check_delta_against(deltas[name], base.params)
    return deltas[name]


def _losses(history):
    return [{"step": h["step"], "loss": h["loss"]} for h in history]


# commands ------------------------------------------------------------------------

def cmd_gen_data(cfg, ws, args):
    splits = generate(cfg.data.kind, cfg.data.n_samples, cfg.data.n_classes, stage_seed(cfg, "data"),
                      cfg.data.style_transform)
    os.makedirs(ws.path("data"), exist_ok=True)
    for name in SPLITS:
        write_csv(ws.path("data", f"{name}.csv"), *splits[name])
    write_descriptor(ws.path("data", "data.json"), {
        "kind": cfg.data.kind, "n_classes": cfg.data.n_classes, "n_samples": cfg.data.n_samples,
        "style_transform": cfg.data.style_transform, "seed": cfg.seed,
        "dim": int(splits["train"][0].shape[1]), "splits": list(SPLITS)})


def cmd_train_teacher(cfg, ws, args):
    x, labels = ws.data("train")
    codec = fit_codec(cfg.codec.kind, x, cfg.codec.latent_dim)
    dataset = encode_dataset((x, labels), codec)
    schedule = cfg.schedule.build()
    arch = cfg.arch(codec.latent_dim)
    teacher, history = train_teacher(dataset, arch, schedule, cfg.teacher_train, seed=stage_seed(cfg, "teacher"))
    ws.write_log("teacher", history)
    params = dict(teacher.params, **codec.tensors())
    save_checkpoint(ws.path("teacher.lclb"), params, metadata={
        "kind": "teacher", "arch": arch.to_dict(), "codec": codec.describe(),
        "schedule": schedule.describe(), "config_hash": config_hash(cfg.to_dict()),
        "train": _losses(history)})


def cmd_distill(cfg, ws, args):
    schedule = cfg.schedule.build()
    teacher, codec, _ = load_teacher(ws, schedule)
    dataset = encode_dataset(ws.data("train"), codec)
    delta, history = distill_run(teacher, dataset, schedule, cfg.distill, seed=stage_seed(cfg, "distill"))
    ws.write_log("distill", history)
    save_checkpoint(ws.path("acceleration.lclb"), deltas={"acceleration": delta}, metadata={
        "kind": "delta", "schedule": schedule.describe(), "config_hash": config_hash(cfg.to_dict()),
        "train": _losses(history)})


def cmd_finetune_style(cfg, ws, args):
    schedule = cfg.schedule.build()
    teacher, codec, _ = load_teacher(ws, schedule)
    dataset = encode_dataset(ws.data("style"), codec)
    delta, history = style_finetune_run(teacher, dataset, schedule, cfg.style, seed=stage_seed(cfg, "style"))
    ws.write_log("style", history)
    save_checkpoint(ws.path("style.lclb"), deltas={"style": delta}, metadata={
        "kind": "delta", "schedule": schedule.describe(), "config_hash": config_hash(cfg.to_dict()),
        "train": _losses(history)})


def _parse_delta_args(ws, cfg, items):
    """``PATH[:NAME][=COEF]`` entries; default is style@lambda1 + acceleration@lambda2."""
    if not items:
        return [(ws.require("style.lclb", hint="finetune-style"), "style", cfg.combine.lambda1),
                (ws.require("acceleration.lclb", hint="distill"), "acceleration", cfg.combine.lambda2)]
    out = []
    for item in items:
        spec, _, coef = item.partition("=")
        path, _, name = spec.partition(":")
        try:
            c = float(coef) if coef else 1.0
        except ValueError:
            raise ConfigError(f"bad coefficient in --delta {item!r}") from None
        if not os.path.exists(path):
            raise PreconditionError(f"missing delta checkpoint {path}")
        if not name:
            _, deltas, _ = load_checkpoint(path)
            if len(deltas) != 1:
                raise ConfigError(f"{path} holds {len(deltas)} deltas; name one with PATH:NAME")
            name = next(iter(deltas))
        out.append((path, name, c))
    return out


def cmd_combine(cfg, ws, args):
    schedule = cfg.schedule.build()
    teacher, codec, meta = load_teacher(ws, schedule)
    pairs = [(load_delta(p, n, teacher), c) for p, n, c in _parse_delta_args(ws, cfg, args.delta)]
    merged = lora_merge(teacher, combine(pairs))
    out = args.output or ws.path("combined.lclb")
    save_checkpoint(out, dict(merged.params, **codec.tensors()), metadata={
        "kind": "merged", "arch": meta["arch"], "codec": meta["codec"], "schedule": schedule.describe(),
        "components": [{"path": os.path.basename(p), "name": n, "coefficient": c}
                       for p, n, c in _parse_delta_args(ws, cfg, args.delta)]})
    return out


def _model_for(ws, schedule, which):
    teacher, codec, _ = load_teacher(ws, schedule)
    if which == "teacher":
        return teacher, codec
    if which == "student":
        acc = load_delta(ws.require("acceleration.lclb", hint="distill"), "acceleration", teacher)
        return lora_merge(teacher, [(acc, 1.0)]), codec
    if which == "combined":
        params, _, meta = load_checkpoint(ws.require("combined.lclb", hint="combine"))
        _check_schedule(meta, schedule, "combined.lclb")
        return Denoiser(Arch(**meta["arch"]), {k: v for k, v in params.items() if not k.startswith("codec/")}), codec
    if which == "style-teacher":
        sty = load_delta(ws.require("style.lclb", hint="finetune-style"), "style", teacher)
        return lora_merge(teacher, [(sty, 1.0)]), codec
    raise ConfigError(f"unknown model {which!r}")


def cmd_sample(cfg, ws, args):
    schedule = cfg.schedule.build()
    kind = args.solver
    which = args.model or ("student" if kind == "consistency" else "teacher")
    model, codec = _model_for(ws, schedule, which)
    steps = args.steps or dict(cfg.bench_grid()).get(kind, 4)
    omega = cfg.bench.omega if args.omega is None else args.omega
    n = args.n or cfg.bench.n_samples
    seed = stage_seed(cfg, "sample")
    labels = np.arange(n) % model.arch.n_classes if args.label is None else np.full(n, args.label)
    if kind in ODE_KINDS:
        z_T = np.random.default_rng(seed).standard_normal((n, model.arch.data_dim)).astype(np.float32)
        z = solve_trajectory(model, SolverSpec(kind, steps, omega), z_T, labels, schedule).endpoint
    else:
        z = consistency_sample(model, steps, labels, omega, schedule, seed)
    x = codec.decode(z)
    os.makedirs(ws.path("samples"), exist_ok=True)
    stem = ws.path("samples", f"{which}_{kind}_{steps}")
    write_csv(stem + ".csv", x, labels)
    from .bench import BenchRow, _scatter

    ref = ws.data("heldout")[0] if os.path.exists(ws.path("data", "heldout.csv")) else x
    _scatter(stem + ".svg", BenchRow(kind, steps, 1.0, 0.0, 0.0, x, labels), ref, f"{which} {kind} {steps} steps")


def style_comparison(cfg, ws, schedule):
    """Style-teacher DDIM, combined model and base student, all scored against held-out style data."""
    teacher, codec, _ = load_teacher(ws, schedule)
    acc = load_delta(ws.require("acceleration.lclb", hint="distill"), "acceleration", teacher)
    sty = load_delta(ws.require("style.lclb", hint="finetune-style"), "style", teacher)
    ref = ws.data("style_heldout")
    grid = dict(cfg.bench_grid())
    entries = {
        "style_teacher": (ModelBundle(schedule, teacher=lora_merge(teacher, [(sty, 1.0)]), codec=codec),
                          ("ddim", grid.get("ddim", 32))),
        "combined": (ModelBundle(schedule, student=lora_merge(teacher, combine(
            [(sty, cfg.combine.lambda1), (acc, cfg.combine.lambda2)])), codec=codec),
                     ("consistency", grid.get("consistency", 4))),
        "base_student": (ModelBundle(schedule, student=lora_merge(teacher, [(acc, 1.0)]), codec=codec),
                         ("consistency", grid.get("consistency", 4))),
    }
    reports = {}
    for name, (bundle, cell) in entries.items():
        rep = run_bench(bundle, [cell], ref, cfg.bench.n_samples, cfg.bench.omega, stage_seed(cfg, "bench"),
                        {"reference": "style_heldout", "model": name})
        emit_report(rep, ws.path("bench"), reference=ref[0], stem=f"style_{name}")
        reports[name] = rep
    return reports


def cmd_bench(cfg, ws, args):
    schedule = cfg.schedule.build()
    teacher, codec, _ = load_teacher(ws, schedule)
    grid = cfg.bench_grid()
    student = None
    if any(k == "consistency" for k, _ in grid):
        acc = load_delta(ws.require("acceleration.lclb", hint="distill"), "acceleration", teacher)
        student = lora_merge(teacher, [(acc, 1.0)])
    with open(ws.require("data", "data.json", hint="gen-data")) as fh:
        descriptor = json.load(fh)
    ref = ws.data("heldout")
    report = run_bench(ModelBundle(schedule, teacher, student, codec), grid, ref, cfg.bench.n_samples,
                       cfg.bench.omega, stage_seed(cfg, "bench"), descriptor)
    emit_report(report, ws.path("bench"), reference=ref[0])
    out = {"main": report}
    if os.path.exists(ws.path("style.lclb")):
        out.update(style_comparison(cfg, ws, schedule))
    return out


def cmd_report(cfg, ws, args):
    path = ws.require("bench", "report.json", hint="bench")
    lines = ["| model | solver | steps | time (s) | FD | SW |", "|---|---|---|---|---|---|"]
    sources = [("base", path)]
    for name in ("style_teacher", "combined", "base_student"):
        p = ws.path("bench", f"style_{name}.json")
        if os.path.exists(p):
            sources.append((name, p))
    for name, p in sources:
        for rep in load_report(p)["reports"]:
            for r in rep["rows"]:
                lines.append(f"| {name} | {r['solver']} | {r['steps']} | {r['wall_time']:.3f} | "
                             f"{r['fd']:.4f} | {r['sw']:.4f} |")
    text = "\n".join(lines) + "\n"
    with open(ws.path("summary.md"), "w") as fh:
        fh.write(text)
    sys.stdout.write(text)


def cmd_pipeline(cfg, ws, args):
    for fn in (cmd_gen_data, cmd_train_teacher, cmd_distill, cmd_finetune_style, cmd_combine, cmd_bench,
               cmd_report):
        log.info("pipeline: %s", fn.__name__[4:].replace("_", "-"))
        fn(cfg, ws, args)


HANDLERS = {
    "gen-data": cmd_gen_data, "train-teacher": cmd_train_teacher, "distill": cmd_distill,
    "finetune-style": cmd_finetune_style, "combine": cmd_combine, "sample": cmd_sample,
    "bench": cmd_bench, "report": cmd_report, "pipeline": cmd_pipeline,
}


def build_parser():
    p = argparse.ArgumentParser(prog="lcmlora", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="experiment config JSON (defaults apply when omitted)")
    p.add_argument("--out", required=True, help="working directory for artifacts")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--delta", action="append", help="combine: PATH[:NAME][=COEF], repeatable")
    p.add_argument("--output", help="combine: output checkpoint path")
    p.add_argument("--solver", default="consistency", help="sample: solver kind")
    p.add_argument("--steps", type=int, help="sample: step count")
    p.add_argument("--omega", type=float, help="sample: guidance scale")
    p.add_argument("--n", type=int, help="sample: number of samples")
    p.add_argument("--label", type=int, help="sample: fixed class label")
    p.add_argument("--model", choices=("teacher", "student", "combined", "style-teacher"),
                   help="sample: which model to draw from")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def load_config(args):
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig.default()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg.seed = args.seed
    return cfg


EXPECTED_ERRORS = (ConfigError, PreconditionError, CheckpointError, MergeError, TrainingError,
                   DimensionError, ContractError, OSError, ValueError, KeyError)


def run_command(argv):
    """Run one command; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args)
        os.makedirs(args.out, exist_ok=True)
        ws = Workspace(args.out)
        with open(ws.path("config.json"), "w") as fh:
            json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        HANDLERS[args.command](cfg, ws, args)
    except EXPECTED_ERRORS as exc:
        msg = str(exc).replace("\n", " ")
        print(f"lcmlora {args.command}: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2 if isinstance(exc, (ConfigError, PreconditionError)) else 1
    return 0


def main(argv=None):
    sys.exit(run_command(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
