"""Timed sampler benchmarks and report files.

Quality numbers compare decoded samples with held-out data of the same
class: ``fd`` and ``sw`` are averages over classes of the per-class
Frechet distance and sliced Wasserstein distance.
"""

from __future__ import annotations

import csv
import json
import os
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .metrics import conditional_frechet_distance, conditional_sliced_wasserstein
from .model import Denoiser
from .solvers import ODE_KINDS, SolverSpec, consistency_sample, solve_trajectory

# one timed sampling loop at a time, process-wide
TIMING_LOCK = threading.Lock()

CSV_HEADER = ("solver", "steps", "time_s", "fd", "sw")


@dataclass
class ModelBundle:
    schedule: object
    teacher: Denoiser | None = None
    student: Denoiser | None = None
    codec: object = None
    adapters: tuple = ()


@dataclass
class BenchRow:
    solver: str
    steps: int
    wall_time: float
    fd: float
    sw: float
    samples: np.ndarray = field(default=None, repr=False, compare=False)
    labels: np.ndarray = field(default=None, repr=False, compare=False)

    def to_dict(self):
        return {"solver": self.solver, "steps": self.steps, "wall_time": self.wall_time,
                "fd": self.fd, "sw": self.sw}


@dataclass
class BenchReport:
    rows: list
    metadata: dict

    def __post_init__(self):
        for r in self.rows:
            if not r.wall_time > 0 or r.fd < 0 or r.sw < 0:
                raise ValueError(f"invalid bench row {r}")
        self.rows = sorted(self.rows, key=lambda r: (r.solver, r.steps))

    def row(self, solver, steps=None):
        for r in self.rows:
            if r.solver == solver and (steps is None or r.steps == steps):
                return r
        raise KeyError(f"no bench row for {solver}@{steps}")

    def to_dict(self):
        return {"metadata": self.metadata, "rows": [r.to_dict() for r in self.rows]}


def _labels_for(ref_labels, n):
    reps = -(-n // len(ref_labels))
    return np.tile(np.asarray(ref_labels), reps)[:n]


def _draw(bundle, spec, labels, seed):
    """Run one sampling loop; returns (latent samples, timed wall seconds)."""
    n = len(labels)
    if spec.kind in ODE_KINDS:
        if bundle.teacher is None:
            raise ConfigError(f"{spec.kind} benchmark needs a teacher model")
        z_T = np.random.default_rng(seed).standard_normal((n, bundle.teacher.arch.data_dim)).astype(np.float32)
        tr = solve_trajectory(bundle.teacher, spec, z_T, labels, bundle.schedule, bundle.adapters)
        return tr.endpoint, tr.wall_time
    if spec.kind == "consistency":
        if bundle.student is None:
            raise ConfigError("consistency benchmark needs a distilled student model")
        tr = consistency_sample(bundle.student, spec.steps, labels, spec.omega, bundle.schedule, seed,
                                bundle.adapters, return_trajectory=True)
        return tr.endpoint, tr.wall_time
    raise ConfigError(f"unknown solver kind {spec.kind!r}")


def bench_sampler(bundle, spec, dataset, n_samples, seed, n_projections=64):
    """Time one sampler at ``spec`` and score it against ``dataset = (x, labels)``."""
    ref_x, ref_labels = dataset
    labels = _labels_for(ref_labels, int(n_samples))
    with TIMING_LOCK:
        _draw(bundle, spec, labels[: min(16, len(labels))], seed)  # warm-up
        z, wall = _draw(bundle, spec, labels, seed)
    x = bundle.codec.decode(z) if bundle.codec is not None else z
    fd = conditional_frechet_distance(x, labels, ref_x, ref_labels)
    sw = conditional_sliced_wasserstein(x, labels, ref_x, ref_labels, n_projections, seed)
    return BenchRow(spec.kind, int(spec.steps), float(wall), float(fd), float(sw), x, labels)


def run_bench(bundle, grid, dataset, n_samples, omega, seed, descriptor=None):
    rows = [bench_sampler(bundle, SolverSpec(kind, steps, omega), dataset, n_samples, seed)
            for kind, steps in grid]
    meta = {"seed": seed, "omega": omega, "n_samples": int(n_samples),
            "dataset": descriptor or {}, "metric": "class-conditional mean"}
    return BenchReport(rows, meta)


def _scatter(path, row, reference, title):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "lcmlora"
    x, ref = row.samples, reference
    if x.shape[1] > 2:
        mean = ref.mean(axis=0)
        _, _, vt = np.linalg.svd(ref - mean, full_matrices=False)
        x, ref = (x - mean) @ vt[:2].T, (ref - mean) @ vt[:2].T
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.scatter(ref[:, 0], ref[:, 1], s=2, c="#999999", label="real")
    ax.scatter(x[:, 0], x[:, 1], s=2, c="#c0392b", label="generated")
    ax.set_title(title, fontsize=9)
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize=7, markerscale=4)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_report(reports, out_dir, reference=None, stem="report"):
    """Write ``<stem>.json``, ``<stem>.csv`` and one SVG scatter per row."""
    if isinstance(reports, BenchReport):
        reports = [reports]
    if not reports:
        raise ValueError("emit_report needs at least one report")
    os.makedirs(out_dir, exist_ok=True)
    doc = {"reports": [r.to_dict() for r in reports]}
    with open(os.path.join(out_dir, f"{stem}.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, f"{stem}.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for rep in reports:
            for r in rep.rows:
                w.writerow([r.solver, r.steps, repr(r.wall_time), repr(r.fd), repr(r.sw)])
    written = []
    for rep in reports:
        for r in rep.rows:
            if r.samples is None:
                continue
            path = os.path.join(out_dir, f"{stem}_{r.solver}_{r.steps}.svg")
            ref = reference if reference is not None else r.samples
            _scatter(path, r, np.asarray(ref), f"{r.solver} {r.steps} steps  FD {r.fd:.3f}")
            written.append(path)
    return written


def load_report(path):
    with open(path) as fh:
        return json.load(fh)
