"""Experiment configuration read from JSON.

Every section and field is optional; omitted fields take the defaults
declared on the dataclasses below. Unknown sections or fields are rejected
with their dotted key path.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError
from .lcd import DistillConfig, StyleConfig, TeacherConfig
from .model import Arch
from .schedule import make_schedule

DEFAULT_BENCH_GRID = (("ddim", 32), ("dpm1", 16), ("dpm2", 8), ("consistency", 4))


@dataclass
class DataSection:
    kind: str = "mixture2d"
    n_classes: int = 8
    n_samples: int = 4096
    style_transform: str = "rotate90"


@dataclass
class ScheduleSection:
    kind: str = "cosine"
    N: int = 64
    eps_t: float = 0.002

    def build(self):
        return make_schedule(self.kind, N=self.N, eps_t=self.eps_t)


@dataclass
class ModelSection:
    hidden_width: int = 128
    depth: int = 3


@dataclass
class CodecSection:
    kind: str = "identity"
    latent_dim: int | None = None


@dataclass
class CombineSection:
    lambda1: float = 0.8
    lambda2: float = 1.0


@dataclass
class BenchSection:
    grid: list = field(default_factory=lambda: [list(p) for p in DEFAULT_BENCH_GRID])
    omega: float = 8.0
    n_samples: int = 4096


SECTIONS = {
    "data": DataSection,
    "schedule": ScheduleSection,
    "model": ModelSection,
    "codec": CodecSection,
    "teacher_train": TeacherConfig,
    "distill": DistillConfig,
    "style": StyleConfig,
    "combine": CombineSection,
    "bench": BenchSection,
}


def _build_section(name, cls, values):
    if not isinstance(values, dict):
        raise ConfigError(f"section {name!r} must be a JSON object")
    known = {f.name for f in fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(f"unknown config key {name}.{key}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {name!r}: {exc}") from None


@dataclass
class ExperimentConfig:
    data: DataSection
    schedule: ScheduleSection
    model: ModelSection
    codec: CodecSection
    teacher_train: TeacherConfig
    distill: DistillConfig
    style: StyleConfig
    combine: CombineSection
    bench: BenchSection
    seed: int = 0

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        for key in doc:
            if key not in SECTIONS and key != "seed":
                raise ConfigError(f"unknown config key {key}")
        seed = doc.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        sections = {n: _build_section(n, c, doc.get(n, {})) for n, c in SECTIONS.items()}
        cfg = cls(seed=seed, **sections)
        cfg.validate()
        return cfg

    @classmethod
    def default(cls):
        return cls.from_dict({})

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(doc)

    def to_dict(self):
        out = {n: asdict(getattr(self, n)) for n in SECTIONS}
        out["seed"] = self.seed
        return out

    def arch(self, data_dim):
        return Arch(data_dim=data_dim, n_classes=self.data.n_classes,
                    hidden=self.model.hidden_width, depth=self.model.depth)

    def bench_grid(self):
        return [(str(s), int(k)) for s, k in self.bench.grid]

    def validate(self):
        from .data import STYLE_TRANSFORMS
        from .solvers import KINDS

        if self.data.kind not in ("mixture2d", "image8x8"):
            raise ConfigError(f"data.kind must be mixture2d or image8x8, got {self.data.kind!r}")
        if self.data.style_transform not in STYLE_TRANSFORMS:
            raise ConfigError(f"unknown style transform {self.data.style_transform!r}")
        if self.data.n_samples < 1 or self.data.n_classes < 1:
            raise ConfigError("data.n_samples and data.n_classes must be positive")
        self.schedule.build()
        self.arch(2)
        if self.codec.kind not in ("identity", "linear"):
            raise ConfigError(f"codec.kind must be identity or linear, got {self.codec.kind!r}")
        self.teacher_train.validate()
        self.distill.validate(self.schedule.N)
        self.style.validate()
        for item in self.bench.grid:
            if not (isinstance(item, (list, tuple)) and len(item) == 2):
                raise ConfigError(f"bench.grid entries must be [solver, steps] pairs, got {item!r}")
            if item[0] not in KINDS:
                raise ConfigError(f"bench.grid: unknown solver {item[0]!r}")
            if not isinstance(item[1], int) or item[1] < 1:
                raise ConfigError(f"bench.grid: steps must be a positive integer, got {item[1]!r}")
        if self.bench.n_samples < 2:
            raise ConfigError("bench.n_samples must be >= 2")
