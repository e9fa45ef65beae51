"""Teacher training, latent consistency distillation and style fine-tuning.

All three loops train with Adam on float32 tensors and log
``{step, loss, wall_time}`` records. Distillation and style fine-tuning only
ever update LoRA factors; base weights are read, never written.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, DimensionError, TrainingError
from .lora import LoraDelta, capped_ranks, lora_init, trainable_adapter
from .model import Arch, Denoiser, cfg_compose, network, student_output
from .optim import AdamState, OptimizerError, adam_step
from .schedule import forward_noise
from .tensor import Tensor, grad_backward, huber_loss, mse_loss, no_grad

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6


@dataclass
class TeacherConfig:
    steps: int = 6000
    lr: float = 2e-3
    batch: int = 256
    cond_dropout: float = 0.1
    lr_decay: bool = True
    seed: int = 0

    def validate(self):
        if self.steps < 0 or self.batch < 1 or self.lr <= 0:
            raise ConfigError(f"invalid teacher config {self}")
        if not 0.0 <= self.cond_dropout < 1.0:
            raise ConfigError("cond_dropout must lie in [0, 1)")


@dataclass
class DistillConfig:
    k_skip: int = 4
    omega_min: float = 0.0
    omega_max: float = 8.0
    ema_decay: float = 0.95
    batch: int = 256
    steps: int = 3000
    loss: str = "huber"
    huber_delta: float = 0.1
    lr: float = 3e-3
    rank: int = 8
    solver: str = "ddim"
    lr_decay: bool = True
    seed: int = 0

    def validate(self, N):
        if not 1 <= self.k_skip <= N - 1:
            raise ConfigError(f"k_skip={self.k_skip} leaves no valid noise level on an N={N} grid")
        if not self.omega_min <= self.omega_max or not (math.isfinite(self.omega_min) and math.isfinite(self.omega_max)):
            raise ConfigError("guidance range needs finite omega_min <= omega_max")
        if self.omega_min < 0:
            raise ConfigError("omega_min must be >= 0")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ConfigError("ema_decay must lie in [0, 1)")
        if self.loss not in ("huber", "l2"):
            raise ConfigError(f"unknown loss kind {self.loss!r}")
        if self.solver not in ("ddim", "dpm2"):
            raise ConfigError(f"teacher solver must be 'ddim' or 'dpm2', got {self.solver!r}")
        if self.steps < 0 or self.batch < 1 or self.rank < 1 or self.lr <= 0 or self.huber_delta <= 0:
            raise ConfigError(f"invalid distillation config {self}")


@dataclass
class StyleConfig:
    steps: int = 3000
    lr: float = 2e-3
    batch: int = 256
    rank: int = 8
    cond_dropout: float = 0.1
    lr_decay: bool = True
    seed: int = 0

    def validate(self):
        if self.steps < 0 or self.batch < 1 or self.rank < 1 or self.lr <= 0:
            raise ConfigError(f"invalid style config {self}")


@dataclass
class LatentDataset:
    z: np.ndarray
    labels: np.ndarray
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.z.ndim != 2 or len(self.z) != len(self.labels):
            raise DimensionError("latent dataset needs (n, m) latents and n labels")

    def __len__(self):
        return len(self.z)

    def batch(self, rng, size):
        idx = rng.integers(0, len(self.z), size)
        return self.z[idx], self.labels[idx]


def encode_dataset(data, codec, source=None):
    """D_z = {(E(x), c)} for every (x, c) in the data."""
    x, labels = data
    return LatentDataset(codec.encode(x), labels, dict(source or {}, codec=codec.describe()))


# losses and averaging --------------------------------------------------------

def consistency_loss(a, b, kind="huber", delta=0.1):
    if a.shape != b.shape:
        raise DimensionError(f"consistency_loss: shapes {a.shape} and {b.shape} differ")
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    if kind == "l2":
        return mse_loss(a, b)
    if kind == "huber":
        return huber_loss(a, b, delta)
    raise ConfigError(f"unknown loss kind {kind!r}")


def ema_update(target, source, mu):
    """target' = mu * target + (1 - mu) * source, per parameter (returns new arrays).

    float64 targets stay float64; everything else is stored as float32.
    """
    if set(target) != set(source):
        raise KeyError(f"EMA structure mismatch: {sorted(set(target) ^ set(source))}")
    out = {}
    for k, v in target.items():
        s = getattr(source[k], "data", source[k])
        if np.shape(s) != np.shape(v):
            raise DimensionError(f"EMA shape mismatch for {k}: {np.shape(v)} vs {np.shape(s)}")
        if np.asarray(v).dtype == np.float64:
            out[k] = mu * np.asarray(v) + (1.0 - mu) * np.asarray(s, dtype=np.float64)
            continue
        nv = np.array(v, dtype=np.float32, copy=True)
        kernels.ema_update(nv, s, mu)
        out[k] = nv
    return out


def _lr_at(base_lr, step, total, decay):
    if not decay or total <= 1:
        return base_lr
    return base_lr * (0.1 + 0.9 * 0.5 * (1.0 + math.cos(math.pi * step / total)))


def _check_loss(value, step, what):
    if not math.isfinite(value):
        raise TrainingError(f"{what}: non-finite loss at step {step}")
    if value > DIVERGENCE_LIMIT:
        raise TrainingError(f"{what}: loss {value:.3g} exceeded {DIVERGENCE_LIMIT:g} at step {step} (diverged)")


def _adam(params, state, step, what):
    try:
        adam_step(params, state)
    except OptimizerError as exc:
        raise TrainingError(f"{what}: step {step}: {exc}") from exc


# teacher and style training ---------------------------------------------------

def diffusion_loss(arch, weights, schedule, z0, labels, rng, cond_dropout, adapters=()):
    """Noise-prediction MSE at uniform t with conditioning dropout to the null label."""
    n = len(z0)
    t = rng.uniform(schedule.eps_t, schedule.T, n)
    eps = rng.standard_normal(z0.shape).astype(np.float32)
    zt = forward_noise(z0, t, eps, schedule)
    lab = np.where(rng.random(n) < cond_dropout, arch.null_label, labels)
    pred = network(arch, weights, zt, t, lab, None, adapters)
    return mse_loss(pred, Tensor(eps))


def train_teacher(dataset, arch, schedule, cfg, seed=None, log_every=100):
    """Train a fresh denoiser with the noise-prediction objective."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    model = Denoiser.create(arch, seed=int(rng.integers(2**31)))
    params = {k: Tensor(v, requires_grad=True, name=k) for k, v in model.params.items()}
    state = AdamState.for_params(params, lr=cfg.lr)
    history = []
    start = time.perf_counter()
    for step in range(1, cfg.steps + 1):
        z0, labels = dataset.batch(rng, cfg.batch)
        loss = diffusion_loss(arch, params, schedule, z0, labels, rng, cfg.cond_dropout)
        value = float(loss.data)
        _check_loss(value, step, "teacher training")
        grad_backward(loss, params)
        state.lr = _lr_at(cfg.lr, step, cfg.steps, cfg.lr_decay)
        _adam(params, state, step, "teacher training")
        if step % log_every == 0 or step == cfg.steps:
            history.append({"step": step, "loss": value, "wall_time": time.perf_counter() - start})
    return Denoiser(arch, {k: p.data for k, p in params.items()}), history


def _fresh_delta(base, rank, seed, tag):
    return lora_init(base, capped_ranks(base, rank), seed, tag=tag)


def style_finetune_run(base, style_data, schedule, cfg, seed=None, log_every=100):
    """Fit a style LoRA on ``style_data`` with the teacher's denoising objective."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    delta = _fresh_delta(base, cfg.rank, int(rng.integers(2**31)), "style")
    lora = delta.trainable()
    state = AdamState.for_params(lora, lr=cfg.lr)
    history = []
    start = time.perf_counter()
    for step in range(1, cfg.steps + 1):
        z0, labels = style_data.batch(rng, cfg.batch)
        loss = diffusion_loss(base.arch, base.params, schedule, z0, labels, rng, cfg.cond_dropout,
                              adapters=[trainable_adapter(lora)])
        value = float(loss.data)
        _check_loss(value, step, "style fine-tuning")
        grad_backward(loss, lora)
        state.lr = _lr_at(cfg.lr, step, cfg.steps, cfg.lr_decay)
        _adam(lora, state, step, "style fine-tuning")
        if step % log_every == 0 or step == cfg.steps:
            history.append({"step": step, "loss": value, "wall_time": time.perf_counter() - start})
    return LoraDelta.from_trainable(lora, tag="style"), history


# consistency distillation -------------------------------------------------------

@dataclass
class DistillState:
    """Online LoRA tensors, their EMA copy and optimizer state."""

    lora: dict
    ema: dict
    adam: AdamState
    step: int = 0

    @classmethod
    def start(cls, teacher, cfg, seed):
        delta = _fresh_delta(teacher, cfg.rank, seed, "acceleration")
        lora = delta.trainable()
        return cls(lora, {k: v.data.copy() for k, v in lora.items()}, AdamState.for_params(lora, lr=cfg.lr))

    def ema_adapter(self):
        layers = {k.rsplit("/", 1)[0] for k in self.ema}
        return ({layer: (Tensor(self.ema[f"{layer}/B"]), Tensor(self.ema[f"{layer}/A"])) for layer in layers}, 1.0)


def sample_levels(rng, n, N, k_skip, omega_min, omega_max):
    """n ~ U{1..N-k_skip} (1-based grid index) and omega ~ U[omega_min, omega_max]."""
    if k_skip >= N:
        raise ConfigError(f"k_skip={k_skip} leaves no valid noise level on an N={N} grid")
    levels = rng.integers(1, N - k_skip + 1, n)
    omegas = rng.uniform(omega_min, omega_max, n) if omega_max > omega_min else np.full(n, float(omega_min))
    return levels, omegas


def teacher_jump(eps_fn, schedule, z, t_from, t_to, solver="ddim"):
    """One solver step per row from t_from to t_to.

    ``eps_fn(z, t)`` takes per-row times; for distillation it is the guided
    teacher with each row's label and guidance scale bound in.
    """
    col = lambda v: np.asarray(v, dtype=np.float64)[:, None]  # noqa: E731
    a_t, s_t = col(schedule.alpha(t_from)), col(schedule.sigma(t_from))
    a_s, s_s = col(schedule.alpha(t_to)), col(schedule.sigma(t_to))
    eps = np.asarray(eps_fn(z, t_from), dtype=np.float64)
    z64 = z.astype(np.float64)
    if solver == "ddim":
        x0 = (z64 - s_t * eps) / a_t
        return (a_s * x0 + s_s * eps).astype(np.float32)
    lt, ls = schedule.log_snr(t_from), schedule.log_snr(t_to)
    h = ls - lt
    s1 = schedule.inverse_log_snr(lt + 0.5 * h)
    u = (col(schedule.alpha(s1)) / a_t) * z64 - col(schedule.sigma(s1)) * np.expm1(0.5 * col(h)) * eps
    e1 = np.asarray(eps_fn(u.astype(np.float32), s1), dtype=np.float64)
    return ((a_s / a_t) * z64 - s_s * np.expm1(col(h)) * e1).astype(np.float32)


def lcd_train_step(teacher, schedule, state, batch, cfg, rng, lr=None):
    """One latent consistency distillation update; returns the batch loss."""
    z, labels = batch
    n = len(z)
    N = int(schedule.N)
    levels, omegas = sample_levels(rng, n, N, cfg.k_skip, cfg.omega_min, cfg.omega_max)
    grid = schedule.grid
    t_hi = grid[levels + cfg.k_skip - 1]
    t_lo = grid[levels - 1]
    eps = rng.standard_normal(z.shape).astype(np.float32)
    z_hi = forward_noise(z, t_hi, eps, schedule)
    guided = lambda zz, tt: teacher.guided_eps(zz, tt, labels, omegas)  # noqa: E731
    z_lo = teacher_jump(guided, schedule, z_hi, t_hi, t_lo, cfg.solver)
    with no_grad():
        target = student_output(teacher.arch, schedule, teacher.params, z_lo, t_lo, labels, omegas,
                                adapters=[state.ema_adapter()])
    pred = student_output(teacher.arch, schedule, teacher.params, z_hi, t_hi, labels, omegas,
                          adapters=[trainable_adapter(state.lora)])
    loss = consistency_loss(pred, Tensor(target.data), cfg.loss, cfg.huber_delta)
    value = float(loss.data)
    state.step += 1
    _check_loss(value, state.step, "distillation")
    grad_backward(loss, state.lora)
    if lr is not None:
        state.adam.lr = lr
    _adam(state.lora, state.adam, state.step, "distillation")
    for k, p in state.lora.items():
        kernels.ema_update(state.ema[k], p.data, cfg.ema_decay)
    return value


def distill_run(teacher, dataset, schedule, cfg, seed=None, log_every=100):
    """Distil the guided teacher into an acceleration LoRA; base weights stay untouched."""
    cfg.validate(int(schedule.N))
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    state = DistillState.start(teacher, cfg, int(rng.integers(2**31)))
    history = []
    start = time.perf_counter()
    for step in range(1, cfg.steps + 1):
        value = lcd_train_step(teacher, schedule, state, dataset.batch(rng, cfg.batch), cfg, rng,
                               lr=_lr_at(cfg.lr, step, cfg.steps, cfg.lr_decay))
        if step % log_every == 0 or step == cfg.steps:
            history.append({"step": step, "loss": value, "wall_time": time.perf_counter() - start})
    return LoraDelta.from_trainable(state.lora, tag="acceleration"), history


def config_dict(cfg):
    return asdict(cfg)
