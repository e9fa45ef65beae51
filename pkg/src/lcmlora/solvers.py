"""Probability-flow ODE solvers and the multistep consistency sampler.

An ``eps_fn(z, t)`` callable supplies the (already guided) noise prediction.
All step rules run in float64 and return arrays in the input dtype.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .model import Denoiser

ODE_KINDS = ("ddim", "dpm1", "dpm2", "dpmpp2")
KINDS = ODE_KINDS + ("consistency",)
MAX_CONSISTENCY_STEPS = 8


class OrderingError(ValueError):
    """A step was asked to move forward in time."""


@dataclass(frozen=True)
class SolverSpec:
    kind: str
    steps: int
    omega: float = 8.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown solver kind {self.kind!r}; expected one of {KINDS}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ConfigError(f"solver steps must be a positive integer, got {self.steps}")
        if self.kind == "consistency" and self.steps > MAX_CONSISTENCY_STEPS:
            raise ConfigError(f"consistency sampler supports 1..{MAX_CONSISTENCY_STEPS} steps, got {self.steps}")
        if not np.isfinite(self.omega):
            raise ConfigError("guidance scale must be finite")


@dataclass
class Trajectory:
    times: list
    states: list
    wall_time: float = 0.0
    nfe: int = 0

    @property
    def endpoint(self):
        return self.states[-1]


def _check_order(t, s):
    if s > t:
        raise OrderingError(f"step must go backward in time, got t={t} -> s={s}")


def _out(x, like):
    return x.astype(like.dtype) if like.dtype != np.float64 else x


def ddim_step(z_t, t, s, eps, schedule):
    """Deterministic DDIM: x0 = (z_t - sigma_t eps) / alpha_t; z_s = alpha_s x0 + sigma_s eps."""
    _check_order(t, s)
    z_t = np.asarray(z_t)
    eps = np.asarray(eps)
    if eps.shape != z_t.shape:
        raise DimensionError(f"ddim_step: eps {eps.shape} does not match z {z_t.shape}")
    if s == t:
        return z_t.copy()
    return _out(ddim_update(z_t, eps, schedule.alpha(t), schedule.sigma(t),
                            schedule.alpha(s), schedule.sigma(s)), z_t)


def ddim_update(z_t, eps, alpha_t, sigma_t, alpha_s, sigma_s):
    """DDIM step from explicit marginal coefficients."""
    z = np.asarray(z_t, dtype=np.float64)
    e = np.asarray(eps, dtype=np.float64)
    x0 = (z - sigma_t * e) / alpha_t
    return alpha_s * x0 + sigma_s * e


def dpm1_step(z_t, t, s, eps, schedule):
    """First-order exponential integrator in log-SNR (the DPM-Solver-1 update)."""
    _check_order(t, s)
    z_t = np.asarray(z_t)
    if s == t:
        return z_t.copy()
    e = eps(z_t, t) if callable(eps) else eps
    e = np.asarray(e, dtype=np.float64)
    if e.shape != z_t.shape:
        raise DimensionError(f"dpm1_step: eps {e.shape} does not match z {z_t.shape}")
    h = schedule.log_snr(s) - schedule.log_snr(t)
    z = (schedule.alpha(s) / schedule.alpha(t)) * z_t.astype(np.float64) - schedule.sigma(s) * np.expm1(h) * e
    return _out(z, z_t)


def _midpoint(schedule, t, s):
    lt, ls = schedule.log_snr(t), schedule.log_snr(s)
    h = ls - lt
    return h, float(schedule.inverse_log_snr(lt + 0.5 * h))


def dpm2_step(z_t, t, s, eps_fn, schedule, eps_t=None):
    """Second-order singlestep exponential integrator (noise-prediction form).

    One extra evaluation at the log-SNR midpoint; defines DPM-Solver-2.
    """
    _check_order(t, s)
    z_t = np.asarray(z_t)
    if s == t:
        return z_t.copy()
    z = z_t.astype(np.float64)
    h, s1 = _midpoint(schedule, t, s)
    e0 = np.asarray(eps_fn(z_t, t) if eps_t is None else eps_t, dtype=np.float64)
    a_t = schedule.alpha(t)
    u = (schedule.alpha(s1) / a_t) * z - schedule.sigma(s1) * np.expm1(0.5 * h) * e0
    e1 = np.asarray(eps_fn(_out(u, z_t), s1), dtype=np.float64)
    return _out((schedule.alpha(s) / a_t) * z - schedule.sigma(s) * np.expm1(h) * e1, z_t)


def dpmpp2_step(z_t, t, s, eps_fn, schedule, eps_t=None):
    """Second-order singlestep integrator in data-prediction form (DPM-Solver++(2S))."""
    _check_order(t, s)
    z_t = np.asarray(z_t)
    if s == t:
        return z_t.copy()
    z = z_t.astype(np.float64)
    h, s1 = _midpoint(schedule, t, s)

    def x0(zz, tt, e=None):
        e = np.asarray(eps_fn(_out(zz, z_t), tt) if e is None else e, dtype=np.float64)
        return (zz - schedule.sigma(tt) * e) / schedule.alpha(tt)

    sg_t = schedule.sigma(t)
    d0 = x0(z, t, eps_t)
    u = (schedule.sigma(s1) / sg_t) * z - schedule.alpha(s1) * np.expm1(-0.5 * h) * d0
    d1 = x0(u, s1)
    return _out((schedule.sigma(s) / sg_t) * z - schedule.alpha(s) * np.expm1(-h) * d1, z_t)


def time_ladder(schedule, steps):
    """steps + 1 times from T down to eps_t, uniformly spaced in log-SNR."""
    lam = np.linspace(schedule.log_snr(schedule.T), schedule.log_snr(schedule.eps_t), int(steps) + 1)
    ts = schedule.inverse_log_snr(lam)
    ts[0], ts[-1] = schedule.T, schedule.eps_t
    return ts


class _Counter:
    def __init__(self, fn):
        self.fn, self.calls = fn, 0

    def __call__(self, z, t):
        self.calls += 1
        return self.fn(z, t)


def _eps_fn(model, labels, omega, adapters):
    if isinstance(model, Denoiser):
        return model.eps_fn(labels, omega, adapters)
    if callable(model):
        return model
    raise ConfigError(f"cannot build a noise predictor from {type(model).__name__}")


def solve_trajectory(model, spec, z_T, labels, schedule, adapters=()):
    """Integrate the guided PF-ODE from T to eps_t with the chosen step rule."""
    if spec.kind not in ODE_KINDS:
        raise ConfigError(f"solve_trajectory handles {ODE_KINDS}, not {spec.kind!r}")
    fn = _Counter(_eps_fn(model, labels, spec.omega, adapters))
    ts = time_ladder(schedule, spec.steps)
    z = np.asarray(z_T)
    times, states = [float(ts[0])], [z]
    start = time.perf_counter()
    for t, s in zip(ts[:-1], ts[1:]):
        t, s = float(t), float(s)
        if spec.kind == "ddim":
            z = ddim_step(z, t, s, fn(z, t), schedule)
        elif spec.kind == "dpm1":
            z = dpm1_step(z, t, s, fn, schedule)
        elif spec.kind == "dpm2":
            z = dpm2_step(z, t, s, fn, schedule)
        else:
            z = dpmpp2_step(z, t, s, fn, schedule)
        times.append(s)
        states.append(z)
    wall = time.perf_counter() - start
    return Trajectory(times, states, wall, fn.calls)


def consistency_ladder(schedule, steps):
    """1-based grid indices visited by the multistep consistency sampler."""
    if int(steps) != steps or not 1 <= steps <= MAX_CONSISTENCY_STEPS:
        raise ConfigError(f"consistency sampler supports 1..{MAX_CONSISTENCY_STEPS} steps, got {steps}")
    N = int(schedule.N)
    idx = [N - int(round(i * (N - 1) / steps)) for i in range(int(steps))]
    if len(set(idx)) != len(idx):
        raise ConfigError(f"{steps} steps do not fit on a {N}-point grid")
    return idx


def consistency_sample(student, steps, labels, omega, schedule, seed, adapters=(), n=None, dim=None,
                       return_trajectory=False):
    """Multistep consistency sampling: predict, re-noise to the next time, repeat.

    ``student`` is a :class:`Denoiser` (evaluated through the consistency
    parameterization) or a callable ``(z, t) -> x_hat``. ``labels`` may be an
    array (one per sample) or a scalar with ``n`` given.
    """
    ladder = consistency_ladder(schedule, steps)
    if isinstance(student, Denoiser):
        labels_arr = np.asarray(labels)
        if labels_arr.ndim == 0:
            if n is None:
                raise ConfigError("scalar label needs an explicit sample count n")
            labels_arr = np.full(n, int(labels_arr))
        n = labels_arr.shape[0]
        dim = student.arch.data_dim
        fn = lambda z, t: student.consistency(schedule, z, t, labels_arr, omega, adapters)  # noqa: E731
    elif callable(student):
        if n is None or dim is None:
            raise ConfigError("callable student needs explicit n and dim")
        fn = student
    else:
        raise ConfigError(f"unsupported student type {type(student).__name__}")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, dim)).astype(np.float32)
    times, states = [], []
    start = time.perf_counter()
    grid = schedule.grid
    x_hat = z
    for i, n_idx in enumerate(ladder):
        t = float(grid[n_idx - 1])
        x_hat = np.asarray(fn(z, t))
        times.append(t)
        states.append(x_hat)
        if i + 1 < len(ladder):
            t_next = float(grid[ladder[i + 1] - 1])
            noise = rng.standard_normal(z.shape).astype(np.float32)
            z = (schedule.alpha(t_next) * x_hat + schedule.sigma(t_next) * noise).astype(np.float32)
    wall = time.perf_counter() - start
    if return_trajectory:
        return Trajectory(times, states, wall, len(ladder))
    return x_hat
