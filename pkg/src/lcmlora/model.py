"""Conditional MLP denoiser, classifier-free guidance and the PF-ODE field.

One architecture serves as both teacher and student. The teacher predicts
noise; the student reuses the same network, converts its noise prediction
into a clean-sample estimate and blends it with the input through the
consistency boundary coefficients so that ``f(z, eps_t) == z`` exactly.

Parameters live in plain dicts of float32 arrays keyed by layer name
(``"<layer>.weight"`` is ``out x in``). LoRA adapters are passed to the
forward pass as ``(factors, scale)`` pairs, ``factors`` mapping a weight name
to its ``(B, A)`` tensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import Tensor, gather_rows, matmul, no_grad, silu


@dataclass(frozen=True)
class Arch:
    data_dim: int = 2
    n_classes: int = 8
    hidden: int = 128
    depth: int = 3
    time_features: int = 32
    omega_features: int = 16
    sigma_data: float = 0.5
    time_scale: float = 10.0

    def __post_init__(self):
        if self.data_dim < 1 or self.hidden < 1 or self.depth < 0 or self.n_classes < 1:
            raise ConfigError(f"invalid architecture {self}")
        if self.time_features % 2 or self.omega_features % 2:
            raise ConfigError("embedding feature counts must be even")

    @property
    def null_label(self):
        return self.n_classes

    def dense_layers(self):
        """Names of the dense weight matrices, in forward order."""
        names = ["in_proj", "time_proj", "omega_proj"]
        names += [f"hidden{i}" for i in range(self.depth)]
        names.append("out_proj")
        return [f"{n}.weight" for n in names]

    def to_dict(self):
        return dict(self.__dict__)


def init_params(arch, rng):
    """Fresh parameters. ``omega_proj`` starts at zero so guidance input is inert."""
    h = arch.hidden

    def dense(fan_out, fan_in, gain=1.0):
        return (rng.standard_normal((fan_out, fan_in)) * gain / math.sqrt(fan_in)).astype(np.float32)

    p = {
        "in_proj.weight": dense(h, arch.data_dim),
        "in_proj.bias": np.zeros(h, np.float32),
        "time_proj.weight": dense(h, arch.time_features),
        "time_proj.bias": np.zeros(h, np.float32),
        "omega_proj.weight": np.zeros((h, arch.omega_features), np.float32),
        "class_emb": (rng.standard_normal((arch.n_classes + 1, h)) * 0.5).astype(np.float32),
    }
    for i in range(arch.depth):
        p[f"hidden{i}.weight"] = dense(h, h, gain=1.4)
        p[f"hidden{i}.bias"] = np.zeros(h, np.float32)
    p["out_proj.weight"] = np.zeros((arch.data_dim, h), np.float32)
    p["out_proj.bias"] = np.zeros(arch.data_dim, np.float32)
    return p


def sinusoidal_features(x, n_features, scale):
    """[sin(scale*x*w_k), cos(scale*x*w_k)] with geometric frequencies w_k."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    half = n_features // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    arg = scale * x[:, None] * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1).astype(np.float32)


def _broadcast_rows(v, n, dtype=None):
    v = np.asarray(v, dtype=dtype)
    if v.ndim == 0:
        return np.full(n, v, dtype=v.dtype)
    if v.shape != (n,):
        raise DimensionError(f"expected a scalar or {n} per-row values, got shape {v.shape}")
    return v


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _linear(weights, adapters, name, x, bias=True):
    w = _as_tensor(weights[f"{name}.weight"])
    y = matmul(x, w.T)
    for factors, scale in adapters:
        ba = factors.get(f"{name}.weight")
        if ba is None or scale == 0.0:
            continue
        b, a = ba
        y = y + matmul(matmul(x, _as_tensor(a).T), _as_tensor(b).T) * float(scale)
    if bias:
        y = y + _as_tensor(weights[f"{name}.bias"])
    return y


def network(arch, weights, z, t, labels, omega=None, adapters=()):
    """Raw noise prediction eps(z, t, c[, omega]) as a Tensor.

    ``omega=None`` feeds zero guidance features (teacher mode).
    """
    z = _as_tensor(z)
    if z.ndim != 2 or z.shape[1] != arch.data_dim:
        raise DimensionError(f"expected z of shape (batch, {arch.data_dim}), got {z.shape}")
    n = z.shape[0]
    t = _broadcast_rows(t, n, np.float64)
    labels = _broadcast_rows(labels, n)
    if labels.dtype.kind not in "iu":
        raise TypeError("class labels must be integers")
    if labels.size and (labels.min() < 0 or labels.max() > arch.null_label):
        bad = labels[(labels < 0) | (labels > arch.null_label)][0]
        raise KeyError(f"unknown class label {int(bad)} (valid: 0..{arch.n_classes - 1} or null {arch.null_label})")

    tf = Tensor(sinusoidal_features(t, arch.time_features, 1000.0))
    h = _linear(weights, adapters, "in_proj", z) + _linear(weights, adapters, "time_proj", tf)
    h = h + gather_rows(_as_tensor(weights["class_emb"]), labels)
    if omega is not None:
        wf = Tensor(sinusoidal_features(_broadcast_rows(omega, n, np.float64), arch.omega_features, 100.0))
        h = h + _linear(weights, adapters, "omega_proj", wf, bias=False)
    h = silu(h)
    for i in range(arch.depth):
        h = silu(_linear(weights, adapters, f"hidden{i}", h))
    return _linear(weights, adapters, "out_proj", h)


def boundary_coefficients(t, eps_t, sigma_data=0.5, time_scale=10.0):
    """(c_skip, c_out) with c_skip(eps_t) = 1 and c_out(eps_t) = 0 exactly.

    c_out = 1 - c_skip keeps the blend unbiased: a student whose clean
    estimate is exact returns that estimate at every t.
    """
    u = time_scale * (np.asarray(t, dtype=np.float64) - eps_t)
    c_skip = sigma_data**2 / (u * u + sigma_data**2)
    return c_skip, 1.0 - c_skip


def clean_estimate(schedule, z, t, eps):
    """x0_hat = (z - sigma(t) * eps) / alpha(t), works on arrays or Tensors."""
    n = z.shape[0]
    t = _broadcast_rows(t, n, np.float64)
    a = schedule.alpha(t)[:, None]
    s = schedule.sigma(t)[:, None]
    if isinstance(z, Tensor) or isinstance(eps, Tensor):
        dt = _as_tensor(z).dtype
        return (_as_tensor(z) - _as_tensor(eps) * s.astype(dt)) * (1.0 / a).astype(dt)
    return (z - s * eps) / a


def student_output(arch, schedule, weights, z, t, labels, omega, adapters=()):
    """Consistency function f(z, omega, c, t) = c_skip z + c_out x0_hat."""
    z = _as_tensor(z)
    n = z.shape[0]
    t = _broadcast_rows(t, n, np.float64)
    eps = network(arch, weights, z, t, labels, omega=omega, adapters=adapters)
    x0 = clean_estimate(schedule, z, t, eps)
    c_skip, c_out = boundary_coefficients(t, schedule.eps_t, arch.sigma_data, arch.time_scale)
    dt = z.dtype
    return z * c_skip[:, None].astype(dt) + x0 * c_out[:, None].astype(dt)


def cfg_compose(out_cond, out_uncond, omega):
    """Guided combination (1 + omega) * cond - omega * uncond.

    Evaluated as ``cond + omega * (cond - uncond)`` so that omega = 0 and
    equal branches both return ``cond`` bit for bit.
    """
    out_cond = np.asarray(out_cond)
    out_uncond = np.asarray(out_uncond)
    if out_cond.shape != out_uncond.shape:
        raise DimensionError(f"cfg_compose: shapes {out_cond.shape} and {out_uncond.shape} differ")
    omega = np.asarray(omega, dtype=out_cond.dtype)
    if not np.all(np.isfinite(omega)):
        raise ValueError("guidance scale must be finite")
    if omega.ndim == 1 and out_cond.ndim == 2:
        omega = omega[:, None]
    return out_cond + omega * (out_cond - out_uncond)


@dataclass
class Denoiser:
    """Architecture plus frozen base parameters."""

    arch: Arch
    params: dict

    @classmethod
    def create(cls, arch, seed=0):
        return cls(arch, init_params(arch, np.random.default_rng(seed)))

    def eps(self, z, t, labels, omega=None, adapters=()):
        with no_grad():
            return network(self.arch, self.params, z, t, labels, omega, adapters).data

    def guided_eps(self, z, t, labels, omega, adapters=()):
        """CFG-composed noise prediction; both branches share one batched pass."""
        z = np.asarray(z, dtype=np.float32)
        n = z.shape[0]
        labels = _broadcast_rows(labels, n)
        t = _broadcast_rows(t, n, np.float64)
        both = self.eps(np.concatenate([z, z]), np.concatenate([t, t]),
                        np.concatenate([labels, np.full(n, self.arch.null_label)]), None, adapters)
        return cfg_compose(both[:n], both[n:], omega)

    def consistency(self, schedule, z, t, labels, omega, adapters=()):
        with no_grad():
            return student_output(self.arch, schedule, self.params, z, t, labels, omega, adapters).data

    def eps_fn(self, labels, omega, adapters=()):
        """Callable z, t -> guided eps, the form the ODE solvers consume."""
        return lambda z, t: self.guided_eps(z, t, labels, omega, adapters)


def pf_ode_rhs(eps_fn, z, t, schedule):
    """dz/dt = f(t) z - 0.5 g(t)^2 * score with score = -eps / sigma(t)."""
    t = float(t)
    if not schedule.eps_t < t <= schedule.T:
        raise ValueError(f"pf_ode_rhs: t={t} outside (eps_t, T] = ({schedule.eps_t}, {schedule.T}]")
    eps = np.asarray(eps_fn(z, t))
    f = schedule.drift(t)
    g2 = schedule.diffusion2(t)
    return f * z + 0.5 * g2 * eps / schedule.sigma(t)
