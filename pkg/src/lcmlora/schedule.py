"""Variance-preserving noise schedules and the forward noising process."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class NoiseSchedule:
    """alpha(t), sigma(t) on [eps_t, T] with alpha**2 + sigma**2 == 1.

    ``linear`` integrates beta(t) = beta_min + t * (beta_max - beta_min).
    ``cosine`` uses alpha(t) = cos(pi/2 * cosine_scale * t); the scale keeps
    alpha(T) away from zero so log-SNR stays finite at the prior end.
    """

    kind: str = "cosine"
    N: int = 64
    eps_t: float = 0.002
    T: float = 1.0
    beta_min: float = 0.1
    beta_max: float = 20.0
    cosine_scale: float = 0.98

    def __post_init__(self):
        if self.kind not in ("linear", "cosine"):
            raise ConfigError(f"unknown schedule kind {self.kind!r} (expected 'linear' or 'cosine')")
        if int(self.N) != self.N or self.N < 2:
            raise ConfigError(f"schedule needs N >= 2 grid points, got {self.N}")
        if not 0.0 < self.eps_t < 1.0:
            raise ConfigError(f"eps_t must lie in (0, 1), got {self.eps_t}")
        if not self.eps_t < self.T <= 1.0:
            raise ConfigError(f"T must lie in (eps_t, 1], got {self.T}")
        if self.kind == "cosine" and not 0.0 < self.cosine_scale < 1.0:
            raise ConfigError(f"cosine_scale must lie in (0, 1), got {self.cosine_scale}")
        if self.kind == "linear" and not 0.0 <= self.beta_min < self.beta_max:
            raise ConfigError("linear schedule needs 0 <= beta_min < beta_max")

    # marginal coefficients ------------------------------------------------

    def log_alpha(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "linear":
            return -0.5 * (self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t)
        return np.log(np.cos(0.5 * math.pi * self.cosine_scale * t))

    def alpha(self, t):
        return np.exp(self.log_alpha(t))

    def sigma(self, t):
        return np.sqrt(-np.expm1(2.0 * self.log_alpha(t)))

    def log_snr(self, t):
        """lambda(t) = log(alpha / sigma)."""
        la = self.log_alpha(t)
        return la - 0.5 * np.log(-np.expm1(2.0 * la))

    def inverse_log_snr(self, lam):
        lam = np.asarray(lam, dtype=np.float64)
        if self.kind == "linear":
            neg2_log_alpha = np.logaddexp(0.0, -2.0 * lam)
            db = self.beta_max - self.beta_min
            return (-self.beta_min + np.sqrt(self.beta_min**2 + 2.0 * db * neg2_log_alpha)) / db
        return 2.0 / (math.pi * self.cosine_scale) * np.arctan(np.exp(-lam))

    def drift(self, t):
        """f(t) = d log(alpha) / dt."""
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "linear":
            return -0.5 * (self.beta_min + (self.beta_max - self.beta_min) * t)
        w = 0.5 * math.pi * self.cosine_scale
        return -w * np.tan(w * t)

    def diffusion2(self, t):
        """g(t)**2 = d sigma**2 / dt - 2 f(t) sigma(t)**2 (equals -2 f(t) for VP)."""
        f = self.drift(t)
        a2 = self.alpha(t) ** 2
        s2 = 1.0 - a2
        return -2.0 * a2 * f - 2.0 * f * s2

    # discrete grid --------------------------------------------------------

    @property
    def grid(self):
        """Times t_1 < ... < t_N, uniformly spaced, t_1 = eps_t, t_N = T (0-based array)."""
        return np.linspace(self.eps_t, self.T, int(self.N))

    def time_at(self, n):
        """t_n for 1-based grid index ``n`` (scalar or array)."""
        n = np.asarray(n)
        if np.any(n < 1) or np.any(n > self.N):
            raise IndexError(f"grid index out of range 1..{self.N}")
        return self.grid[n - 1]

    def describe(self):
        d = {"kind": self.kind, "N": int(self.N), "eps_t": float(self.eps_t), "T": float(self.T)}
        if self.kind == "linear":
            d.update(beta_min=self.beta_min, beta_max=self.beta_max)
        else:
            d.update(cosine_scale=self.cosine_scale)
        return d


def make_schedule(kind="cosine", N=64, eps_t=0.002, **kw):
    return NoiseSchedule(kind=kind, N=N, eps_t=eps_t, **kw)


def _column(coef, like):
    coef = np.asarray(coef, dtype=np.float64)
    if coef.ndim == 0:
        return coef
    if like.ndim == 2 and coef.shape == (like.shape[0],):
        return coef[:, None]
    return coef


def forward_noise(z0, t, eps, schedule):
    """z_t = alpha(t) * z0 + sigma(t) * eps; ``t`` is a scalar or one time per row."""
    z0 = np.asarray(z0)
    eps = np.asarray(eps)
    if z0.shape != eps.shape:
        raise DimensionError(f"forward_noise: z0 {z0.shape} and eps {eps.shape} differ")
    a = _column(schedule.alpha(t), z0)
    s = _column(schedule.sigma(t), z0)
    return (a * z0 + s * eps).astype(z0.dtype if z0.dtype == np.float64 else np.float32)
