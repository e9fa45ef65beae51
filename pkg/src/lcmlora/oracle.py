"""Exact noise prediction and PF-ODE flow for Gaussian data.

For data ~ N(mu0, Sigma0) the noised marginal is
N(alpha mu0, alpha^2 Sigma0 + sigma^2 I), so the optimal noise predictor is
linear in z. The flow map is integrated with classical RK4 in t, which
shares no code with the solvers it is used to check.
"""

from __future__ import annotations

import numpy as np

from .errors import OracleError


class GaussianOracle:
    def __init__(self, mu0, sigma0, schedule):
        mu0 = np.asarray(mu0, dtype=np.float64).reshape(-1)
        sigma0 = np.asarray(sigma0, dtype=np.float64)
        d = mu0.size
        if sigma0.shape != (d, d):
            raise OracleError(f"covariance shape {sigma0.shape} does not match mean of length {d}")
        if not np.allclose(sigma0, sigma0.T, atol=1e-12):
            raise OracleError("covariance must be symmetric")
        if np.linalg.eigvalsh(sigma0).min() <= 0:
            raise OracleError("covariance must be positive definite")
        if d > 4:
            raise OracleError("oracle is meant for dimension <= 4")
        self.mu0, self.sigma0, self.schedule = mu0, sigma0, schedule
        self._evals, self._evecs = np.linalg.eigh(sigma0)

    def marginal_cov(self, t):
        a, s = self.schedule.alpha(t), self.schedule.sigma(t)
        return a * a * self.sigma0 + s * s * np.eye(self.mu0.size)

    def eps_star(self, z, t):
        """sigma(t) * (alpha^2 Sigma0 + sigma^2 I)^-1 (z - alpha mu0), row-wise."""
        z = np.asarray(z, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        if t.ndim == 1:
            out = np.empty_like(z)
            for tt in np.unique(t):
                rows = t == tt
                out[rows] = self.eps_star(z[rows], tt)
            return out
        t = float(t)
        a, s = self.schedule.alpha(t), self.schedule.sigma(t)
        centred = z - a * self.mu0
        return s * np.linalg.solve(self.marginal_cov(t), centred.T).T

    def velocity(self, z, t):
        sch = self.schedule
        return sch.drift(t) * z + 0.5 * sch.diffusion2(t) * self.eps_star(z, t) / sch.sigma(t)

    def flow(self, z_start, t_start, t_end, steps=4096):
        """Integrate dz/dt = velocity from t_start to t_end with RK4."""
        if steps < 1:
            raise OracleError("flow needs at least one step")
        z = np.asarray(z_start, dtype=np.float64).copy()
        ts = np.linspace(t_start, t_end, int(steps) + 1)
        for t0, t1 in zip(ts[:-1], ts[1:]):
            h = t1 - t0
            k1 = self.velocity(z, t0)
            k2 = self.velocity(z + 0.5 * h * k1, t0 + 0.5 * h)
            k3 = self.velocity(z + 0.5 * h * k2, t0 + 0.5 * h)
            k4 = self.velocity(z + h * k3, t1)
            z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return z

    def closed_form_flow(self, z_start, t_start, t_end):
        """Exact flow: whitened coordinates are transported unchanged."""
        z = np.asarray(z_start, dtype=np.float64)

        def sqrt_cov(t, inverse=False):
            a, s = self.schedule.alpha(t), self.schedule.sigma(t)
            lam = a * a * self._evals + s * s
            p = -0.5 if inverse else 0.5
            return (self._evecs * lam**p) @ self._evecs.T

        a0, a1 = self.schedule.alpha(t_start), self.schedule.alpha(t_end)
        m = sqrt_cov(t_end) @ sqrt_cov(t_start, inverse=True)
        return a1 * self.mu0 + (z - a0 * self.mu0) @ m.T


def analytic_gaussian_oracle(mu0, sigma0, schedule):
    return GaussianOracle(mu0, sigma0, schedule)
