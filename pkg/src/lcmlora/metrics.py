"""Sample-quality metrics: Gaussian Frechet distance and sliced Wasserstein."""

from __future__ import annotations

import logging
import warnings

import numpy as np

from .errors import DimensionError

log = logging.getLogger(__name__)


class MetricWarning(RuntimeWarning):
    pass


def _moments(x):
    x = np.asarray(x, dtype=np.float64)
    return x.mean(axis=0), np.atleast_2d(np.cov(x, rowvar=False))


def _psd_sqrt(m):
    evals, evecs = np.linalg.eigh(0.5 * (m + m.T))
    if evals.min() < -1e-6:
        warnings.warn(f"clamping negative eigenvalue {evals.min():.3g} in matrix square root", MetricWarning)
    return (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.T


def frechet_from_moments(mu_a, cov_a, mu_b, cov_b):
    """sqrt(|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2))."""
    d = len(mu_a)
    for name, c in (("a", cov_a), ("b", cov_b)):
        if np.linalg.matrix_rank(c) < d:
            warnings.warn(f"covariance of set {name} is singular; adding 1e-6 I", MetricWarning)
    if np.linalg.matrix_rank(cov_a) < d:
        cov_a = cov_a + 1e-6 * np.eye(d)
    if np.linalg.matrix_rank(cov_b) < d:
        cov_b = cov_b + 1e-6 * np.eye(d)
    root_a = _psd_sqrt(cov_a)
    inner = root_a @ cov_b @ root_a
    evals = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    if evals.min() < -1e-6:
        warnings.warn(f"clamping negative eigenvalue {evals.min():.3g} in matrix square root", MetricWarning)
    tr_cross = np.sqrt(np.clip(evals, 0.0, None)).sum()
    diff = np.asarray(mu_a) - np.asarray(mu_b)
    fd2 = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_cross)
    return float(np.sqrt(max(fd2, 0.0)))


def frechet_distance(samples_a, samples_b):
    """Frechet distance between Gaussian fits of two sample sets (not squared)."""
    a = np.asarray(samples_a, dtype=np.float64)
    b = np.asarray(samples_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"frechet_distance: sample shapes {a.shape} and {b.shape} are incompatible")
    d = a.shape[1]
    if len(a) < d + 1 or len(b) < d + 1:
        raise ValueError(f"frechet_distance needs at least {d + 1} samples per set")
    return frechet_from_moments(*_moments(a), *_moments(b))


def conditional_frechet_distance(samples, labels, reference, ref_labels):
    """Mean over classes of the per-class Frechet distance."""
    labels, ref_labels = np.asarray(labels), np.asarray(ref_labels)
    classes = np.unique(ref_labels)
    return float(np.mean([frechet_distance(samples[labels == c], reference[ref_labels == c])
                          for c in classes]))


def _w1_sorted(pa, pb):
    if len(pa) == len(pb):
        return float(np.abs(np.sort(pa) - np.sort(pb)).mean())
    # unequal counts: compare quantile functions on a common grid
    q = (np.arange(max(len(pa), len(pb))) + 0.5) / max(len(pa), len(pb))
    return float(np.abs(np.quantile(pa, q) - np.quantile(pb, q)).mean())


def sliced_wasserstein(samples_a, samples_b, n_projections=64, seed=0):
    """Mean 1-D Wasserstein-1 distance over random unit projections."""
    a = np.asarray(samples_a, dtype=np.float64)
    b = np.asarray(samples_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("sliced_wasserstein needs non-empty sample sets")
    a, b = a.reshape(len(a), -1), b.reshape(len(b), -1)
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"sliced_wasserstein: dimensions {a.shape[1]} and {b.shape[1]} differ")
    if n_projections < 1:
        raise ValueError("n_projections must be >= 1")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((int(n_projections), a.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa, pb = a @ dirs.T, b @ dirs.T
    return float(np.mean([_w1_sorted(pa[:, j], pb[:, j]) for j in range(dirs.shape[0])]))


def conditional_sliced_wasserstein(samples, labels, reference, ref_labels, n_projections=64, seed=0):
    labels, ref_labels = np.asarray(labels), np.asarray(ref_labels)
    return float(np.mean([
        sliced_wasserstein(samples[labels == c], reference[ref_labels == c], n_projections, seed)
        for c in np.unique(ref_labels)
    ]))
