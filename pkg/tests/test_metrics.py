import math
import warnings

import numpy as np
import pytest

from lcmlora.errors import DimensionError
from lcmlora.metrics import (MetricWarning, conditional_frechet_distance, frechet_distance, frechet_from_moments,
                             sliced_wasserstein)

N = 50_000


def test_exact_moment_cases():
    m = np.array([0.3, -1.2, 0.5])
    assert frechet_from_moments(np.zeros(3), np.eye(3), m, np.eye(3)) == pytest.approx(np.linalg.norm(m), rel=1e-9)
    fd = frechet_from_moments(np.zeros(3), 0.25 * np.eye(3), np.zeros(3), 4.0 * np.eye(3))
    assert fd**2 == pytest.approx(3 * (0.5 - 2.0) ** 2, rel=1e-9)


def test_mean_shift_at_5e4(rng):
    m = np.array([1.0, 0.5])
    a, b = rng.standard_normal((N, 2)), rng.standard_normal((N, 2)) + m
    assert frechet_distance(a, b) == pytest.approx(np.linalg.norm(m), rel=0.02)


def test_variance_case_at_5e4(rng):
    d, s1, s2 = 3, 0.5, 1.5
    a, b = s1 * rng.standard_normal((N, d)), s2 * rng.standard_normal((N, d))
    assert frechet_distance(a, b) == pytest.approx(math.sqrt(d) * abs(s1 - s2), rel=0.02)


def test_identical_sets(rng):
    a = rng.standard_normal((500, 4))
    assert frechet_distance(a, a) <= 1e-6


def test_symmetry(rng):
    a = rng.standard_normal((300, 3)) @ rng.standard_normal((3, 3))
    b = rng.standard_normal((300, 3)) + 1.0
    assert abs(frechet_distance(a, b) - frechet_distance(b, a)) <= 1e-8


def test_union_sanity(rng):
    a = rng.standard_normal((2000, 2))
    b = rng.standard_normal((2000, 2)) + 3.0
    assert frechet_distance(a, np.concatenate([a, b])) <= frechet_distance(a, b) + 1e-9


def test_singular_covariance_warns(rng):
    a = np.c_[rng.standard_normal(100), np.zeros(100)]
    with pytest.warns(MetricWarning, match="singular"):
        fd = frechet_distance(a, rng.standard_normal((100, 2)))
    assert np.isfinite(fd) and fd >= 0


def test_frechet_errors(rng):
    with pytest.raises(DimensionError):
        frechet_distance(np.zeros((10, 2)), np.zeros((10, 3)))
    with pytest.raises(ValueError):
        frechet_distance(np.zeros((2, 2)), rng.standard_normal((10, 2)))


def test_conditional_fd_sees_per_class_swap(rng):
    x = rng.standard_normal((800, 2)) * 0.1
    lab = np.arange(800) % 2
    x[lab == 1] += 2.0
    swapped = 1 - lab
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert frechet_distance(x, x) <= 1e-6
        assert conditional_frechet_distance(x, lab, x, lab) <= 1e-6
        assert conditional_frechet_distance(x, swapped, x, lab) > 2.0


def test_sw_identical_and_shift(rng):
    a = rng.standard_normal((500, 1))
    assert sliced_wasserstein(a, a) == 0.0
    assert sliced_wasserstein(a, a + 0.7, n_projections=4) == pytest.approx(0.7, abs=1e-12)


def test_sw_projection_convergence(rng):
    a = rng.standard_normal((4000, 2))
    b = rng.standard_normal((4000, 2)) * np.array([2.0, 0.5]) + 0.3
    lo, hi = sliced_wasserstein(a, b, 64, seed=1), sliced_wasserstein(a, b, 4096, seed=1)
    assert abs(lo - hi) <= 0.1 * hi


def test_sw_deterministic_and_unequal_counts(rng):
    a, b = rng.standard_normal((300, 2)), rng.standard_normal((200, 2))
    assert sliced_wasserstein(a, b, seed=5) == sliced_wasserstein(a, b, seed=5)
    assert sliced_wasserstein(a, b) >= 0


def test_sw_errors():
    with pytest.raises(ValueError):
        sliced_wasserstein(np.zeros((0, 2)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        sliced_wasserstein(np.zeros((3, 2)), np.zeros((3, 2)), n_projections=0)
