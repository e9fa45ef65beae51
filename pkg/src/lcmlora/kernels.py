"""Kernel backend selection.

The compiled Cython module is preferred; the numpy fallback is used when the
extension was not built or when ``LCMLORA_PURE_PYTHON`` is set to a truthy
value before import. ``BACKEND`` names the active implementation.

Matrix products are not part of either backend: they go through BLAS in
float64 (see :func:`matmul64`), which beats any hand-written loop at the
sizes used here.
"""

import os

import numpy as np

from . import _kernels_py

if os.environ.get("LCMLORA_PURE_PYTHON", "").lower() in ("1", "true", "yes"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"


def available_backends():
    out = {"python": _kernels_py}
    try:
        from . import _kernels

        out["cython"] = _kernels
    except ImportError:
        pass
    return out


def set_backend(name):
    """Switch the active backend at runtime ("cython" or "python")."""
    global _impl, BACKEND
    backends = available_backends()
    if name not in backends:
        raise ValueError(f"kernel backend {name!r} not available; have {sorted(backends)}")
    _impl = backends[name]
    BACKEND = name


def _flat(a):
    return np.ascontiguousarray(a, dtype=np.float32).reshape(-1)


def silu_forward(x):
    return _impl.silu_forward(_flat(x)).reshape(np.shape(x))


def silu_backward(x, grad_out):
    return _impl.silu_backward(_flat(x), _flat(grad_out)).reshape(np.shape(x))


def huber_forward(diff, delta):
    return float(_impl.huber_forward(_flat(diff), float(delta)))


def huber_backward(diff, delta, scale):
    return _impl.huber_backward(_flat(diff), float(delta), float(scale)).reshape(np.shape(diff))


def adam_update(p, g, m, v, lr, beta1, beta2, eps, bias1, bias2):
    """In-place fused Adam update on flat float32 views of ``p``, ``m``, ``v``."""
    _impl.adam_update(p.reshape(-1), _flat(g), m.reshape(-1), v.reshape(-1),
                      float(lr), float(beta1), float(beta2), float(eps),
                      float(bias1), float(bias2))


def ema_update(target, source, mu):
    _impl.ema_update(target.reshape(-1), _flat(source), float(mu))


def matmul64(a, b):
    """float32 matrix product with float64 accumulation."""
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(np.float32)
