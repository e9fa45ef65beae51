"""Pure numpy implementations of the elementwise kernels.

Used whenever the compiled extension is unavailable (or disabled with
``LCMLORA_PURE_PYTHON=1``). Inputs are flat float32 arrays; intermediate
arithmetic is float64.
"""

import numpy as np


def silu_forward(x):
    v = x.astype(np.float64)
    with np.errstate(over="ignore"):
        return (v / (1.0 + np.exp(-v))).astype(np.float32)


def silu_backward(x, grad_out):
    v = x.astype(np.float64)
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-v))
    return (grad_out * s * (1.0 + v * (1.0 - s))).astype(np.float32)


def huber_forward(diff, delta):
    a = np.abs(diff.astype(np.float64))
    pen = np.where(a <= delta, 0.5 * a * a, delta * (a - 0.5 * delta))
    return float(pen.sum() / diff.size)


def huber_backward(diff, delta, scale):
    d = np.clip(diff.astype(np.float64), -delta, delta)
    return (d * scale).astype(np.float32)


def adam_update(p, g, m, v, lr, beta1, beta2, eps, bias1, bias2):
    g64 = g.astype(np.float64)
    m64 = beta1 * m + (1.0 - beta1) * g64
    v64 = beta2 * v + (1.0 - beta2) * g64 * g64
    m[...] = m64
    v[...] = v64
    p[...] = p - lr * (m64 / bias1) / (np.sqrt(v64 / bias2) + eps)


def ema_update(target, source, mu):
    target[...] = mu * target.astype(np.float64) + (1.0 - mu) * source
