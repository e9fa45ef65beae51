"""Adam optimizer over named float32 parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels


class OptimizerError(FloatingPointError):
    """A gradient handed to the optimizer was not finite."""


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        for name, p in params.items():
            state.first_moment[name] = np.zeros(p.shape, dtype=np.float32)
            state.second_moment[name] = np.zeros(p.shape, dtype=np.float32)
        return state


def adam_step(params, state, grads=None):
    """Apply one bias-corrected Adam update in place.

    ``params`` maps names to Tensors; gradients come from ``grads`` (same
    keys) or from each tensor's ``.grad``. Raises :class:`OptimizerError`
    naming the first parameter whose gradient is not finite.
    """
    if grads is None:
        grads = {k: p.grad for k, p in params.items()}
    for name, g in grads.items():
        if g is None:
            raise OptimizerError(f"parameter {name!r} has no gradient")
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise OptimizerError(
                f"non-finite gradient for parameter {name!r} at step {state.step_count + 1} "
                f"({bad} of {np.size(g)} entries)"
            )
    state.step_count += 1
    t = state.step_count
    bias1 = 1.0 - state.beta1**t
    bias2 = 1.0 - state.beta2**t
    for name, p in params.items():
        if name not in state.first_moment:
            state.first_moment[name] = np.zeros(p.shape, dtype=np.float32)
            state.second_moment[name] = np.zeros(p.shape, dtype=np.float32)
        m, v = state.first_moment[name], state.second_moment[name]
        if m.shape != p.shape:
            raise ValueError(f"moment shape {m.shape} does not match parameter {name!r} {p.shape}")
        kernels.adam_update(p.data, grads[name], m, v, state.lr, state.beta1, state.beta2,
                            state.eps, bias1, bias2)
    return params, state
