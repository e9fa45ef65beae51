"""Low-rank adapters and weight-space task arithmetic.

A :class:`LoraDelta` holds per-layer factors ``B`` (d x r) and ``A`` (r x k)
plus a scalar weight; the update it represents on layer ``W0`` is
``weight * B @ A``. Deltas are combined as a list of ``(delta, coefficient)``
pairs and only densified inside :func:`lora_merge`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DimensionError, MergeError
from .model import Denoiser
from .tensor import Tensor

TAGS = ("acceleration", "style", "other")


def _params_of(base):
    if isinstance(base, Denoiser):
        return base.params
    return base


def _is_dense(name, shape):
    return len(shape) == 2 and not name.endswith("emb")


def adaptable_layers(base):
    """All 2-D weight matrices except embedding tables."""
    params = _params_of(base)
    return [k for k, v in params.items() if _is_dense(k, np.shape(v))]


@dataclass
class LoraDelta:
    factors: dict  # layer name -> (B, A) float32 arrays
    weight: float = 1.0
    tag: str = "other"

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ConfigError(f"unknown delta tag {self.tag!r}; expected one of {TAGS}")
        for name, (b, a) in self.factors.items():
            if b.ndim != 2 or a.ndim != 2 or b.shape[1] != a.shape[0]:
                raise DimensionError(f"{name}: factors B{b.shape} and A{a.shape} do not chain")
            r, (d, k) = a.shape[0], (b.shape[0], a.shape[1])
            if r > min(d, k):
                raise ConfigError(f"{name}: rank {r} exceeds min(d, k) = {min(d, k)}")

    def rank(self, layer):
        return self.factors[layer][1].shape[0]

    def dense(self, layer):
        """weight * B @ A in float64."""
        b, a = self.factors[layer]
        return self.weight * (b.astype(np.float64) @ a.astype(np.float64))

    def scaled(self, coefficient):
        return replace(self, weight=self.weight * coefficient)

    def copy(self):
        return LoraDelta({k: (b.copy(), a.copy()) for k, (b, a) in self.factors.items()},
                         self.weight, self.tag)

    def as_adapter(self, coefficient=1.0):
        """(factors, scale) pair accepted by the model forward pass."""
        return ({k: (Tensor(b), Tensor(a)) for k, (b, a) in self.factors.items()},
                self.weight * coefficient)

    def trainable(self):
        """Fresh requires-grad tensors for every factor, keyed ``layer/B``, ``layer/A``."""
        out = {}
        for k, (b, a) in self.factors.items():
            out[f"{k}/B"] = Tensor(b.copy(), requires_grad=True, name=f"{k}/B")
            out[f"{k}/A"] = Tensor(a.copy(), requires_grad=True, name=f"{k}/A")
        return out

    @classmethod
    def from_trainable(cls, tensors, weight=1.0, tag="other"):
        layers = sorted({k.rsplit("/", 1)[0] for k in tensors})
        factors = {}
        for layer in layers:
            b, a = tensors[f"{layer}/B"], tensors[f"{layer}/A"]
            factors[layer] = (np.array(getattr(b, "data", b), dtype=np.float32),
                              np.array(getattr(a, "data", a), dtype=np.float32))
        return cls(factors, weight, tag)


def trainable_adapter(tensors):
    """(factors, scale) adapter built directly from a trainable tensor dict."""
    layers = {k.rsplit("/", 1)[0] for k in tensors}
    return ({layer: (tensors[f"{layer}/B"], tensors[f"{layer}/A"]) for layer in layers}, 1.0)


def lora_init(base, rank, seed, layers=None, tag="other"):
    """Zero-effect adapter: A ~ N(0, 1/r), B = 0.

    ``rank`` is an int applied to every layer or a mapping layer -> rank.
    """
    params = _params_of(base)
    layers = adaptable_layers(params) if layers is None else list(layers)
    rng = np.random.default_rng(seed)
    factors = {}
    for name in layers:
        if name not in params:
            raise MergeError(f"layer {name!r} is not part of the base model")
        d, k = params[name].shape
        r = rank[name] if isinstance(rank, dict) else rank
        if int(r) != r or r < 1:
            raise ConfigError(f"{name}: LoRA rank must be a positive integer, got {r}")
        if r > min(d, k):
            raise ConfigError(f"{name}: rank {r} exceeds min(d, k) = min({d}, {k})")
        a = (rng.standard_normal((r, k)) / np.sqrt(r)).astype(np.float32)
        factors[name] = (np.zeros((d, r), np.float32), a)
    return LoraDelta(factors, 1.0, tag)


def capped_ranks(base, rank, layers=None):
    """Per-layer ranks min(rank, d, k), for layers too narrow for ``rank``."""
    params = _params_of(base)
    layers = adaptable_layers(params) if layers is None else layers
    return {n: int(min(rank, *params[n].shape)) for n in layers}


def lora_forward(w0, b, a, x, weight=1.0):
    """h = W0 x + weight * B (A x), never forming B @ A.

    ``x`` is a vector of length k or a batch of row vectors (n x k).
    """
    w0, b, a, x = (np.asarray(v) for v in (w0, b, a, x))
    d, k = w0.shape
    if b.shape[0] != d or a.shape[1] != k or b.shape[1] != a.shape[0]:
        raise DimensionError(f"lora_forward: W0{w0.shape}, B{b.shape}, A{a.shape} are inconsistent")
    if x.shape[-1] != k:
        raise DimensionError(f"lora_forward: input length {x.shape[-1]} does not match k = {k}")
    x64 = x.astype(np.float64)
    if x.ndim == 1:
        return w0 @ x64 + weight * (b @ (a @ x64))
    return x64 @ w0.T.astype(np.float64) + weight * ((x64 @ a.T) @ b.T)


class DeltaCombination(list):
    """Ordered ``(LoraDelta, coefficient)`` pairs; an empty list is the zero update."""

    def __init__(self, items=()):
        items = [(d, float(c)) for d, c in items]
        for _, c in items:
            if not np.isfinite(c):
                raise ConfigError("combination coefficients must be finite")
        super().__init__(items)

    def __add__(self, other):
        return DeltaCombination(list(self) + list(other))

    def __neg__(self):
        return DeltaCombination((d, -c) for d, c in self)

    def as_adapters(self):
        return [d.as_adapter(c) for d, c in self]


def combine(deltas):
    """Build a combination from ``(delta, coefficient)`` pairs (or bare deltas, coefficient 1)."""
    pairs = [(item, 1.0) if isinstance(item, LoraDelta) else item for item in deltas]
    return DeltaCombination(pairs)


class MergedParams(dict):
    """Dense merged parameters that remember their base and factored combination.

    Merging onto a ``MergedParams`` re-densifies from the original base, so
    ``merge(merge(base, [tau]), [-tau])`` returns ``base`` exactly.
    """

    def __init__(self, data, base, combination):
        super().__init__(data)
        self.base = base
        self.combination = combination


def lora_merge(base, combination):
    """theta' = theta_pre + sum_i c_i * w_i * B_i A_i, per adapted layer.

    The input is never modified; layers without deltas are copied.
    """
    params = _params_of(base)
    combination = combination if isinstance(combination, DeltaCombination) else combine(combination)
    if isinstance(params, MergedParams):
        combination = params.combination + combination
        params = params.base
    for delta, _ in combination:
        for layer in delta.factors:
            if layer not in params:
                raise MergeError(f"delta layer {layer!r} ({delta.tag}) not found in base model")
            b, a = delta.factors[layer]
            if (b.shape[0], a.shape[1]) != params[layer].shape:
                raise DimensionError(
                    f"{layer}: delta shape {(b.shape[0], a.shape[1])} vs base {params[layer].shape}")
    acc = {}
    for delta, coef in combination:
        for layer in delta.factors:
            upd = coef * delta.dense(layer)
            acc[layer] = upd if layer not in acc else acc[layer] + upd
    out = {}
    for name, value in params.items():
        if name in acc:
            out[name] = (value.astype(np.float64) + acc[name]).astype(np.float32)
        else:
            out[name] = value.copy()
    merged = MergedParams(out, params, combination)
    if isinstance(base, Denoiser):
        return Denoiser(base.arch, merged)
    return merged


def count_params(base, rank, layers=None):
    """(full, trainable) parameter counts over the adapted layers.

    ``base`` maps layer names to arrays or shapes. full = sum d*k,
    trainable = sum r*(d+k).
    """
    params = _params_of(base)
    shapes = {k: (tuple(v) if isinstance(v, (tuple, list)) else np.shape(v)) for k, v in params.items()}
    if layers is None:
        layers = [k for k, s in shapes.items() if _is_dense(k, s)]
    full = trainable = 0
    for name in layers:
        d, k = shapes[name]
        r = rank[name] if isinstance(rank, dict) else rank
        full += d * k
        trainable += r * (d + k)
    return full, trainable


def count_unadapted(base, layers=None):
    params = _params_of(base)
    layers = set(adaptable_layers(params) if layers is None else layers)
    return int(sum(np.size(v) for k, v in params.items() if k not in layers))
