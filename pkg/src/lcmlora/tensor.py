"""Dense tensors with tape-based reverse-mode differentiation.

Tensors hold float32 data by default. Reductions and matrix products
accumulate in float64 and cast back. A tensor built from float64 data stays
float64 through every op, which the finite-difference oracle relies on.

Broadcasting is limited to what a small MLP needs: equal shapes, a row
vector against a matrix (bias), a column vector against a matrix
(per-sample scale) and scalars.
"""

from __future__ import annotations

import contextlib

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, OracleError


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(x, dtype=None):
    if isinstance(x, Tensor):
        return x.data
    arr = np.asarray(x)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype != np.float64:
        arr = arr.astype(np.float32, copy=False)
    return arr


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    g = grad.astype(np.float64)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.astype(grad.dtype).reshape(shape)


def _check_broadcast(a, b, op):
    sa, sb = a.shape, b.shape
    if sa == sb or a.ndim == 0 or b.ndim == 0 or a.size == 1 or b.size == 1:
        return
    try:
        out = np.broadcast_shapes(sa, sb)
    except ValueError:
        raise DimensionError(f"{op}: cannot combine shapes {sa} and {sb}") from None
    if len(out) > 2:
        raise DimensionError(f"{op}: broadcasting beyond 2-D is unsupported ({sa}, {sb})")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=""):
        self.data = _as_array(data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float32)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None

    # construction helpers -------------------------------------------------

    @classmethod
    def _result(cls, data, parents, backward):
        out = cls(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{rg})"

    # arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(_as_array(other, self.dtype))
        _check_broadcast(self.data, other.data, "add")
        a, b = self, other

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor._result(a.data + b.data, (a, b), backward)

    __radd__ = __add__

    def __neg__(self):
        return Tensor._result(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(_as_array(other, self.dtype))
        _check_broadcast(self.data, other.data, "sub")
        a, b = self, other

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return Tensor._result(a.data - b.data, (a, b), backward)

    def __rsub__(self, other):
        return Tensor(_as_array(other, self.dtype)) - self

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(_as_array(other, self.dtype))
        _check_broadcast(self.data, other.data, "mul")
        a, b = self, other

        def backward(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        return Tensor._result(a.data * b.data, (a, b), backward)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        if self.ndim != 2:
            raise DimensionError(f"transpose needs a 2-D tensor, got shape {self.shape}")
        return Tensor._result(self.data.T.copy(), (self,), lambda g: (g.T,))

    def square(self):
        a = self
        return Tensor._result(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))

    def sum(self):
        a = self
        total = np.array(a.data.sum(dtype=np.float64), dtype=a.dtype)

        def backward(g):
            return (np.broadcast_to(g, a.shape).astype(a.dtype),)

        return Tensor._result(total, (a,), backward)

    def mean(self):
        a = self
        n = a.data.size
        total = np.array(a.data.sum(dtype=np.float64) / n, dtype=a.dtype)

        def backward(g):
            return (np.full(a.shape, g / n, dtype=a.dtype),)

        return Tensor._result(total, (a,), backward)

    def silu(self):
        return silu(self)

    # differentiation ----------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaf: accumulate
                if node.grad is None:
                    node.grad = g.astype(node.dtype).reshape(node.shape).copy()
                else:
                    node.grad += g.reshape(node.shape)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad or pg is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def tensor(data, requires_grad=False, name=""):
    return Tensor(data, requires_grad=requires_grad, name=name)


def matmul(a, b):
    """Matrix product ``a @ b`` for 2-D tensors, accumulated in float64."""
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    if a.dtype == np.float64 or b.dtype == np.float64:
        data = a.data.astype(np.float64) @ b.data.astype(np.float64)
        mm = lambda x, y: x.astype(np.float64) @ y.astype(np.float64)  # noqa: E731
    else:
        data = kernels.matmul64(a.data, b.data)
        mm = kernels.matmul64

    def backward(g):
        ga = mm(g, b.data.T) if a.requires_grad else None
        gb = mm(a.data.T, g) if b.requires_grad else None
        return ga, gb

    return Tensor._result(data, (a, b), backward)


def silu(x):
    """x * sigmoid(x)."""
    if x.dtype == np.float64:
        s = 1.0 / (1.0 + np.exp(-x.data))
        return Tensor._result(x.data * s, (x,), lambda g: (g * s * (1.0 + x.data * (1.0 - s)),))
    return Tensor._result(kernels.silu_forward(x.data), (x,),
                          lambda g: (kernels.silu_backward(x.data, g),))


def tanh(x):
    y = np.tanh(x.data)
    return Tensor._result(y, (x,), lambda g: (g * (1.0 - y * y),))


def gather_rows(table, index):
    """Embedding lookup: rows of ``table`` selected by integer ``index``."""
    index = np.asarray(index, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"gather_rows: table must be 2-D, got {table.shape}")
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise IndexError(f"gather_rows: index out of range for table with {table.shape[0]} rows")

    def backward(g):
        out = np.zeros(table.shape, dtype=np.float64)
        np.add.at(out, index, g)
        return (out.astype(table.dtype),)

    return Tensor._result(table.data[index], (table,), backward)


def mse_loss(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"mse_loss: shapes {a.shape} and {b.shape} differ")
    return (a - b).square().mean()


def huber_loss(a, b, delta):
    """Mean per-coordinate Huber penalty of ``a - b`` with threshold ``delta``."""
    if a.shape != b.shape:
        raise DimensionError(f"huber_loss: shapes {a.shape} and {b.shape} differ")
    diff = a.data - b.data
    n = diff.size
    if diff.dtype == np.float64:
        ad = np.abs(diff)
        val = np.where(ad <= delta, 0.5 * ad * ad, delta * (ad - 0.5 * delta)).sum() / n
        grad_fn = lambda g: np.clip(diff, -delta, delta) * (g / n)  # noqa: E731
    else:
        val = kernels.huber_forward(diff, delta)
        grad_fn = lambda g: kernels.huber_backward(diff, delta, float(g) / n)  # noqa: E731

    def backward(g):
        gd = grad_fn(g)
        return gd, -gd

    return Tensor._result(np.array(val, dtype=diff.dtype), (a, b), backward)


def grad_backward(loss, params=()):
    """Populate ``.grad`` of every tensor in ``params`` with d(loss)/d(param).

    Parameters not reachable from ``loss`` end up with an all-zero gradient.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        shape = loss.shape if isinstance(loss, Tensor) else type(loss).__name__
        raise ContractError(f"grad_backward needs a scalar loss tensor, got {shape}")
    for p in _iter_params(params):
        p.zero_grad()
    if loss.requires_grad:
        loss.backward()


def _iter_params(params):
    if isinstance(params, dict):
        return list(params.values())
    if isinstance(params, Tensor):
        return [params]
    return list(params)


def finite_diff_errors(f, params, h=1e-3):
    """Per-entry relative errors between autodiff and central differences.

    ``f`` maps the parameter collection to a scalar Tensor. Parameters are
    promoted to float64 for the check so rounding does not swamp the
    difference quotient.
    """
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    named = params if isinstance(params, dict) else {str(i): p for i, p in enumerate(_iter_params(params))}
    work = {k: Tensor(p.data.astype(np.float64), requires_grad=True, name=k) for k, p in named.items()}
    arg = work if isinstance(params, dict) else list(work.values())

    loss = f(arg)
    grad_backward(loss, work)
    analytic = {k: t.grad.copy() for k, t in work.items()}

    with no_grad():
        base = float(f(arg).data)
        again = float(f(arg).data)
        if base != again or base != float(loss.data):
            raise OracleError(f"objective is not deterministic ({base!r} vs {again!r})")
        errors = []
        for k, t in work.items():
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(f(arg).data)
                flat[i] = orig - h
                fm = float(f(arg).data)
                flat[i] = orig
                numeric = (fp - fm) / (2.0 * h)
                errors.append(abs(analytic[k].reshape(-1)[i] - numeric) / (abs(numeric) + 1e-8))
    return np.asarray(errors)


def finite_diff_check(f, params, h=1e-3):
    """Maximum relative error of autodiff gradients against central differences."""
    errs = finite_diff_errors(f, params, h)
    return float(errs.max()) if errs.size else 0.0
