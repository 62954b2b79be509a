"""Dense float64 tensors with reverse-mode automatic differentiation.

Every tensor op records its inputs and a vector-Jacobian product, so a
scalar loss can be back-propagated through arbitrary compositions.  All
arithmetic is 64-bit and deterministic; any op producing a NaN or Inf
raises immediately instead of propagating it.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf


class NonFiniteError(ArithmeticError):
    """An op produced (or was fed) a NaN or Inf."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _check_finite(arr: np.ndarray, what: str = "tensor") -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite value in {what}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape of a broadcast operand."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A node in the computation graph: float64 data plus an optional grad."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        _check_finite(self.data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Reverse-topological gradient accumulation from a scalar loss.

        Repeated calls without zeroing accumulate into existing grads.
        """
        if self.data.size != 1:
            raise ValueError("backward requires a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._vjp is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if parent.requires_grad and g is not None:
                    parent._accumulate(g)

    # operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __sub__(self, other):
        return add(self, -_lift(other))

    def __rsub__(self, other):
        return add(_lift(other), -self)

    def __truediv__(self, other):
        return mul(self, pow_const(_lift(other), -1.0))

    def __pow__(self, n):
        return pow_const(self, float(n))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _from_op(data: np.ndarray, parents: tuple, vjp) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
        out._vjp = vjp
    return out


# primitive ops ------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data
    return _from_op(data, (a, b), lambda g: (
        _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    return _from_op(data, (a, b), lambda g: (
        _unbroadcast(g * b.data, a.data.shape),
        _unbroadcast(g * a.data, b.data.shape)))


def pow_const(a: Tensor, n: float) -> Tensor:
    data = a.data ** n
    _check_finite(data, "pow")
    return _from_op(data, (a,), lambda g: (g * n * a.data ** (n - 1.0),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(
            f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data
    return _from_op(data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a: Tensor) -> Tensor:
    return _from_op(a.data.T.copy(), (a,), lambda g: (g.T,))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _from_op(data, (a,), vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def texp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    _check_finite(data, "exp")
    return _from_op(data, (a,), lambda g: (g * data,))


def tlog(a: Tensor) -> Tensor:
    data = np.log(a.data)
    _check_finite(data, "log")
    return _from_op(data, (a,), lambda g: (g / a.data,))


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)
    return _from_op(data, (a,), lambda g: (g * (1.0 - data * data),))


_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# negative-control hook: scales one vjp so gradient checks must fail
_FAULT_SCALE = 1.0


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-error formulation x * Phi(x)."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    data = x * cdf
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return _from_op(data, (a,),
                    lambda g: (g * (cdf + x * pdf) * _FAULT_SCALE,))


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ValueError("layernorm gain/bias must match the last extent")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = xhat * gain.data + bias.data

    def vjp(g):
        dxhat = g * gain.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        axes = tuple(range(g.ndim - 1))
        return (dx, (g * xhat).sum(axis=axes), g.sum(axis=axes))

    return _from_op(data, (x, gain, bias), vjp)


def softmax_masked(logits: Tensor, allow: np.ndarray) -> Tensor:
    """Row softmax over permitted columns; denied columns get exactly 0.

    Equivalent to adding -inf to denied logits before normalizing, but
    implemented without materializing infinities.
    """
    allow = np.asarray(allow, dtype=bool)
    if allow.shape != logits.data.shape:
        raise ValueError("mask shape must match logits")
    if not allow.any(axis=-1).all():
        raise ValueError("attention row with zero permitted columns")
    shifted = np.where(allow, logits.data, -np.inf)
    m = shifted.max(axis=-1, keepdims=True)
    e = np.exp(shifted - m)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - inner),)

    return _from_op(y, (logits,), vjp)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean of -log softmax(logits)[target] over rows."""
    t = np.asarray(targets, dtype=np.int64)
    n, v = logits.data.shape
    if t.shape != (n,):
        raise ValueError("targets must have one id per logits row")
    if t.min(initial=0) < 0 or (t.size and t.max() >= v):
        raise ValueError("target id out of vocabulary range")
    rows = logits.data
    m = rows.max(axis=-1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(rows - m).sum(axis=-1))
    data = np.mean(lse - rows[np.arange(n), t])

    def vjp(g):
        p = np.exp(rows - m)
        p /= p.sum(axis=-1, keepdims=True)
        p[np.arange(n), t] -= 1.0
        return (p * (float(g) / n),)

    return _from_op(data, (logits,), vjp)


def smooth_l1(pred: Tensor, target: Tensor) -> Tensor:
    """Mean Huber penalty: quadratic below unit error, linear above."""
    if pred.data.shape != target.data.shape:
        raise ValueError("smooth_l1 operands must share a shape")
    e = pred.data - target.data
    a = np.abs(e)
    per = np.where(a < 1.0, 0.5 * e * e, a - 0.5)
    data = per.mean()

    def vjp(g):
        ge = np.clip(e, -1.0, 1.0) * (float(g) / e.size)
        return (ge, -ge)

    return _from_op(data, (pred, target), vjp)


def gather_rows(x: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    data = x.data[idx]

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _from_op(data, (x,), vjp)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    data = x.data[:, start:stop].copy()

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return (gx,)

    return _from_op(data, (x,), vjp)


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([p.data for p in parts], axis=axis)
    extents = [p.data.shape[axis] for p in parts]
    bounds = np.cumsum([0] + extents)

    def vjp(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(parts)))

    return _from_op(data, tuple(parts), vjp)


# gradient checking --------------------------------------------------


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()


def fd_check(f, params, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference grads.

    ``f`` rebuilds the scalar loss from scratch on every call; the finite
    differences never touch the reverse-mode machinery being checked.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    zero_grads(params)
    f().backward()
    analytic = [np.array(p.grad) if p.grad is not None else np.zeros_like(p.data)
                for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f().data)
            flat[i] = orig - eps
            fm = float(f().data)
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NonFiniteError("non-finite loss at perturbed point")
            gfd = (fp - fm) / (2.0 * eps)
            err = abs(gflat[i] - gfd) / max(1.0, abs(gflat[i]), abs(gfd))
            worst = max(worst, err)
    return worst
