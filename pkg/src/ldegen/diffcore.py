"""Minimal define-by-run reverse-mode differentiation over float64 arrays.

Every op takes :class:`Node` inputs, computes its value with numpy and,
when the owning :class:`Tape` is recording, appends a vector-Jacobian
closure. :func:`backward` walks the tape in exact reverse creation order.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

LEAKY_SLOPE = 0.2
POINTWISE_KINDS = ("leaky_relu", "tanh", "exp", "identity", "sigmoid")
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


class DimensionError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Node:
    __slots__ = ("tape", "index", "value", "parents", "vjp", "grad", "name")

    def __init__(self, tape, index, value, parents=(), vjp=None, name=None):
        self.tape = tape
        self.index = index
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def trainable(self) -> bool:
        return self.name is not None

    def __repr__(self):
        label = self.name or f"#{self.index}"
        return f"Node({label}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, index):
        return getitem(self, index)


class Tape:
    """Ordered record of nodes for one forward pass.

    ``record=False`` skips closure bookkeeping for inference-only passes.
    ``check_finite=True`` rejects NaN/Inf at every op boundary.
    """

    def __init__(self, record: bool = True, check_finite: bool = False):
        self.record = record
        self.check_finite = check_finite
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def _push(self, value, parents=(), vjp=None, name=None) -> Node:
        value = np.asarray(value, dtype=np.float64)
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NonFiniteError(f"non-finite values produced at node {len(self.nodes)}")
        node = Node(self, len(self.nodes), value, tuple(parents), vjp, name)
        if self.record:
            self.nodes.append(node)
        return node

    def constant(self, value) -> Node:
        return self._push(np.array(value, dtype=np.float64))

    def param(self, value, name: str) -> Node:
        """Trainable leaf; its gradient is reported under ``name``."""
        return self._push(np.asarray(value, dtype=np.float64), name=name)


def _tape_of(*nodes: Node) -> Tape:
    tape = nodes[0].tape
    for n in nodes[1:]:
        if n.tape is not tape:
            raise ValueError("nodes belong to different tapes")
    return tape


def _lift(tape: Tape, x) -> Node:
    return x if isinstance(x, Node) else tape.constant(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# dense building blocks


def affine(x: Node, weight: Node, bias: Node) -> Node:
    """``x @ weight + bias`` over the last axis of ``x`` (leading axes are batch)."""
    tape = _tape_of(x, weight, bias)
    if weight.value.ndim != 2 or x.value.shape[-1] != weight.value.shape[0]:
        raise DimensionError(f"affine: input {x.shape} incompatible with weight {weight.shape}")
    if bias.value.shape != (weight.value.shape[1],):
        raise DimensionError(f"affine: bias {bias.shape} does not match weight {weight.shape}")
    xv, wv = x.value, weight.value
    out = xv @ wv + bias.value

    def vjp(g):
        flat_x = xv.reshape(-1, xv.shape[-1])
        flat_g = g.reshape(-1, g.shape[-1])
        return g @ wv.T, flat_x.T @ flat_g, flat_g.sum(axis=0)

    return tape._push(out, (x, weight, bias), vjp)


def dilated_causal_conv1d(x: Node, filters: Node, dilation: int, bias: Node | None = None) -> Node:
    """Causal 1-D convolution, layout ``[batch, channels, length]``.

    ``filters`` has shape ``[out_channels, in_channels, width]``; tap
    ``width - 1`` sees the current step, tap ``k`` sees
    ``(width - 1 - k) * dilation`` steps back. The input is left padded
    with zeros so the output keeps the input length.
    """
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    parents = (x, filters) if bias is None else (x, filters, bias)
    tape = _tape_of(*parents)
    xv, wv = x.value, filters.value
    if xv.ndim != 3 or wv.ndim != 3 or xv.shape[1] != wv.shape[1]:
        raise DimensionError(f"conv1d: input {xv.shape} incompatible with filters {wv.shape}")
    if bias is not None and bias.value.shape != (wv.shape[0],):
        raise DimensionError(f"conv1d: bias {bias.shape} does not match filters {wv.shape}")
    batch, _, length = xv.shape
    width = wv.shape[2]
    pad = dilation * (width - 1)
    xp = np.concatenate([np.zeros((batch, xv.shape[1], pad)), xv], axis=2) if pad else xv
    taps = [xp[:, :, k * dilation:k * dilation + length] for k in range(width)]
    # a strided filter slice pushes matmul off the BLAS fast path
    w_taps = [np.ascontiguousarray(wv[:, :, k]) for k in range(width)]
    out = np.zeros((batch, wv.shape[0], length))
    for k in range(width):
        out += np.matmul(w_taps[k], taps[k])
    if bias is not None:
        out += bias.value[None, :, None]

    def vjp(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(wv)
        for k in range(width):
            gw[:, :, k] = np.tensordot(g, taps[k], axes=([0, 2], [0, 2]))
            gxp[:, :, k * dilation:k * dilation + length] += np.matmul(np.ascontiguousarray(w_taps[k].T), g)
        grads = (gxp[:, :, pad:], gw)
        if bias is not None:
            grads += (g.sum(axis=(0, 2)),)
        return grads

    return tape._push(out, parents, vjp)


def pointwise(kind: str, x: Node) -> Node:
    """Elementwise activation; leaky ReLU uses a fixed negative slope of 0.2."""
    v = x.value
    if kind == "leaky_relu":
        slope = np.where(v > 0, 1.0, LEAKY_SLOPE)
        out = v * slope
        deriv = lambda: slope  # noqa: E731
    elif kind == "tanh":
        out = np.tanh(v)
        deriv = lambda: 1.0 - out * out  # noqa: E731
    elif kind == "exp":
        out = np.exp(v)
        deriv = lambda: out  # noqa: E731
    elif kind == "sigmoid":
        out = 0.5 * (1.0 + np.tanh(0.5 * v))
        deriv = lambda: out * (1.0 - out)  # noqa: E731
    elif kind == "identity":
        out = v.copy()
        deriv = lambda: 1.0  # noqa: E731
    else:
        raise ValueError(f"unknown activation {kind!r}; expected one of {POINTWISE_KINDS}")
    return x.tape._push(out, (x,), lambda g: (g * deriv(),))


def log_softmax(x: Node) -> Node:
    v = x.value
    shifted = v - v.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return x.tape._push(out, (x,), vjp)


def logsumexp(x: Node) -> Node:
    """Max-shifted log-sum-exp over the last axis."""
    v = x.value
    m = v.max(axis=-1, keepdims=True)
    if v.shape[-1] == 1:
        out = v[..., 0].copy()
    else:
        out = (m + np.log(np.exp(v - m).sum(axis=-1, keepdims=True)))[..., 0]

    def vjp(g):
        weights = np.exp(v - out[..., None])
        return (g[..., None] * weights,)

    return x.tape._push(out, (x,), vjp)


def mixture_log_prob(log_pi: Node, mu: Node, sigma: Node, z: np.ndarray) -> Node:
    """``log sum_k exp(log_pi_k) N(z; mu_k, sigma_k^2)`` over the last axis.

    ``z`` is a constant broadcasting against ``mu[..., 0]``.
    """
    tape = _tape_of(log_pi, mu, sigma)
    lp, m, s = log_pi.value, mu.value, sigma.value
    u = (np.asarray(z, dtype=np.float64)[..., None] - m) / s
    comp = lp - 0.5 * u * u - np.log(s) - _HALF_LOG_2PI
    top = comp.max(axis=-1, keepdims=True)
    out = (top + np.log(np.exp(comp - top).sum(axis=-1, keepdims=True)))[..., 0]

    def vjp(g):
        resp = g[..., None] * np.exp(comp - out[..., None])
        return resp, resp * u / s, resp * (u * u - 1.0) / s

    return tape._push(out, (log_pi, mu, sigma), vjp)


# ---------------------------------------------------------------------------
# elementwise arithmetic and reductions


def add(a, b) -> Node:
    tape = (a if isinstance(a, Node) else b).tape
    a, b = _lift(tape, a), _lift(tape, b)
    sa, sb = a.value.shape, b.value.shape
    return tape._push(a.value + b.value, (a, b),
                      lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Node:
    tape = (a if isinstance(a, Node) else b).tape
    a, b = _lift(tape, a), _lift(tape, b)
    sa, sb = a.value.shape, b.value.shape
    return tape._push(a.value - b.value, (a, b),
                      lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Node:
    tape = (a if isinstance(a, Node) else b).tape
    a, b = _lift(tape, a), _lift(tape, b)
    av, bv = a.value, b.value
    return tape._push(av * bv, (a, b),
                      lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Node:
    tape = (a if isinstance(a, Node) else b).tape
    a, b = _lift(tape, a), _lift(tape, b)
    av, bv = a.value, b.value
    out = av / bv
    return tape._push(out, (a, b),
                      lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)))


def scale(x: Node, c: float) -> Node:
    return x.tape._push(x.value * c, (x,), lambda g: (g * c,))


def square(x: Node) -> Node:
    v = x.value
    return x.tape._push(v * v, (x,), lambda g: (2.0 * g * v,))


def log(x: Node) -> Node:
    v = x.value
    return x.tape._push(np.log(v), (x,), lambda g: (g / v,))


def total(x: Node, axis=None) -> Node:
    shape = x.value.shape
    out = x.value.sum(axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return x.tape._push(out, (x,), vjp)


def mean(x: Node, axis=None) -> Node:
    count = x.value.size if axis is None else np.prod([x.value.shape[a] for a in np.atleast_1d(axis)])
    return scale(total(x, axis), 1.0 / count)


def reshape(x: Node, shape: Sequence[int]) -> Node:
    old = x.value.shape
    return x.tape._push(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Node, axes: Sequence[int]) -> Node:
    inverse = np.argsort(axes)
    return x.tape._push(np.transpose(x.value, axes), (x,), lambda g: (np.transpose(g, inverse),))


def getitem(x: Node, index) -> Node:
    shape = x.value.shape

    fancy = any(isinstance(i, (list, np.ndarray)) for i in (index if isinstance(index, tuple) else (index,)))

    def vjp(g):
        full = np.zeros(shape)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return x.tape._push(x.value[index], (x,), vjp)


def concat(nodes: Sequence[Node], axis: int) -> Node:
    tape = _tape_of(*nodes)
    sizes = [n.value.shape[axis] for n in nodes]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(np.take(g, range(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return tape._push(np.concatenate([n.value for n in nodes], axis=axis), nodes, vjp)


# ---------------------------------------------------------------------------


def backward(tape: Tape, loss: Node) -> dict[str, np.ndarray]:
    """Reverse sweep from a scalar ``loss``.

    Sets ``.grad`` on every recorded node (zeros where unreached) and
    returns the gradients of named trainable leaves.
    """
    if loss.tape is not tape:
        raise ValueError("loss node does not belong to this tape")
    if not tape.record:
        raise ValueError("tape was created with record=False")
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    for node in tape.nodes:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(tape.nodes[:loss.index + 1]):
        if node.grad is None or node.vjp is None:
            continue
        for parent, g in zip(node.parents, node.vjp(node.grad)):
            if g is None:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g
    grads = {}
    for node in tape.nodes:
        if node.grad is None:
            node.grad = np.zeros_like(node.value)
        else:
            node.grad = np.asarray(node.grad, dtype=np.float64)
        if node.name is not None:
            grads[node.name] = node.grad
    return grads


def numerical_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn(x)
        flat[i] = orig - step
        lo = fn(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0
