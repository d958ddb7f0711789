"""Tape-based reverse-mode autodiff over dense float64 arrays, plus Adam.

Operations are recorded on the active :class:`Graph` (entered as a context
manager) whenever at least one input requires a gradient.  Outside a graph
nothing is recorded, which doubles as an inference mode.

    >>> x = Tensor([3.0], requires_grad=True)
    >>> with Graph() as g:
    ...     y = sum_(mul(x, x))
    >>> backward(g, y)
    >>> x.grad
    array([6.])
"""
from __future__ import annotations

import math
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "Tensor", "Graph", "Node", "AdamState", "GRUParams",
    "record_primitive", "backward", "adam_step", "clip_grad_norm", "zero_grad",
    "matmul", "add", "sub", "mul", "concat", "slice_", "sigmoid", "tanh",
    "softmax", "log_softmax", "embedding", "sum_", "mean", "nll",
    "bce_with_logits", "reshape", "stack", "gru_cell", "gru_sequence", "PreparedGRU", "init_uniform",
    "save_checkpoint", "load_checkpoint", "CHECKPOINT_MAGIC",
]


class Tensor:
    """Dense float64 array with an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_node")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._node: Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"


@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    index: int


class Graph:
    """Ordered record of primitive applications.

    Appending in execution order makes the node list a topological order.
    """

    _local = threading.local()

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Graph":
        stack = self._stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        self._stack().pop()

    @classmethod
    def _stack(cls) -> list["Graph"]:
        if not hasattr(cls._local, "stack"):
            cls._local.stack = []
        return cls._local.stack

    @classmethod
    def active(cls) -> "Graph | None":
        stack = cls._stack()
        return stack[-1] if stack else None

    def __len__(self) -> int:
        return len(self.nodes)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: np.ndarray, b: np.ndarray) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} do not conform") from None


# --- primitive rules --------------------------------------------------------
# Each rule maps input arrays (+ attrs) to (output, vjp).

def _p_matmul(a, b):
    if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != (b.shape[-2] if b.ndim > 1 else b.shape[0]):
        raise ValueError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    out = np.matmul(a, b)
    if b.ndim == 2 and a.ndim >= 2:
        # shared weight matrix: fold leading axes instead of batching
        def vjp(g):
            a2 = a.reshape(-1, a.shape[-1])
            return g @ b.T, a2.T @ g.reshape(-1, b.shape[-1])

        return out, vjp

    def vjp(g):
        a2 = a[None, :] if a.ndim == 1 else a
        b2 = b[:, None] if b.ndim == 1 else b
        g2 = g
        if a.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if b.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = np.matmul(g2, np.swapaxes(b2, -1, -2))
        gb = np.matmul(np.swapaxes(a2, -1, -2), g2)
        if a.ndim == 1:
            ga = ga[..., 0, :]
        if b.ndim == 1:
            gb = gb[..., 0]
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return out, vjp


def _p_add(a, b):
    _broadcast_shape("add", a, b)
    return a + b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))


def _p_sub(a, b):
    _broadcast_shape("sub", a, b)
    return a - b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))


def _p_mul(a, b):
    _broadcast_shape("mul", a, b)
    return a * b, lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


def _p_concat(*arrays, axis=-1):
    ref = arrays[0]
    for other in arrays[1:]:
        if other.ndim != ref.ndim or any(
            m != n for i, (m, n) in enumerate(zip(ref.shape, other.shape)) if i != axis % ref.ndim
        ):
            raise ValueError(f"concat: shapes {ref.shape} and {other.shape} do not conform")
    out = np.concatenate(arrays, axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in arrays])[:-1]
    return out, lambda g: tuple(np.split(g, bounds, axis=axis))


def _p_slice(a, index=()):
    out = a[index]

    def vjp(g):
        ga = np.zeros_like(a)
        ga[index] = g
        return (ga,)

    return out, vjp


def _p_sigmoid(a):
    out = expit(a)
    return out, lambda g: (g * out * (1.0 - out),)


def _p_tanh(a):
    out = np.tanh(a)
    return out, lambda g: (g * (1.0 - out * out),)


def _softmax(a):
    e = np.exp(a - a.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _p_softmax(a):
    out = _softmax(a)
    return out, lambda g: (out * (g - (g * out).sum(axis=-1, keepdims=True)),)


def _p_log_softmax(a):
    shifted = a - a.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return out, vjp


def _p_embedding(weight, ids=None):
    ids = np.asarray(ids, dtype=np.int64)
    if weight.ndim != 2 or (ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0])):
        raise ValueError(f"embedding: ids out of range for table of shape {weight.shape}")
    out = weight[ids]

    def vjp(g):
        gw = np.zeros_like(weight)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (gw,)

    return out, vjp


def _p_sum(a, axis=None, keepdims=False):
    out = np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return out, vjp


def _p_mean(a, axis=None, keepdims=False):
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    out = np.asarray(a.mean(axis=axis, keepdims=keepdims))

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return out, vjp


def _p_nll(logp, targets=None, weights=None):
    """Weighted mean of -logp[i, target_i]; zero weights drop a row."""
    targets = np.asarray(targets, dtype=np.int64)
    if logp.ndim != 2 or targets.shape != (logp.shape[0],):
        raise ValueError(f"negative-log-likelihood: shapes {logp.shape} and {targets.shape} do not conform")
    w = np.ones(len(targets)) if weights is None else np.asarray(weights, dtype=np.float64)
    total = w.sum()
    rows = np.arange(len(targets))
    picked = logp[rows, targets]
    out = np.asarray(-(w * picked).sum() / total if total > 0 else 0.0)

    def vjp(g):
        gl = np.zeros_like(logp)
        if total > 0:
            gl[rows, targets] = -g * w / total
        return (gl,)

    return out, vjp


def _p_bce_with_logits(x, y):
    if x.shape != y.shape:
        raise ValueError(f"bce-with-logits: shapes {x.shape} and {y.shape} do not conform")
    loss = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    out = np.asarray(loss.mean())
    p = expit(x)

    def vjp(g):
        return (g * (p - y) / x.size, None)

    return out, vjp


def _p_reshape(a, shape=()):
    return a.reshape(shape), lambda g: (g.reshape(a.shape),)


def _p_stack(*arrays, axis=0):
    shapes = {x.shape for x in arrays}
    if len(shapes) != 1:
        raise ValueError(f"stack: shapes {sorted(shapes)} do not conform")
    out = np.stack(arrays, axis=axis)
    return out, lambda g: tuple(np.moveaxis(g, axis, 0))


def _p_gru_step(xzr, xh, h, Wh_zr, Wh_h, mask=None):
    """Fused GRU step from precomputed input-side pre-activations."""
    H = h.shape[-1]
    if xzr.shape[-1] != 2 * H or xh.shape[-1] != H or Wh_zr.shape != (H, 2 * H) or Wh_h.shape != (H, H):
        raise ValueError(f"gru_step: shapes {xzr.shape} and {h.shape} do not conform")
    zr = expit(xzr + h @ Wh_zr)
    z, r = zr[..., :H], zr[..., H:]
    rh = r * h
    c = np.tanh(xh + rh @ Wh_h)
    zm = z if mask is None else z * mask
    out = h + zm * (c - h)

    def vjp(g):
        da_h = g * zm * (1.0 - c * c)
        drh = da_h @ Wh_h.T
        dzr = np.empty_like(zr)
        dzr[..., :H] = g * (c - h) if mask is None else g * mask * (c - h)
        dzr[..., H:] = drh * h
        dzr *= zr * (1.0 - zr)
        dh = g * (1.0 - zm) + drh * r + dzr @ Wh_zr.T
        h2 = h.reshape(-1, H)
        return (
            dzr, da_h, dh,
            h2.T @ dzr.reshape(-1, 2 * H),
            rh.reshape(-1, H).T @ da_h.reshape(-1, H),
        )

    return out, vjp


def _p_gru_seq(xzr, xh, h0, Wh_zr, Wh_h, mask=None, reverse=False):
    """Whole-sequence GRU over projected inputs (B, T, *); outputs (B, T, H)."""
    B, T, H = xh.shape
    if xzr.shape != (B, T, 2 * H) or h0.shape != (B, H) or Wh_zr.shape != (H, 2 * H) or Wh_h.shape != (H, H):
        raise ValueError(f"gru_seq: shapes {xzr.shape} and {h0.shape} do not conform")
    order = range(T - 1, -1, -1) if reverse else range(T)
    out = np.empty((B, T, H))
    zrs = np.empty((B, T, 2 * H))
    cs = np.empty((B, T, H))
    prev = np.empty((B, T, H))
    h = h0
    for t in order:
        zr = expit(xzr[:, t] + h @ Wh_zr)
        c = np.tanh(xh[:, t] + (zr[:, H:] * h) @ Wh_h)
        zm = zr[:, :H] if mask is None else zr[:, :H] * mask[:, t : t + 1]
        prev[:, t] = h
        zrs[:, t] = zr
        cs[:, t] = c
        h = h + zm * (c - h)
        out[:, t] = h

    def vjp(g):
        dxzr = np.empty_like(zrs)
        dxh = np.empty_like(cs)
        dWzr = np.zeros_like(Wh_zr)
        dWh = np.zeros_like(Wh_h)
        carry = np.zeros((B, H))
        for t in reversed(list(order)):
            gt = g[:, t] + carry
            zr, c, hp = zrs[:, t], cs[:, t], prev[:, t]
            z, r = zr[:, :H], zr[:, H:]
            zm = z if mask is None else z * mask[:, t : t + 1]
            da_h = gt * zm * (1.0 - c * c)
            drh = da_h @ Wh_h.T
            dzr = np.empty_like(zr)
            dzr[:, :H] = gt * (c - hp) if mask is None else gt * mask[:, t : t + 1] * (c - hp)
            dzr[:, H:] = drh * hp
            dzr *= zr * (1.0 - zr)
            dxzr[:, t] = dzr
            dxh[:, t] = da_h
            dWzr += hp.T @ dzr
            dWh += (r * hp).T @ da_h
            carry = gt * (1.0 - zm) + drh * r + dzr @ Wh_zr.T
        return dxzr, dxh, carry, dWzr, dWh

    return out, vjp


PRIMITIVES: dict[str, Callable] = {
    "gru_seq": _p_gru_seq,
    "gru_step": _p_gru_step,
    "matmul": _p_matmul,
    "add": _p_add,
    "sub": _p_sub,
    "mul": _p_mul,
    "concat": _p_concat,
    "slice": _p_slice,
    "sigmoid": _p_sigmoid,
    "tanh": _p_tanh,
    "softmax": _p_softmax,
    "log_softmax": _p_log_softmax,
    "embedding": _p_embedding,
    "sum": _p_sum,
    "mean": _p_mean,
    "nll": _p_nll,
    "bce_with_logits": _p_bce_with_logits,
    "reshape": _p_reshape,
    "stack": _p_stack,
}


def record_primitive(op_id: str, *inputs, **attrs) -> Tensor:
    """Apply primitive ``op_id`` and record it on the active graph if needed."""
    try:
        rule = PRIMITIVES[op_id]
    except KeyError:
        raise ValueError(f"unknown primitive {op_id!r}") from None
    tensors = tuple(_as_tensor(x) for x in inputs)
    out_data, vjp = rule(*(t.data for t in tensors), **attrs)
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(out_data, dtype=np.float64)
    out.name = None
    out.grad = None
    out._node = None
    graph = Graph.active()
    out.requires_grad = graph is not None and any(t.requires_grad for t in tensors)
    if out.requires_grad:
        node = Node(op_id, tensors, out, vjp, len(graph.nodes))
        graph.nodes.append(node)
        out._node = node
    return out


def backward(graph: Graph, loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires-grad leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    stop = loss._node.index if loss._node is not None else -1
    for node in reversed(graph.nodes[: stop + 1]):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp.is_leaf:
                inp.grad += gi
            else:
                prev = grads.get(id(inp))
                grads[id(inp)] = gi if prev is None else prev + gi
    if loss.is_leaf:
        loss.grad += 1.0


# --- thin wrappers ----------------------------------------------------------

def matmul(a, b) -> Tensor:
    return record_primitive("matmul", a, b)


def add(a, b) -> Tensor:
    return record_primitive("add", a, b)


def sub(a, b) -> Tensor:
    return record_primitive("sub", a, b)


def mul(a, b) -> Tensor:
    return record_primitive("mul", a, b)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    return record_primitive("concat", *tensors, axis=axis)


def slice_(a, index) -> Tensor:
    return record_primitive("slice", a, index=index)


def sigmoid(a) -> Tensor:
    return record_primitive("sigmoid", a)


def tanh(a) -> Tensor:
    return record_primitive("tanh", a)


def softmax(a) -> Tensor:
    return record_primitive("softmax", a)


def log_softmax(a) -> Tensor:
    return record_primitive("log_softmax", a)


def embedding(weight, ids) -> Tensor:
    return record_primitive("embedding", weight, ids=ids)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    return record_primitive("sum", a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    return record_primitive("mean", a, axis=axis, keepdims=keepdims)


def nll(logp, targets, weights=None) -> Tensor:
    return record_primitive("nll", logp, targets=targets, weights=weights)


def bce_with_logits(logits, targets) -> Tensor:
    return record_primitive("bce_with_logits", logits, targets)


def reshape(a, shape) -> Tensor:
    return record_primitive("reshape", a, shape=tuple(shape))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    return record_primitive("stack", *tensors, axis=axis)


# --- GRU --------------------------------------------------------------------

@dataclass
class GRUParams:
    """Gate weights act on the concatenation ``[x; h]`` (row-vector convention)."""

    Wz: Tensor
    Wr: Tensor
    Wh: Tensor
    bz: Tensor
    br: Tensor
    bh: Tensor

    @property
    def input_size(self) -> int:
        return self.Wz.shape[0] - self.Wz.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.Wz.shape[1]

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{k}": getattr(self, k) for k in ("Wz", "Wr", "Wh", "bz", "br", "bh")}

    @classmethod
    def create(cls, input_size: int, hidden_size: int, rng: np.random.Generator | None) -> "GRUParams":
        fan_in = input_size + hidden_size
        mats = [init_uniform((fan_in, hidden_size), fan_in, rng) for _ in range(3)]
        biases = [Tensor(np.zeros(hidden_size), requires_grad=True) for _ in range(3)]
        return cls(*mats, *biases)


class PreparedGRU:
    """GRU weights fused for repeated stepping within one graph.

    The z and r gates share one matmul; input projections for a whole
    sequence can be hoisted out of the time loop with :meth:`project_inputs`.
    """

    def __init__(self, params: GRUParams):
        I, H = params.input_size, params.hidden_size
        self.input_size, self.hidden_size = I, H
        W_zr = concat([params.Wz, params.Wr], axis=1)
        self.W_zr = W_zr
        self.b_zr = concat([params.bz, params.br])
        self.Wx_zr = slice_(W_zr, (slice(None, I),))
        self.Wh_zr = slice_(W_zr, (slice(I, None),))
        self.W_h = params.Wh
        self.Wx_h = slice_(params.Wh, (slice(None, I),))
        self.Wh_h = slice_(params.Wh, (slice(I, None),))
        self.b_h = params.bh

    def check(self, x: Tensor, h: Tensor) -> None:
        if x.shape[-1] != self.input_size or h.shape[-1] != self.hidden_size:
            raise ValueError(
                f"gru_cell: input dim {x.shape[-1]} / state dim {h.shape[-1]} do not match "
                f"cell sizes ({self.input_size}, {self.hidden_size})"
            )

    def step(self, x, h, mask=None) -> Tensor:
        x, h = _as_tensor(x), _as_tensor(h)
        self.check(x, h)
        zr = sigmoid(add(matmul(concat([x, h]), self.W_zr), self.b_zr))
        cand = tanh(add(matmul(concat([x, mul(self._r(zr), h)]), self.W_h), self.b_h))
        return self._mix(h, self._z(zr), cand, mask)

    def project_inputs(self, xs: Tensor) -> tuple[Tensor, Tensor]:
        """Input-side gate pre-activations for every position of ``xs`` (..., T, I)."""
        return add(matmul(xs, self.Wx_zr), self.b_zr), add(matmul(xs, self.Wx_h), self.b_h)

    def step_projected(self, xzr: Tensor, xh: Tensor, h: Tensor, mask=None) -> Tensor:
        """Same arithmetic as :meth:`step`, as one fused primitive."""
        return record_primitive("gru_step", xzr, xh, h, self.Wh_zr, self.Wh_h, mask=mask)

    def step_fused(self, x, h, mask=None) -> Tensor:
        xzr, xh = self.project_inputs(_as_tensor(x))
        return self.step_projected(xzr, xh, _as_tensor(h), mask)

    def _z(self, zr):
        return slice_(zr, (Ellipsis, slice(None, self.hidden_size)))

    def _r(self, zr):
        return slice_(zr, (Ellipsis, slice(self.hidden_size, None)))

    @staticmethod
    def _mix(h, z, cand, mask):
        h_next = add(h, mul(z, sub(cand, h)))
        if mask is not None:
            h_next = add(h, mul(mask, sub(h_next, h)))
        return h_next


def gru_cell(x, h_prev, params: GRUParams, mask=None) -> Tensor:
    """One GRU step.

    z = sigmoid([x;h] Wz + bz), r = sigmoid([x;h] Wr + br),
    h~ = tanh([x; r*h] Wh + bh), h' = (1 - z) * h + z * h~.

    ``mask`` (batch, 1) of 0/1 freezes the state where it is 0 (padding).
    """
    return PreparedGRU(params).step(x, h_prev, mask)


def gru_sequence(xs: Tensor, params: GRUParams | PreparedGRU, mask: np.ndarray | None = None,
                 reverse: bool = False, h0=None) -> Tensor:
    """Run a GRU over ``xs`` (B, T, I); returns states (B, T, H) in position order.

    Padded positions (mask 0) carry the previous state through unchanged.
    """
    cell = params if isinstance(params, PreparedGRU) else PreparedGRU(params)
    B = xs.shape[0]
    h = _as_tensor(h0) if h0 is not None else Tensor(np.zeros((B, cell.hidden_size)))
    cell.check(xs, h)
    xzr, xh = cell.project_inputs(xs)
    if mask is not None and mask.all():
        mask = None
    return record_primitive("gru_seq", xzr, xh, h, cell.Wh_zr, cell.Wh_h, mask=mask, reverse=reverse)


# --- parameters and optimisation --------------------------------------------

def init_uniform(shape, fan_in: int, rng: np.random.Generator | None) -> Tensor:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); ``rng=None`` gives zeros."""
    if rng is None:
        return Tensor(np.zeros(shape), requires_grad=True)
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        if p.grad is not None:
            p.grad.fill(0.0)


def clip_grad_norm(params: Iterable[Tensor], max_norm: float = 5.0) -> float:
    params = [p for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.vdot(p.grad, p.grad)) for p in params))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            p.grad *= scale
    return total


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1 and self.lr > 0 and self.eps > 0):
            raise ValueError("Adam requires 0<beta1<1, 0<beta2<1, lr>0, eps>0")


def adam_step(
    state: AdamState,
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray] | None = None,
) -> None:
    """Bias-corrected Adam update, in place.  Grads default to ``p.grad``."""
    if grads is None:
        grads = {k: p.grad for k, p in params.items()}
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        tmp = np.empty_like(p.data)
        np.multiply(g, 1.0 - b1, out=tmp)
        m *= b1
        m += tmp
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - b2
        v *= b2
        v += tmp
        np.sqrt(v, out=tmp)
        tmp *= 1.0 / math.sqrt(c2)
        tmp += state.eps
        np.divide(m, tmp, out=tmp)
        tmp *= state.lr / c1
        p.data -= tmp


# --- checkpoint format ------------------------------------------------------

CHECKPOINT_MAGIC = b"KG2V"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, arrays: Mapping[str, np.ndarray | Tensor]) -> None:
    """Binary layout (little-endian): magic, u32 version, u32 count, then per
    entry u32 name length, UTF-8 name, u32 rank, u64 dims, f64 values."""
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(arrays))]
    for name, arr in arrays.items():
        data = arr.data if isinstance(arr, Tensor) else np.asarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}Q", *data.shape))
        chunks.append(np.ascontiguousarray(data, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a KG2V checkpoint (bad magic)")
    pos = 4
    try:
        version, count = struct.unpack_from("<II", buf, pos)
        pos += 8
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
            n = int(np.prod(shape)) if rank else 1
            if pos + 8 * n > len(buf):
                raise ValueError(f"{path}: truncated checkpoint at entry {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * n
    except struct.error as exc:
        raise ValueError(f"{path}: truncated checkpoint") from exc
    if pos != len(buf):
        raise ValueError(f"{path}: trailing bytes after last entry")
    return out
