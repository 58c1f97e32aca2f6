"""
Dense tensor engine with reverse-mode automatic differentiation.

Every primitive returns a new Tensor that remembers its parents and a rule
mapping the output gradient to one gradient per parent. `ComputeTape` orders
those records topologically so `backward` visits each node exactly once and
accumulates gradients additively across fan-out.

All storage is float64.
"""
import logging
import os
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from dotenv import load_dotenv
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, log_expit, logsumexp

from errors import DataError, DimensionError

load_dotenv()

logger = logging.getLogger(__name__)

DEBUG_NUMERICS = os.getenv("SAGECHAIN_DEBUG_NUMERICS", "").strip().lower() in ("1", "true", "yes", "on")

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: Tuple["Tensor", ...] = (),
                 _backward: Optional[BackwardFn] = None, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError("item: tensor is not a scalar", self.shape)
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # operator sugar, all routed through the primitives below
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, key): return slice_(self, key)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, op="param")


def _result(data: np.ndarray, parents: Tuple[Tensor, ...], backward: BackwardFn, op: str) -> Tensor:
    if DEBUG_NUMERICS and all(np.all(np.isfinite(p.data)) for p in parents):
        if not np.all(np.isfinite(data)):
            raise FloatingPointError(f"{op} produced non-finite values from finite inputs")
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward, op=op)
    return Tensor(data, op=op)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes", a.shape, b.shape) from None


# ============= ELEMENTWISE ARITHMETIC =============

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape))
    return _result(out, (a, b), backward, "div")


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


# ============= LINEAR ALGEBRA AND SHAPE =============

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """2-D matrix product."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError("matmul: incompatible shapes", a.shape, b.shape)
    return _result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def transpose(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _result(a.data.T, (a,), lambda g: (g.T,), "transpose")


def reshape(a: ArrayLike, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError("reshape: cannot reshape", a.shape, shape) from None
    return _result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat: nothing to concatenate")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError("concat: incompatible shapes", *[t.shape for t in tensors]) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))
    return _result(out, tuple(tensors), backward, "concat")


def slice_(a: ArrayLike, key) -> Tensor:
    """Basic or integer-array indexing; gradients scatter-add back."""
    a = as_tensor(a)
    try:
        out = a.data[key]
    except IndexError as exc:
        raise DimensionError(f"slice: {exc}", a.shape) from None

    def backward(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, key, g)
        return (grad,)
    return _result(np.array(out, dtype=np.float64), (a,), backward, "slice")


def take(a: ArrayLike, indices: Sequence[int], axis: int = 0) -> Tensor:
    """Gather along `axis`; repeated indices accumulate gradient."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < -a.shape[axis] or indices.max() >= a.shape[axis]):
        raise DimensionError(f"take: index out of range for axis {axis}", a.shape)
    out = np.take(a.data, indices, axis=axis)

    def backward(g):
        grad = np.zeros_like(a.data)
        moved = np.moveaxis(grad, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (grad,)
    return _result(out, (a,), backward, "take")


def unfold1d(x: ArrayLike, width: int) -> Tensor:
    """(L x C) -> (L-width+1 x C*width) sliding windows, channel-major columns."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError("unfold1d: expected a (length x channels) matrix", x.shape)
    length, channels = x.shape
    if length < width:
        raise DimensionError(f"unfold1d: sequence shorter than kernel width {width}", x.shape)
    windows = sliding_window_view(x.data, width, axis=0)
    out_len = length - width + 1
    out = np.ascontiguousarray(windows).reshape(out_len, channels * width)

    def backward(g):
        g3 = g.reshape(out_len, channels, width)
        grad = np.zeros_like(x.data)
        for k in range(width):
            grad[k:k + out_len] += g3[:, :, k]
        return (grad,)
    return _result(out, (x,), backward, "unfold1d")


# ============= NONLINEARITIES =============

def relu(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a: ArrayLike, alpha: float = 0.1) -> Tensor:
    if not 0.0 <= alpha < 1.0:
        raise DataError(f"leaky_relu alpha must lie in [0, 1), got {alpha}")
    a = as_tensor(a)
    slope = np.where(a.data >= 0, 1.0, alpha)
    return _result(a.data * slope, (a,), lambda g: (g * slope,), "leaky_relu")


def sigmoid(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def log_sigmoid(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _result(log_expit(a.data), (a,), lambda g: (g * expit(-a.data),), "log_sigmoid")


def tanh(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


# ============= REDUCTIONS =============

def _expand_reduced(g: np.ndarray, shape: Tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(a: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return _result(np.asarray(out), (a,),
                   lambda g: (np.array(_expand_reduced(g, a.shape, axis, keepdims)),), "sum")


def mean(a: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)
    return _result(np.asarray(out), (a,),
                   lambda g: (np.array(_expand_reduced(g, a.shape, axis, keepdims)) / count,), "mean")


def max_over(a: ArrayLike, axis: int = 0, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Element-wise max over a set.

    Without a mask the set is `axis`. With a boolean mask (m x n) over the rows
    of a (n x d) matrix, output row i is the max over rows j with mask[i, j].
    Gradient flows to the first maximal entry.
    """
    a = as_tensor(a)
    if mask is None:
        idx = np.argmax(a.data, axis=axis)
        out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

        def backward(g):
            grad = np.zeros_like(a.data)
            np.put_along_axis(grad, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
            return (grad,)
        return _result(out, (a,), backward, "max_over")

    mask = np.asarray(mask, dtype=bool)
    if a.ndim != 2 or mask.ndim != 2 or mask.shape[1] != a.shape[0]:
        raise DimensionError("max_over: mask must be (m x n) for an (n x d) input", mask.shape, a.shape)
    if not mask.any(axis=1).all():
        raise DataError("max_over: every mask row needs at least one member")
    candidates = np.where(mask[:, :, None], a.data[None, :, :], -np.inf)
    idx = np.argmax(candidates, axis=1)
    cols = np.broadcast_to(np.arange(a.shape[1]), idx.shape)
    out = a.data[idx, cols]

    def backward(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, (idx, cols), g)
        return (grad,)
    return _result(out, (a,), backward, "max_over")


def l2_normalize_rows(a: ArrayLike) -> Tensor:
    """Divide each row by its Euclidean norm; a zero row stays zero."""
    a = as_tensor(a)
    norms = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    safe = np.where(norms > 0, norms, 1.0)
    out = np.where(norms > 0, a.data / safe, 0.0)

    def backward(g):
        proj = (g * out).sum(axis=-1, keepdims=True)
        return (np.where(norms > 0, (g - out * proj) / safe, 0.0),)
    return _result(out, (a,), backward, "l2_normalize_rows")


# ============= SOFTMAX FAMILY =============

def log_softmax(logits: ArrayLike, axis: int = -1) -> Tensor:
    """Max-shifted log-softmax."""
    logits = as_tensor(logits)
    out = logits.data - logsumexp(logits.data, axis=axis, keepdims=True)

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)
    return _result(out, (logits,), backward, "log_softmax")


def masked_softmax(logits: ArrayLike, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax restricted to entries where `mask` is true; other entries are exactly 0."""
    logits = as_tensor(logits)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
    if not mask.any(axis=axis).all():
        raise DataError("masked_softmax: a row has no admissible entries")
    shifted = np.where(mask, logits.data, -np.inf)
    shifted = shifted - shifted.max(axis=axis, keepdims=True)
    weights = np.where(mask, np.exp(shifted), 0.0)
    out = weights / weights.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _result(out, (logits,), backward, "masked_softmax")


def cross_entropy(log_probs: ArrayLike, targets: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of integer targets under (n x C) log-probabilities."""
    log_probs = as_tensor(log_probs)
    targets = np.asarray(targets)
    if log_probs.ndim != 2 or targets.shape != (log_probs.shape[0],):
        raise DimensionError("cross_entropy: expected (n x C) log-probs and n targets",
                             log_probs.shape, targets.shape)
    n, n_classes = log_probs.shape
    if targets.size and (not np.issubdtype(targets.dtype, np.integer)
                         or targets.min() < 0 or targets.max() >= n_classes):
        raise DataError(f"cross_entropy: labels must be integers in [0, {n_classes})")
    rows = np.arange(n)
    out = -log_probs.data[rows, targets].mean()

    def backward(g):
        grad = np.zeros_like(log_probs.data)
        grad[rows, targets] = -g / n
        return (grad,)
    return _result(np.asarray(out), (log_probs,), backward, "cross_entropy")


def dropout(a: ArrayLike, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate is 0."""
    a = as_tensor(a)
    if rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return mul(a, keep)


# ============= FUSED RECURRENCE =============

def lstm_sequence(x_proj: ArrayLike, w_hh: ArrayLike) -> Tensor:
    """
    Run one LSTM layer over a sequence from a zero state.

    x_proj is the (T x 4H) input projection x_t W_ih + b, gate order
    [input, forget, cell, output]; w_hh is (H x 4H). Returns the (T x H)
    hidden states. Backward is truncation-free BPTT.
    """
    x_proj, w_hh = as_tensor(x_proj), as_tensor(w_hh)
    steps, four_h = x_proj.shape
    hidden = w_hh.shape[0]
    if four_h != 4 * hidden or w_hh.shape[1] != four_h:
        raise DimensionError("lstm_sequence: gate widths disagree", x_proj.shape, w_hh.shape)
    W = w_hh.data
    hs = np.zeros((steps + 1, hidden))
    cs = np.zeros((steps + 1, hidden))
    gates = np.zeros((steps, four_h))
    for t in range(steps):
        z = x_proj.data[t] + hs[t] @ W
        i = expit(z[:hidden])
        f = expit(z[hidden:2 * hidden])
        g = np.tanh(z[2 * hidden:3 * hidden])
        o = expit(z[3 * hidden:])
        cs[t + 1] = f * cs[t] + i * g
        hs[t + 1] = o * np.tanh(cs[t + 1])
        gates[t] = np.concatenate([i, f, g, o])

    def backward(grad_h):
        d_proj = np.zeros_like(x_proj.data)
        d_w = np.zeros_like(W)
        dh_next = np.zeros(hidden)
        dc_next = np.zeros(hidden)
        for t in reversed(range(steps)):
            i, f, g, o = np.split(gates[t], 4)
            tc = np.tanh(cs[t + 1])
            dh = grad_h[t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz = np.concatenate([dc * g * i * (1.0 - i),
                                 dc * cs[t] * f * (1.0 - f),
                                 dc * i * (1.0 - g * g),
                                 dh * tc * o * (1.0 - o)])
            d_proj[t] = dz
            d_w += np.outer(hs[t], dz)
            dh_next = W @ dz
            dc_next = dc * f
        return (d_proj, d_w)
    return _result(hs[1:].copy(), (x_proj, w_hh), backward, "lstm_sequence")


# ============= TAPE AND BACKWARD =============

class ComputeTape:
    """Topologically ordered primitive applications that produced `root`."""

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @classmethod
    def record(cls, root: Tensor) -> "ComputeTape":
        order: List[Tensor] = []
        seen = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.nodes)

    def backward(self, loss: Tensor):
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            if node._backward is None or node.grad is None:
                continue
            grads = node._backward(node.grad)
            for parent, grad in zip(node._parents, grads):
                if grad is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(grad, dtype=np.float64)
                else:
                    parent.grad = parent.grad + grad


def backward(loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> ComputeTape:
    """
    Populate gradients of every requires_grad tensor reachable from a scalar loss.

    When `params` is given their gradients are reset to zero first, so
    parameters the loss does not reach end with a zero gradient.
    """
    if loss.size != 1:
        raise DimensionError("backward: loss must be a scalar", loss.shape)
    if params is not None:
        for p in params:
            p.zero_grad()
    tape = ComputeTape.record(loss)
    if loss.requires_grad:
        tape.backward(loss)
    return tape


# ============= MODULES =============

def glorot_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Module:
    """
    Parameter container. Tensor attributes with requires_grad are parameters,
    Module attributes (or lists of them) are children, names listed in
    `_buffers` are non-trainable arrays that still travel with checkpoints.
    """
    _buffers: Tuple[str, ...] = ()

    training: bool = True

    def children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Tensor) and item.requires_grad:
                        yield f"{prefix}{name}.{i}", item
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: np.array(b, dtype=np.float64) for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        params = dict(self.named_parameters())
        buffers = {name for name, _ in self.named_buffers()}
        missing = (set(params) | buffers) - set(state)
        if missing:
            raise DimensionError(f"load_state_dict: missing entries {sorted(missing)}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise DimensionError(f"load_state_dict: shape of '{name}'", state[name].shape, p.shape)
            p.data = np.array(state[name], dtype=np.float64)
        for name in buffers:
            owner, attr = self._resolve(name)
            setattr(owner, attr, np.array(state[name], dtype=np.float64))

    def _resolve(self, dotted: str) -> Tuple["Module", str]:
        parts = dotted.split(".")
        owner: Module = self
        i = 0
        while i < len(parts) - 1:
            value = getattr(owner, parts[i])
            if isinstance(value, (list, tuple)):
                value = value[int(parts[i + 1])]
                i += 1
            owner = value
            i += 1
        return owner, parts[-1]

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))


class Linear(Module):
    """y = x W^T + b with W of shape (out x in)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = parameter(glorot_uniform(rng, (out_dim, in_dim), in_dim, out_dim))
        self.bias = parameter(np.zeros(out_dim)) if bias else None

    def __call__(self, x: ArrayLike) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(f"Linear expects (n x {self.in_dim}) input", x.shape)
        out = matmul(x, transpose(self.weight))
        return add(out, self.bias) if self.bias is not None else out


# ============= GRADIENT CHECKING =============

def numerical_gradient(loss_fn: Callable[[], Tensor], tensor: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar loss w.r.t. one tensor's data."""
    tensor.data = np.ascontiguousarray(tensor.data)
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = loss_fn().item()
        flat[i] = original - h
        minus = loss_fn().item()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * h)
    return grad


def gradient_check(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-5,
                   atol: float = 1e-8) -> float:
    """
    Largest relative error between analytic and numerical gradients over `tensors`,
    measured per tensor as ||a - n|| / max(||a|| + ||n||, 1e-12). A tensor whose
    absolute difference ||a - n|| is below `atol` counts as exact.
    """
    loss = loss_fn()
    backward(loss, tensors)
    analytic = [t.grad.copy() for t in tensors]
    worst = 0.0
    for t, a in zip(tensors, analytic):
        n = numerical_gradient(loss_fn, t, h)
        diff = float(np.linalg.norm(a - n))
        if diff < atol:
            continue
        denom = max(np.linalg.norm(a) + np.linalg.norm(n), 1e-12)
        worst = max(worst, diff / denom)
    return worst
