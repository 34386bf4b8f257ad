"""Small reverse-mode autodiff over dense float64 arrays, plus the layers GLOVE needs.

A :class:`Tensor` remembers the operation that produced it. Calling
``backward()`` on a scalar result walks that record in reverse topological
order and accumulates ``grad`` on every tensor that requires it.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str = "", _parents=(), _backward=None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self.name = name
        self._parents = _parents
        self._backward = _backward

    # -- construction helpers ---------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- graph traversal -----------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        if self._backward is None:
            raise RuntimeError("backward() needs a tensor produced by a recorded forward pass")
        if grad is None:
            if self.data.size != 1:
                raise RuntimeError("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
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
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # -- operators ---------------------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        return Tensor(
            self.data + other.data,
            _parents=(self, other),
            _backward=lambda g: (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape)),
        )

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.data, _parents=(self,), _backward=lambda g: (-g,))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        return Tensor(
            self.data * other.data,
            _parents=(self, other),
            _backward=lambda g: (
                _unbroadcast(g * other.data, self.shape),
                _unbroadcast(g * self.data, other.shape),
            ),
        )

    __rmul__ = __mul__

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.data.ndim != 2 or other.data.ndim != 2 or self.shape[1] != other.shape[0]:
            raise ValueError(f"matmul shape mismatch {self.shape} @ {other.shape}")
        return Tensor(
            self.data @ other.data,
            _parents=(self, other),
            _backward=lambda g: (g @ other.data.T, self.data.T @ g),
        )

    def __getitem__(self, idx):
        def back(g):
            out = np.zeros_like(self.data)
            np.add.at(out, idx, g)
            return (out,)

        return Tensor(self.data[idx], _parents=(self,), _backward=back)

    def sum(self, axis=None, keepdims: bool = False):
        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, self.shape).copy(),)

        return Tensor(self.data.sum(axis=axis, keepdims=keepdims), _parents=(self,), _backward=back)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def tanh(self):
        y = np.tanh(self.data)
        return Tensor(y, _parents=(self,), _backward=lambda g: (g * (1.0 - y * y),))

    def relu(self):
        mask = self.data > 0
        return Tensor(self.data * mask, _parents=(self,), _backward=lambda g: (g * mask,))

    def softmax(self):
        """Row-wise softmax over the last axis."""
        s = softmax(self.data)

        def back(g):
            return (s * (g - np.sum(g * s, axis=-1, keepdims=True)),)

        return Tensor(s, _parents=(self,), _backward=back)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), _parents=tuple(tensors), _backward=back)


def softmax(x: np.ndarray) -> np.ndarray:
    z = np.asarray(x, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": Tensor.relu,
    "tanh": Tensor.tanh,
    "identity": lambda t: t,
}


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


# -- graph convolution ---------------------------------------------------------------


def normalized_adjacency(A: np.ndarray) -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2`` with ``D`` the degree matrix of ``A + I``."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("adjacency must be square")
    if not np.array_equal(A, A.T):
        raise ValueError("adjacency must be symmetric")
    a_tilde = A + np.eye(len(A))
    d = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return a_tilde * d[:, None] * d[None, :]


class Linear:
    def __init__(self, rng, in_dim: int, out_dim: int, activation: str = "identity", name: str = "fc", bias: bool = True):
        self.W = parameter(glorot(rng, in_dim, out_dim), f"{name}.W")
        self.b = parameter(np.zeros((1, out_dim)), f"{name}.b") if bias else None
        self.activation = activation

    def parameters(self) -> list[Tensor]:
        return [self.W] + ([self.b] if self.b is not None else [])

    def __call__(self, x: Tensor) -> Tensor:
        return fc_forward(self.W, self.b, x, self.activation)


class GcnLayer:
    """Shared-weight graph convolution; the weight shape does not depend on the graph."""

    def __init__(self, rng, in_dim: int, out_dim: int, activation: str = "relu", name: str = "gcn"):
        self.W = parameter(glorot(rng, in_dim, out_dim), f"{name}.W")
        self.activation = activation

    def parameters(self) -> list[Tensor]:
        return [self.W]

    def __call__(self, a_norm, x: Tensor) -> Tensor:
        return gcn_forward(self, a_norm, x)


def fc_forward(W: Tensor, b: Tensor | None, x, activation: str = "identity") -> Tensor:
    y = as_tensor(x) @ W
    if b is not None:
        y = y + b
    return ACTIVATIONS[activation](y)


def gcn_forward(layer: GcnLayer, a_norm, F) -> Tensor:
    F = as_tensor(F)
    a = a_norm.data if isinstance(a_norm, Tensor) else np.asarray(a_norm, dtype=np.float64)
    if a.shape[1] != F.shape[0]:
        raise ValueError(f"adjacency {a.shape} does not match features {F.shape}")
    return ACTIVATIONS[layer.activation](Tensor(a) @ F @ layer.W)


# -- optimizer -----------------------------------------------------------------------


class Adam:
    def __init__(self, params: Iterable[Tensor], lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, direction: str = "descend") -> None:
        if direction not in ("ascend", "descend"):
            raise ValueError("direction must be 'ascend' or 'descend'")
        sign = -1.0 if direction == "ascend" else 1.0
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1**self.t
        corr2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = sign * (p.grad if p.grad is not None else np.zeros_like(p.data))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)


def adam_step(state: Adam, direction: str = "descend") -> None:
    state.step(direction)


# -- gradient checking ------------------------------------------------------------------


def numerical_grad(f: Callable[[], float], p: Tensor, eps: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(p.data)
    flat = p.data.reshape(-1)
    gf = g.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        up = f()
        flat[k] = orig - eps
        down = f()
        flat[k] = orig
        gf[k] = (up - down) / (2 * eps)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def gradcheck(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients."""
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        numeric = numerical_grad(lambda: float(loss_fn().data), p, eps)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


# -- checkpoints ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = "glove-params 1"


def save_params(path, params: Sequence[Tensor], meta: dict[str, str] | None = None) -> None:
    """Text checkpoint: magic line, ``# key=value`` metadata, then per tensor a
    ``name ndim dims...`` line followed by one line of ``float.hex`` values."""
    lines = [CHECKPOINT_MAGIC]
    for k, v in (meta or {}).items():
        lines.append(f"# {k}={v}")
    for p in params:
        lines.append(" ".join([p.name, str(p.data.ndim), *map(str, p.shape)]))
        lines.append(" ".join(float(x).hex() for x in p.data.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_params(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a parameter checkpoint")
    meta: dict[str, str] = {}
    arrays: dict[str, np.ndarray] = {}
    k = 1
    while k < len(lines) and lines[k].startswith("# "):
        key, _, value = lines[k][2:].partition("=")
        meta[key] = value
        k += 1
    while k < len(lines):
        head = lines[k].split()
        name, ndim = head[0], int(head[1])
        shape = tuple(int(x) for x in head[2 : 2 + ndim])
        body = lines[k + 1].split() if k + 1 < len(lines) else []
        values = np.array([float.fromhex(x) for x in body], dtype=np.float64)
        if values.size != int(np.prod(shape)):
            raise ValueError(f"{path}: tensor {name} has {values.size} values for shape {shape}")
        arrays[name] = values.reshape(shape)
        k += 2
    return arrays, meta


def assign_params(params: Sequence[Tensor], arrays: dict[str, np.ndarray]) -> None:
    names = [p.name for p in params]
    if sorted(names) != sorted(arrays):
        missing = sorted(set(names) ^ set(arrays))
        raise ValueError(f"checkpoint does not match the architecture: {missing[:4]}")
    for p in params:
        if arrays[p.name].shape != p.shape:
            raise ValueError(f"checkpoint shape mismatch for {p.name}: {arrays[p.name].shape} vs {p.shape}")
        p.data = arrays[p.name].copy()
