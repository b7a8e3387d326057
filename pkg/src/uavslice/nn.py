"""Minimal reverse-mode autodiff over float64 numpy arrays.

Covers exactly what the actor/critic architectures need: dense layers,
multi-head self-attention, the usual activations, softmax, and Adam.
Gradients flow to parameters and to network inputs (the actor update
needs dQ/da).
"""

from __future__ import annotations

import struct

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to the shape it was broadcast from."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    """Node in the computation tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(
            p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def assert_finite(self, where: str = "tensor"):
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"non-finite values in {where}")
        return self

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = _wrap(other)

        def bw(g, out):
            return (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape))
        return Tensor(self.data + other.data, parents=(self, other), backward=bw)

    __radd__ = __add__

    def __sub__(self, other):
        other = _wrap(other)

        def bw(g, out):
            return (_unbroadcast(g, self.shape), _unbroadcast(-g, other.shape))
        return Tensor(self.data - other.data, parents=(self, other), backward=bw)

    def __neg__(self):
        return Tensor(-self.data, parents=(self,), backward=lambda g, out: (-g,))

    def __mul__(self, other):
        other = _wrap(other)

        def bw(g, out):
            return (_unbroadcast(g * other.data, self.shape),
                    _unbroadcast(g * self.data, other.shape))
        return Tensor(self.data * other.data, parents=(self, other), backward=bw)

    __rmul__ = __mul__

    def __matmul__(self, other):
        def bw(g, out):
            ga = _unbroadcast(g @ other.data.swapaxes(-1, -2), self.shape)
            gb = _unbroadcast(self.data.swapaxes(-1, -2) @ g, other.shape)
            return (ga, gb)
        return Tensor(self.data @ other.data, parents=(self, other), backward=bw)

    def transpose(self):
        """Swap the last two axes (matrix transpose, batch aware)."""
        return Tensor(self.data.swapaxes(-1, -2), parents=(self,),
                      backward=lambda g, out: (g.swapaxes(-1, -2),))

    def __getitem__(self, key):
        def bw(g, out):
            # basic (slice) indexing only, so += scatters without aliasing
            full = np.zeros_like(self.data)
            full[key] += g
            return (full,)
        return Tensor(self.data[key], parents=(self,), backward=bw)

    def reshape(self, *shape):
        old = self.shape
        return Tensor(self.data.reshape(*shape), parents=(self,),
                      backward=lambda g, out: (g.reshape(old),))

    def sum(self, axis=None, keepdims=False):
        def bw(g, out):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, self.shape).copy(),)
        return Tensor(self.data.sum(axis=axis, keepdims=keepdims),
                      parents=(self,), backward=bw)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def square(self):
        return Tensor(self.data ** 2, parents=(self,),
                      backward=lambda g, out: (2.0 * self.data * g,))

    # -- nonlinearities -----------------------------------------------------

    def relu(self):
        return Tensor(np.maximum(self.data, 0.0), parents=(self,),
                      backward=lambda g, out: (g * (self.data > 0),))

    def tanh(self):
        return Tensor(np.tanh(self.data), parents=(self,),
                      backward=lambda g, out: (g * (1.0 - out.data ** 2),))

    def sigmoid(self):
        y = 1.0 / (1.0 + np.exp(-np.clip(self.data, -500, 500)))
        return Tensor(y, parents=(self,),
                      backward=lambda g, out: (g * out.data * (1 - out.data),))

    def softmax(self, axis=-1):
        """Max-shifted softmax along an axis."""
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=axis, keepdims=True)

        def bw(g, out):
            dot = (g * out.data).sum(axis=axis, keepdims=True)
            return (out.data * (g - dot),)
        return Tensor(y, parents=(self,), backward=bw)

    # -- backprop -----------------------------------------------------------

    def backward(self, upstream=None):
        """Reverse-mode sweep from this node; seeds with ones by default."""
        topo, seen = [], set()

        def visit(node):
            if id(node) in seen:
                return
            seen.add(id(node))
            for p in node._parents:
                visit(p)
            topo.append(node)
        visit(self)

        self.grad = (np.ones_like(self.data) if upstream is None
                     else np.asarray(upstream, dtype=np.float64))
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad, node)):
                if not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g.copy()
                else:
                    parent.grad += g


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors, axis=0):
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g, out):
        return tuple(np.split(g, splits, axis=axis))
    return Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                  parents=tuple(tensors), backward=bw)


ACTIVATIONS = {
    "relu": Tensor.relu,
    "tanh": Tensor.tanh,
    "sigmoid": Tensor.sigmoid,
    "identity": lambda t: t,
}


class Dense:
    """Fully connected layer, weights stored out x in."""

    def __init__(self, in_dim, out_dim, activation="relu", rng=None, scale=1.0):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng or np.random.default_rng(0)
        bound = scale / np.sqrt(in_dim)
        self.weight = Tensor(rng.uniform(-bound, bound, (out_dim, in_dim)),
                             requires_grad=True)
        self.bias = Tensor(rng.uniform(-bound, bound, out_dim),
                           requires_grad=True)
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[1]:
            raise ValueError(
                f"dense: input width {x.shape[-1]} != {self.weight.shape[1]}")
        pre = x @ self.weight.transpose() + self.bias
        return ACTIVATIONS[self.activation](pre)

    def parameters(self, prefix=""):
        return [(prefix + "weight", self.weight), (prefix + "bias", self.bias)]


class MultiHeadAttention:
    """Scaled dot-product self-attention over a short token sequence."""

    def __init__(self, d_model, n_heads, rng=None):
        if d_model % n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        rng = rng or np.random.default_rng(0)
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = Dense(d_model, d_model, "identity", rng)
        self.wk = Dense(d_model, d_model, "identity", rng)
        self.wv = Dense(d_model, d_model, "identity", rng)
        self.wo = Dense(d_model, d_model, "identity", rng)

    def __call__(self, tokens: Tensor) -> Tensor:
        if tokens.shape[-1] != self.d_model:
            raise ValueError("attention: token width mismatch")
        q, k, v = self.wq(tokens), self.wk(tokens), self.wv(tokens)
        heads = []
        inv = 1.0 / np.sqrt(self.d_head)
        for h in range(self.n_heads):
            sl = slice(h * self.d_head, (h + 1) * self.d_head)
            qh, kh, vh = q[..., sl], k[..., sl], v[..., sl]
            scores = (qh @ kh.transpose()) * inv
            heads.append(scores.softmax(axis=-1) @ vh)
        return self.wo(concat(heads, axis=-1))

    def parameters(self, prefix=""):
        out = []
        for nm, proj in (("q", self.wq), ("k", self.wk),
                         ("v", self.wv), ("o", self.wo)):
            out += proj.parameters(f"{prefix}{nm}.")
        return out


class MLP:
    """Stack of dense layers; hidden activation relu, output configurable."""

    def __init__(self, widths, rng, out_activation="identity",
                 final_scale=1.0):
        self.layers = []
        for i in range(len(widths) - 1):
            last = i == len(widths) - 2
            self.layers.append(Dense(
                widths[i], widths[i + 1],
                out_activation if last else "relu", rng,
                scale=final_scale if last else 1.0))

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def parameters(self, prefix=""):
        out = []
        for i, layer in enumerate(self.layers):
            out += layer.parameters(f"{prefix}l{i}.")
        return out


class Adam:
    """Bias-corrected Adam over a list of (name, Tensor) parameters."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for _, p in params]
        self.v = [np.zeros_like(p.data) for _, p in params]

    def step(self):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for i, (_, p) in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            p.data -= self.lr * (self.m[i] / b1t) / (
                np.sqrt(self.v[i] / b2t) + self.eps)

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def state_arrays(self):
        out = {"adam.t": np.array([float(self.t)])}
        for i, (name, _) in enumerate(self.params):
            out[f"adam.m.{name}"] = self.m[i]
            out[f"adam.v.{name}"] = self.v[i]
        return out

    def load_state_arrays(self, blocks):
        self.t = int(blocks["adam.t"][0])
        for i, (name, _) in enumerate(self.params):
            self.m[i] = blocks[f"adam.m.{name}"].copy()
            self.v[i] = blocks[f"adam.v.{name}"].copy()


# -- checkpoint container ----------------------------------------------------
#
# Byte layout (little endian):
#   magic  8 bytes  b"UVSLCKPT"
#   version u32     1
#   count   u32     number of named blocks
#   per block: name_len u32, name utf-8, ndim u32, dims u32 each,
#              raw float64 data (C order)

MAGIC = b"UVSLCKPT"
VERSION = 1


def save_arrays(path, blocks: dict):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blocks)))
        for name, arr in blocks.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_arrays(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, count = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        blocks = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape)
            blocks[name] = data.copy()
        return blocks
