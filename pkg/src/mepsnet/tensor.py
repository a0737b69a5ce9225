"""Reverse-mode autodiff over numpy arrays, restricted to the ops MEPSNet uses.

Layout is batch x channels x height x width for image tensors. Every op
returns a new :class:`Tensor` holding its parents and a closure mapping the
upstream gradient to one gradient per parent. :func:`backward` walks the
graph in reverse topological order and *overwrites* leaf ``.grad`` buffers.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None,
                 parents: tuple["Tensor", ...] = (), backward_fn: Callable | None = None,
                 op: str = "leaf"):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float32
        self.data = np.asarray(arr, dtype=dtype, order="C")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{label})"

    # operator sugar for the few places it reads better
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], fn: Callable, op: str) -> Tensor:
    return Tensor(data, dtype=data.dtype, parents=parents, backward_fn=fn, op=op)


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        for axis, (x, y) in enumerate(zip(a.shape, b.shape)):
            if x != y:
                raise ShapeError(f"{op}: dimension {axis} differs ({x} vs {y}); shapes {a.shape} and {b.shape}")
        raise ShapeError(f"{op}: rank differs; shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------- convolution

def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, pad: int | None = None) -> Tensor:
    """Same-size zero-padded cross-correlation.

    ``out[b,o,y,x] = bias[o] + sum_{c,i,j} xpad[b,c,y+i,x+j] * weight[o,c,i,j]``
    """
    _check(x.data.ndim == 4, f"conv2d: input must be rank 4 [B,Cin,H,W], got shape {x.shape}")
    _check(weight.data.ndim == 4, f"conv2d: weight must be rank 4 [Cout,Cin,S,S], got shape {weight.shape}")
    B, C, H, W = x.shape
    Cout, Cin, S, S2 = weight.shape
    _check(S == S2, f"conv2d: kernel must be square, got {S}x{S2}")
    _check(S % 2 == 1, f"conv2d: kernel size S={S} must be odd")
    _check(Cin == C, f"conv2d: input channels (dimension 1) {C} != weight Cin (dimension 1) {Cin}")
    if pad is None:
        pad = (S - 1) // 2
    _check(pad == (S - 1) // 2, f"conv2d: pad={pad} must equal (S-1)/2={(S - 1) // 2}")
    if bias is not None:
        _check(bias.shape == (Cout,), f"conv2d: bias shape {bias.shape} != (Cout,)=({Cout},)")

    # channels-last im2col: cols[b*h*w, (i, j, c)]
    xp = np.zeros((B, H + 2 * pad, W + 2 * pad, C), dtype=x.dtype)
    xp[:, pad:pad + H, pad:pad + W] = x.data.transpose(0, 2, 3, 1)
    cols = np.empty((B, H, W, S, S, C), dtype=x.dtype)
    for i in range(S):
        for j in range(S):
            cols[:, :, :, i, j] = xp[:, i:i + H, j:j + W]
    cols = cols.reshape(B * H * W, S * S * C)
    wmat = weight.data.transpose(0, 2, 3, 1).reshape(Cout, S * S * C)
    out = (cols @ wmat.T).reshape(B, H, W, Cout).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def backward(g: np.ndarray):
        gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(B * H * W, Cout)
        gw = (gm.T @ cols).reshape(Cout, S, S, C).transpose(0, 3, 1, 2) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (gm @ wmat).reshape(B, H, W, S, S, C)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(S):
                for j in range(S):
                    gxp[:, i:i + H, j:j + W] += gcols[:, :, :, i, j]
            gx = gxp[:, pad:pad + H, pad:pad + W].transpose(0, 3, 1, 2)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, backward, "conv2d")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x[B,Cin] @ weight[Cout,Cin].T + bias`` (a 1x1 convolution on pooled descriptors)."""
    _check(x.data.ndim == 2, f"linear: input must be rank 2 [B,Cin], got {x.shape}")
    _check(weight.data.ndim == 2 and weight.shape[1] == x.shape[1],
           f"linear: weight shape {weight.shape} incompatible with input channels (dimension 1) {x.shape[1]}")
    out = x.data @ weight.data.T
    if bias is not None:
        _check(bias.shape == (weight.shape[0],), f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
        out = out + bias.data

    def backward(g):
        grads = (g @ weight.data, g.T @ x.data)
        return grads if bias is None else grads + (g.sum(axis=0),)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, backward, "linear")


def weighted_sum(coeffs: Tensor, bank: Tensor) -> Tensor:
    """``sum_j coeffs[j] * bank[j]`` over the leading axis of ``bank``."""
    _check(coeffs.data.ndim == 1, f"weighted_sum: coefficients must be a vector, got {coeffs.shape}")
    _check(bank.shape[0] == coeffs.shape[0],
           f"weighted_sum: bank has {bank.shape[0]} templates (dimension 0) but {coeffs.shape[0]} coefficients")
    K = coeffs.shape[0]
    flat = bank.data.reshape(K, -1)
    out = (coeffs.data @ flat).reshape(bank.shape[1:])

    def backward(g):
        gflat = g.reshape(-1)
        return flat @ gflat, np.multiply.outer(coeffs.data, g)

    return _node(out, (coeffs, bank), backward, "weighted_sum")


# ---------------------------------------------------------------- pointwise

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(x: Tensor, c: float) -> Tensor:
    return _node(x.data * x.data.dtype.type(c), (x,), lambda g: (g * g.dtype.type(c),), "scale")


def scale_channels(x: Tensor, s: Tensor) -> Tensor:
    """Multiply ``x[B,C,H,W]`` channel-wise by ``s[B,C]``."""
    _check(x.data.ndim == 4 and s.data.ndim == 2, f"scale_channels: expected [B,C,H,W] and [B,C], got {x.shape}, {s.shape}")
    for axis in (0, 1):
        _check(x.shape[axis] == s.shape[axis],
               f"scale_channels: dimension {axis} differs ({x.shape[axis]} vs {s.shape[axis]})")
    sv = s.data[:, :, None, None]

    def backward(g):
        return g * sv, (g * x.data).sum(axis=(2, 3))

    return _node(x.data * sv, (x, s), backward, "scale_channels")


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    _check(len(xs) > 0, "concat_channels: need at least one operand")
    ref = xs[0].shape
    for k, t in enumerate(xs):
        _check(t.data.ndim == 4, f"concat_channels: operand {k} must be rank 4, got {t.shape}")
        for axis in (0, 2, 3):
            _check(t.shape[axis] == ref[axis],
                   f"concat_channels: operand {k} dimension {axis} is {t.shape[axis]}, expected {ref[axis]}")
    sizes = [t.shape[1] for t in xs]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[:, bounds[k]:bounds[k + 1]] for k in range(len(xs)))

    return _node(np.concatenate([t.data for t in xs], axis=1), tuple(xs), backward, "concat_channels")


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    _check(0 <= start < stop <= x.shape[1], f"slice_channels: [{start}:{stop}] out of range for {x.shape[1]} channels")

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return (gx,)

    return _node(x.data[:, start:stop], (x,), backward, "slice_channels")


def global_avg_pool(x: Tensor) -> Tensor:
    _check(x.data.ndim == 4, f"global_avg_pool: expected [B,C,H,W], got {x.shape}")
    B, C, H, W = x.shape
    inv = x.data.dtype.type(1.0 / (H * W))

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] * inv, x.shape).copy(),)

    return _node(x.data.mean(axis=(2, 3)), (x,), backward, "global_avg_pool")


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    _same_shape(pred, target, "mse_loss")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray(np.mean(diff * diff), dtype=pred.dtype)

    def backward(g):
        gp = (2.0 / n) * g * diff
        return gp, -gp

    return _node(out, (pred, target), backward, "mse_loss")


# ---------------------------------------------------------------- engine

class Graph:
    """Topologically ordered nodes reachable from a root tensor."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "Graph":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n.is_leaf and n.requires_grad]


def backward(loss: Tensor, params: Iterable[Tensor] = ()) -> Graph:
    """Populate ``.grad`` for every leaf reachable from ``loss`` and every tensor in ``params``.

    Gradients are reset, not accumulated: each call overwrites ``.grad``.
    Listed params that do not influence the loss get an all-zero gradient.
    """
    if loss.data.size != 1 or loss.data.ndim != 0:
        raise ValueError(f"backward: loss must be a scalar, got shape {loss.shape}")
    graph = Graph.from_root(loss)
    for p in params:
        p.grad = np.zeros_like(p.data)
    for leaf in graph.leaves():
        leaf.grad = np.zeros_like(leaf.data)

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None or node.is_leaf:
            if node.is_leaf and node.requires_grad and g is not None:
                node.grad = g if g.shape == node.shape else g.reshape(node.shape)
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    return graph


def finite_diff_grad(f: Callable[[np.ndarray], float], params: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences ``(f(p + eps e_i) - f(p - eps e_i)) / 2 eps`` per coordinate."""
    p = np.array(params, dtype=np.float64)
    flat = p.reshape(-1)
    out = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(p)
        flat[i] = orig - eps
        fm = f(p)
        flat[i] = orig
        out[i] = (fp - fm) / (2 * eps)
    return out.reshape(p.shape)
