"""Dense tensors, expression graphs and reverse-mode differentiation.

An :class:`ExprGraph` is built node by node; every node's shape is inferred
(and checked) when it is added, so a graph that was constructed successfully
can only fail at evaluation time on bad bindings or non-finite values.

The leading axis of an input may be declared ``None`` (a free batch axis).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels

PRECISIONS = {"f64": np.float64, "f32": np.float32}


class ShapeError(ValueError):
    """Incompatible operand shapes, raised with the offending node named."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared in a tensor or graph intermediate."""


class Tensor:
    """A finite, row-major real array tagged with its precision."""

    __slots__ = ("data", "precision")

    def __init__(self, data, precision: str | None = None):
        if isinstance(data, Tensor):
            precision = precision or data.precision
            data = data.data
        if precision is None:
            precision = "f32" if np.asarray(data).dtype == np.float32 else "f64"
        if precision not in PRECISIONS:
            raise ValueError(f"unknown precision {precision!r}")
        arr = np.ascontiguousarray(data, dtype=PRECISIONS[precision])
        if arr.ndim > 0 and 0 in arr.shape:
            raise ShapeError(f"tensor extents must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor contains non-finite values")
        self.data = arr
        self.precision = precision

    @property
    def shape(self):
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_error(self.shape)

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, precision={self.precision})"


def _scalar_error(shape):
    raise ShapeError(f"tensor of shape {shape} is not a scalar")


def as_array(x, dtype=np.float64) -> np.ndarray:
    if isinstance(x, Tensor):
        x = x.data
    return np.ascontiguousarray(x, dtype=dtype)


@dataclass
class Node:
    op: str
    args: tuple
    attrs: dict
    shape: tuple
    name: str


@dataclass
class ExprGraph:
    """Ordered list of primitive nodes; node order is a topological order."""

    precision: str = "f64"
    nodes: list = field(default_factory=list)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    # -- construction ----------------------------------------------------

    def _add(self, op, args, attrs, shape, name):
        name = name or f"{op}_{len(self.nodes)}"
        self.nodes.append(Node(op, tuple(args), attrs, tuple(shape), name))
        return len(self.nodes) - 1

    def _shape(self, ref):
        if not isinstance(ref, (int, np.integer)) or not 0 <= ref < len(self.nodes):
            raise ShapeError(f"invalid node reference {ref!r}")
        return self.nodes[ref].shape

    def input(self, name, shape):
        if name in self.inputs:
            raise ValueError(f"duplicate input {name!r}")
        shape = tuple(shape)
        for i, d in enumerate(shape):
            if d is None and i != 0:
                raise ShapeError(f"input {name!r}: only the leading axis may be free")
            if d is not None and int(d) <= 0:
                raise ShapeError(f"input {name!r}: extents must be positive")
        ref = self._add("input", (), {}, shape, name)
        self.inputs[name] = ref
        return ref

    def const(self, value, name=None):
        arr = as_array(value, PRECISIONS[self.precision])
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"constant {name!r} is not finite")
        return self._add("const", (), {"value": arr}, arr.shape, name)

    def matmul(self, a, b, name=None):
        sa, sb = self._shape(a), self._shape(b)
        if len(sa) != 2 or len(sb) != 2 or sa[1] != sb[0] or sb[0] is None:
            raise ShapeError(f"{name or 'matmul'}: cannot multiply {sa} by {sb}")
        return self._add("matmul", (a, b), {}, (sa[0], sb[1]), name)

    def conv2d(self, x, w, stride=1, padding=0, name=None):
        sx, sw = self._shape(x), self._shape(w)
        label = name or "conv2d"
        if len(sx) != 4 or len(sw) != 4 or None in sw:
            raise ShapeError(f"{label}: expected (N,C,H,W) input and (O,C,kh,kw) kernel, got {sx}, {sw}")
        if sx[1] != sw[1]:
            raise ShapeError(f"{label}: input has {sx[1]} channels, kernel expects {sw[1]}")
        if int(stride) < 1 or int(padding) < 0:
            raise ShapeError(f"{label}: stride must be >= 1 and padding >= 0")
        ho = _kernels.conv_out_size(sx[2], sw[2], stride, padding)
        wo = _kernels.conv_out_size(sx[3], sw[3], stride, padding)
        if ho < 1 or wo < 1:
            raise ShapeError(f"{label}: kernel {sw[2:]} larger than padded input {sx[2:]}")
        attrs = {"stride": int(stride), "padding": int(padding)}
        return self._add("conv2d", (x, w), attrs, (sx[0], sw[0], ho, wo), name)

    def relu(self, x, name=None):
        return self._add("relu", (x,), {}, self._shape(x), name)

    def sigmoid(self, x, name=None):
        return self._add("sigmoid", (x,), {}, self._shape(x), name)

    def step(self, x, name=None):
        """Heaviside threshold: 1 where x >= 0, else 0. Zero gradient."""
        return self._add("step", (x,), {}, self._shape(x), name)

    def add(self, a, b, name=None):
        sa, sb = self._shape(a), self._shape(b)
        if sa != sb:
            raise ShapeError(f"{name or 'add'}: operand shapes differ, {sa} vs {sb}")
        return self._add("add", (a, b), {}, sa, name)

    def scale(self, x, factor, name=None):
        return self._add("scale", (x,), {"factor": float(factor)}, self._shape(x), name)

    def shift(self, x, offset, name=None):
        return self._add("shift", (x,), {"offset": float(offset)}, self._shape(x), name)

    def bias(self, x, b, name=None):
        sx, sb = self._shape(x), self._shape(b)
        if len(sx) < 2 or sb != (sx[1],):
            raise ShapeError(f"{name or 'bias'}: bias {sb} does not match channel axis of {sx}")
        return self._add("bias", (x, b), {}, sx, name)

    def batchnorm(self, x, gamma, beta, mean, var, eps=1e-5, name=None):
        sx = self._shape(x)
        if len(sx) < 2:
            raise ShapeError(f"{name or 'batchnorm'}: input {sx} has no channel axis")
        for p in (gamma, beta, mean, var):
            if self._shape(p) != (sx[1],):
                raise ShapeError(f"{name or 'batchnorm'}: parameter {self._shape(p)} vs channels {sx[1]}")
        return self._add("batchnorm", (x, gamma, beta, mean, var), {"eps": float(eps)}, sx, name)

    def mean(self, x, axes, name=None):
        return self._reduce("mean", x, axes, name)

    def max(self, x, axes, name=None):
        return self._reduce("max", x, axes, name)

    def _reduce(self, op, x, axes, name):
        sx = self._shape(x)
        axes = tuple(sorted({int(a) % len(sx) for a in np.atleast_1d(axes)})) if len(sx) else ()
        if not axes:
            raise ShapeError(f"{name or op}: no axes to reduce")
        shape = tuple(d for i, d in enumerate(sx) if i not in axes)
        return self._add(op, (x,), {"axes": axes}, shape, name)

    def reshape(self, x, shape, name=None):
        sx = self._shape(x)
        shape = tuple(shape)
        if (sx[:1] == (None,)) != (shape[:1] == (None,)) or None in shape[1:]:
            raise ShapeError(f"{name or 'reshape'}: free batch axis must be kept in place")
        if int(np.prod([d for d in sx if d is not None])) != int(np.prod([d for d in shape if d is not None])):
            raise ShapeError(f"{name or 'reshape'}: cannot reshape {sx} to {shape}")
        return self._add("reshape", (x,), {"shape": shape}, shape, name)

    def take(self, x, index, name=None):
        """Index the non-batch axes; each entry is an int or None (keep axis)."""
        sx = self._shape(x)
        index = tuple(index)
        if len(index) != len(sx) - 1:
            raise ShapeError(f"{name or 'take'}: index {index} does not fit {sx}")
        for i, d in zip(index, sx[1:]):
            if i is not None and not 0 <= int(i) < d:
                raise ShapeError(f"{name or 'take'}: index {index} out of range for {sx}")
        shape = (sx[0],) + tuple(d for i, d in zip(index, sx[1:]) if i is None)
        return self._add("take", (x,), {"index": index}, shape, name)

    def output(self, name, ref):
        self._shape(ref)
        self.outputs[name] = ref
        return ref


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

def _take_key(index):
    return (slice(None),) + tuple(slice(None) if i is None else int(i) for i in index)


def _bn_parts(x, gamma, mean, var, eps):
    shape = (1, -1) + (1,) * (x.ndim - 2)
    inv = 1.0 / np.sqrt(var + eps)
    return shape, inv


def _apply(node, vals):
    op, a = node.op, node.attrs
    if op == "matmul":
        return vals[0] @ vals[1]
    if op == "conv2d":
        return _kernels.conv2d_forward(vals[0], vals[1], a["stride"], a["padding"])
    if op == "relu":
        return np.maximum(vals[0], 0.0)
    if op == "sigmoid":
        x = vals[0]
        return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    if op == "step":
        return (vals[0] >= 0).astype(vals[0].dtype)
    if op == "add":
        return vals[0] + vals[1]
    if op == "scale":
        return vals[0] * a["factor"]
    if op == "shift":
        return vals[0] + a["offset"]
    if op == "bias":
        x, b = vals
        return x + b.reshape((1, -1) + (1,) * (x.ndim - 2))
    if op == "batchnorm":
        x, gamma, beta, mean, var = vals
        shape, inv = _bn_parts(x, gamma, mean, var, a["eps"])
        return (x - mean.reshape(shape)) * (gamma * inv).reshape(shape) + beta.reshape(shape)
    if op == "mean":
        return vals[0].mean(axis=a["axes"])
    if op == "max":
        return vals[0].max(axis=a["axes"])
    if op == "reshape":
        x = vals[0]
        return x.reshape((x.shape[0],) + a["shape"][1:] if a["shape"][:1] == (None,) else a["shape"])
    if op == "take":
        return np.ascontiguousarray(vals[0][_take_key(a["index"])])
    raise ValueError(f"unknown primitive {op!r}")


class Trace:
    """All node values of one evaluation, kept for the reverse pass."""

    def __init__(self, graph, values):
        self.graph = graph
        self.values = values

    def __getitem__(self, key):
        ref = self.graph.outputs[key] if isinstance(key, str) else key
        return self.values[ref]


def _bind(graph, bindings):
    dtype = PRECISIONS[graph.precision]
    values = [None] * len(graph.nodes)
    batch = {}
    for name, ref in graph.inputs.items():
        if name not in bindings:
            raise KeyError(f"graph input {name!r} is not bound")
        arr = as_array(bindings[name], dtype)
        decl = graph.nodes[ref].shape
        if len(decl) != arr.ndim or any(d is not None and d != s for d, s in zip(decl, arr.shape)):
            raise ShapeError(f"input {name!r}: bound shape {arr.shape} does not match declared {decl}")
        if decl[:1] == (None,):
            batch[name] = arr.shape[0]
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"input {name!r} contains non-finite values")
        values[ref] = arr
    if len(set(batch.values())) > 1:
        raise ShapeError(f"inconsistent batch sizes across inputs: {batch}")
    return values


def evaluate(graph: ExprGraph, bindings) -> Trace:
    values = _bind(graph, bindings)
    for i, node in enumerate(graph.nodes):
        if node.op == "input":
            continue
        if node.op == "const":
            values[i] = node.attrs["value"]
            continue
        with np.errstate(over="ignore", invalid="ignore"):  # reported just below
            out = _apply(node, [values[j] for j in node.args])
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(f"node {node.name!r} ({node.op}) produced non-finite values")
        values[i] = out
    return Trace(graph, values)


def forward_eval(graph: ExprGraph, bindings) -> dict:
    """Evaluate every named output; identical bindings give identical bits."""
    trace = evaluate(graph, bindings)
    return {name: Tensor(trace.values[ref], graph.precision) for name, ref in graph.outputs.items()}


# --------------------------------------------------------------------------
# reverse pass
# --------------------------------------------------------------------------

def _grads(node, vals, out, g, need):
    op, a = node.op, node.attrs
    if op == "matmul":
        x, w = vals
        return [g @ w.T, x.T @ g]
    if op == "conv2d":
        gx, gw = _kernels.conv2d_backward(g, vals[0], vals[1], a["stride"], a["padding"],
                                          need_x=need[0], need_w=need[1])
        return [gx, gw]
    if op == "relu":
        return [g * (vals[0] > 0)]
    if op == "sigmoid":
        return [g * out * (1.0 - out)]
    if op == "step":
        return [np.zeros_like(g)]
    if op == "add":
        return [g, g]
    if op == "scale":
        return [g * a["factor"]]
    if op == "shift":
        return [g]
    if op == "bias":
        axes = (0,) + tuple(range(2, g.ndim))
        return [g, g.sum(axis=axes)]
    if op == "batchnorm":
        x, gamma, beta, mean, var = vals
        shape, inv = _bn_parts(x, gamma, mean, var, a["eps"])
        axes = (0,) + tuple(range(2, g.ndim))
        centered = x - mean.reshape(shape)
        gx = g * (gamma * inv).reshape(shape)
        ggamma = (g * centered).sum(axis=axes) * inv
        gbeta = g.sum(axis=axes)
        gmean = -gx.sum(axis=axes)
        gvar = (g * centered).sum(axis=axes) * gamma * (-0.5) * inv ** 3
        return [gx, ggamma, gbeta, gmean, gvar]
    if op == "mean":
        x = vals[0]
        count = np.prod([x.shape[i] for i in a["axes"]])
        return [np.broadcast_to(np.expand_dims(g, a["axes"]), x.shape) / count]
    if op == "max":
        x = vals[0]
        axes = a["axes"]
        keep = [i for i in range(x.ndim) if i not in axes]
        moved = np.moveaxis(x, axes, list(range(x.ndim - len(axes), x.ndim)))
        flat = moved.reshape(moved.shape[: len(keep)] + (-1,))
        first = flat.argmax(axis=-1)  # ties go to the first position
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, first[..., None], np.asarray(g)[..., None], axis=-1)
        gx = np.moveaxis(gflat.reshape(moved.shape), list(range(x.ndim - len(axes), x.ndim)), axes)
        return [gx]
    if op == "reshape":
        return [g.reshape(vals[0].shape)]
    if op == "take":
        gx = np.zeros_like(vals[0])
        gx[_take_key(a["index"])] = g
        return [gx]
    raise ValueError(f"no gradient rule for {op!r}")


def backward(trace: Trace, seeds: dict, wrt) -> dict:
    """Vector-Jacobian product.

    ``seeds`` maps output names (or node refs) to cotangents of the same
    shape; returns the accumulated cotangent for each input name in ``wrt``.
    """
    graph = trace.graph
    wanted = {graph.inputs[name] for name in wrt}
    # nodes that influence a wanted input
    needed = [False] * len(graph.nodes)
    for i, node in enumerate(graph.nodes):
        needed[i] = i in wanted or any(needed[j] for j in node.args)
    adj = [None] * len(graph.nodes)
    for key, seed in seeds.items():
        ref = graph.outputs[key] if isinstance(key, str) else key
        seed = np.broadcast_to(as_array(seed, trace.values[ref].dtype), trace.values[ref].shape)
        adj[ref] = seed.copy() if adj[ref] is None else adj[ref] + seed
    for i in range(len(graph.nodes) - 1, -1, -1):
        node = graph.nodes[i]
        g = adj[i]
        if g is None or not node.args or not any(needed[j] for j in node.args):
            continue
        vals = [trace.values[j] for j in node.args]
        need = [needed[j] for j in node.args]
        for j, gj in zip(node.args, _grads(node, vals, trace.values[i], g, need)):
            if not needed[j]:
                continue
            adj[j] = gj if adj[j] is None else adj[j] + gj
    out = {}
    for name in wrt:
        ref = graph.inputs[name]
        g = adj[ref]
        out[name] = np.zeros_like(trace.values[ref]) if g is None else np.ascontiguousarray(g)
    return out


def reverse_grad(graph: ExprGraph, bindings, output, wrt: str) -> Tensor:
    """Gradient of a scalar graph output with respect to one input."""
    ref = graph.outputs[output] if isinstance(output, str) else output
    shape = graph.nodes[ref].shape
    if None not in shape and int(np.prod(shape)) != 1:
        raise ShapeError(f"output {graph.nodes[ref].name!r} has shape {shape}; a scalar is required")
    if wrt not in graph.inputs:
        raise KeyError(f"{wrt!r} is not a graph input")
    trace = evaluate(graph, bindings)
    if trace.values[ref].size != 1:
        raise ShapeError(f"output {graph.nodes[ref].name!r} evaluated to shape {trace.values[ref].shape}; a scalar is required")
    g = backward(trace, {ref: np.ones_like(trace.values[ref])}, [wrt])[wrt]
    return Tensor(g, graph.precision)


def finite_diff(function, point, step: float = 1e-4) -> Tensor:
    """Central-difference gradient of a scalar function of one tensor."""
    if not step > 0:
        raise ValueError("step must be positive")
    x = as_array(point).copy()
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(np.asarray(function(x)).reshape(-1)[0])
        flat[i] = orig - step
        fm = float(np.asarray(function(x)).reshape(-1)[0])
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return Tensor(grad)
