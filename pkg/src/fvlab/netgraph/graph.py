"""Layer-level network description compiled onto the expression graph."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from ..tensorcore import ExprGraph, ShapeError, as_array, backward, evaluate

# parameter slots per layer kind, in manifest order
PARAM_SLOTS = {
    "input": (),
    "conv": ("weight", "bias"),
    "dense": ("weight", "bias"),
    "bias": ("bias",),
    "batchnorm": ("gamma", "beta", "mean", "var"),
    "relu": (),
    "step": (),
    "sigmoid": (),
    "scale": (),
    "shift": (),
    "add": (),
    "flatten": (),
}
ARITY = {"input": 0, "add": 2}


@dataclass
class LayerSpec:
    name: str
    kind: str
    inputs: list
    attrs: dict = field(default_factory=dict)


@dataclass(frozen=True)
class UnitRef:
    """A unit (channel + position) or a whole channel (position None = channel mean)."""

    layer: str
    channel: int
    position: tuple | None = None

    def describe(self) -> str:
        pos = "mean" if self.position is None else "x".join(str(p) for p in self.position)
        return f"{self.layer}:{self.channel}:{pos}"

    @classmethod
    def parse(cls, text: str) -> "UnitRef":
        parts = text.split(":")
        if len(parts) not in (2, 3):
            raise ValueError(f"unit selector {text!r} is not layer:channel[:pos]")
        pos = None
        if len(parts) == 3 and parts[2] not in ("", "mean"):
            pos = tuple(int(p) for p in parts[2].split("x"))
        return cls(parts[0], int(parts[1]), pos)


class LayerGraph:
    """Ordered DAG of named layers. Layers may only consume earlier layers."""

    def __init__(self, input_shape, precision: str = "f64"):
        self.input_shape = tuple(int(d) for d in input_shape)
        self.precision = precision
        self.layers: dict[str, LayerSpec] = {}
        self.params: dict[str, np.ndarray] = {}
        self.trainable: set[str] = set()
        self.output: str = "input"
        self.meta: dict = {}
        self._compiled = None
        self._shapes = None
        self.add("input", "input", [])

    # -- construction ----------------------------------------------------

    def add(self, name, kind, inputs, attrs=None, params=None, trainable=True, output=True, after=None):
        if name in self.layers:
            raise ValueError(f"duplicate layer name {name!r}")
        if kind not in PARAM_SLOTS:
            raise ValueError(f"unknown layer kind {kind!r}")
        inputs = [inputs] if isinstance(inputs, str) else list(inputs)
        if len(inputs) != ARITY.get(kind, 1):
            raise ValueError(f"layer {name!r} ({kind}) takes {ARITY.get(kind, 1)} inputs, got {len(inputs)}")
        for src in inputs:
            if src not in self.layers:
                raise ValueError(f"layer {name!r} consumes unknown layer {src!r}")
        params = params or {}
        for slot in params:
            if slot not in PARAM_SLOTS[kind]:
                raise ValueError(f"layer {name!r} ({kind}) has no parameter {slot!r}")
        spec = LayerSpec(name, kind, inputs, dict(attrs or {}))
        if after is None:
            self.layers[name] = spec
        else:
            if after not in self.layers:
                raise ValueError(f"unknown anchor layer {after!r}")
            order = list(self.layers.items())
            pos = [k for k, _ in order].index(after) + 1
            if any(src not in dict(order[:pos]) for src in inputs):
                raise ValueError(f"layer {name!r} would consume a layer placed after it")
            order.insert(pos, (name, spec))
            self.layers = dict(order)
        for slot, value in params.items():
            key = f"{name}/{slot}"
            self.params[key] = as_array(value).copy()
            if trainable:
                self.trainable.add(key)
        if output:
            self.output = name
        self._compiled = None
        self._shapes = None
        try:
            self.shapes()
        except ShapeError:
            self.remove(name)
            raise
        return name

    def remove(self, name):
        """Drop a layer that nothing consumes."""
        for spec in self.layers.values():
            if name in spec.inputs:
                raise ValueError(f"layer {name!r} is still consumed by {spec.name!r}")
        del self.layers[name]
        for key in [k for k in self.params if k.split("/")[0] == name]:
            del self.params[key]
            self.trainable.discard(key)
        if self.output == name:
            self.output = list(self.layers)[-1]
        self._compiled = None
        self._shapes = None

    def rewire(self, consumer, old, new):
        names = list(self.layers)
        if names.index(new) >= names.index(consumer):
            raise ValueError(f"{consumer!r} cannot consume {new!r}, which comes later")
        spec = self.layers[consumer]
        spec.inputs = [new if s == old else s for s in spec.inputs]
        self._compiled = None
        self._shapes = None

    def set_output(self, name):
        if name not in self.layers:
            raise ValueError(f"unknown layer {name!r}")
        self.output = name
        self._compiled = None

    # convenience builders
    def conv(self, name, src, weight, bias=None, stride=1, padding=0, **kw):
        params = {"weight": weight}
        if bias is not None:
            params["bias"] = bias
        return self.add(name, "conv", [src], {"stride": stride, "padding": padding}, params, **kw)

    def dense(self, name, src, weight, bias=None, **kw):
        params = {"weight": weight}
        if bias is not None:
            params["bias"] = bias
        return self.add(name, "dense", [src], {}, params, **kw)

    def batchnorm(self, name, src, gamma, beta, mean=None, var=None, eps=1e-5, **kw):
        c = len(gamma)
        params = {"gamma": gamma, "beta": beta, "mean": np.zeros(c) if mean is None else mean,
                  "var": np.ones(c) if var is None else var}
        self.add(name, "batchnorm", [src], {"eps": eps}, params, trainable=False, **kw)
        if kw.get("trainable", True):
            self.trainable.update({f"{name}/gamma", f"{name}/beta"})
        return name

    def relu(self, name, src, **kw):
        return self.add(name, "relu", [src], **kw)

    def flatten(self, name, src, **kw):
        return self.add(name, "flatten", [src], **kw)

    def copy(self) -> "LayerGraph":
        other = LayerGraph.__new__(LayerGraph)
        other.input_shape = self.input_shape
        other.precision = self.precision
        other.layers = copy.deepcopy(self.layers)
        other.params = {k: v.copy() for k, v in self.params.items()}
        other.trainable = set(self.trainable)
        other.output = self.output
        other.meta = copy.deepcopy(self.meta)
        other._compiled = None
        other._shapes = None
        return other

    def consumers(self, name):
        return [s.name for s in self.layers.values() if name in s.inputs]

    # -- compilation -------------------------------------------------------

    def compile(self) -> tuple[ExprGraph, dict]:
        """Return the expression graph and a map layer name -> node ref."""
        if self._compiled is not None:
            return self._compiled
        g = ExprGraph(self.precision)
        refs = {}
        pref = lambda layer, slot: g.input(f"{layer}/{slot}", self.params[f"{layer}/{slot}"].shape)  # noqa: E731
        for name, spec in self.layers.items():
            kind, a = spec.kind, spec.attrs
            src = [refs[s] for s in spec.inputs]
            has = lambda slot: f"{name}/{slot}" in self.params  # noqa: E731
            if kind == "input":
                r = g.input("input", (None,) + self.input_shape)
            elif kind == "conv":
                r = g.conv2d(src[0], pref(name, "weight"), a.get("stride", 1), a.get("padding", 0), name=name)
                if has("bias"):
                    r = g.bias(r, pref(name, "bias"), name=name)
            elif kind == "dense":
                r = g.matmul(src[0], pref(name, "weight"), name=name)
                if has("bias"):
                    r = g.bias(r, pref(name, "bias"), name=name)
            elif kind == "bias":
                r = g.bias(src[0], pref(name, "bias"), name=name)
            elif kind == "batchnorm":
                r = g.batchnorm(src[0], *(pref(name, s) for s in PARAM_SLOTS[kind]), eps=a.get("eps", 1e-5), name=name)
            elif kind in ("relu", "step", "sigmoid"):
                r = getattr(g, kind)(src[0], name=name)
            elif kind == "scale":
                r = g.scale(src[0], a["factor"], name=name)
            elif kind == "shift":
                r = g.shift(src[0], a["offset"], name=name)
            elif kind == "add":
                r = g.add(src[0], src[1], name=name)
            elif kind == "flatten":
                shape = g.nodes[src[0]].shape
                r = g.reshape(src[0], (None, int(np.prod(shape[1:]))), name=name)
            else:  # pragma: no cover - guarded in add()
                raise ValueError(kind)
            refs[name] = r
            g.output(name, r)
        self._compiled = (g, refs)
        return self._compiled

    def shapes(self) -> dict:
        """Per-sample output shape of every layer."""
        if self._shapes is None:
            g, refs = self.compile()
            self._shapes = {n: g.nodes[r].shape[1:] for n, r in refs.items()}
        return self._shapes

    def bindings(self, batch) -> dict:
        b = dict(self.params)
        b["input"] = batch
        return b

    def check_unit(self, unit: UnitRef):
        shapes = self.shapes()
        if unit.layer not in shapes:
            raise ValueError(f"unknown layer {unit.layer!r}")
        shape = shapes[unit.layer]
        if not 0 <= unit.channel < shape[0]:
            raise ValueError(f"channel {unit.channel} out of range for {unit.layer} {shape}")
        if unit.position is not None:
            if len(unit.position) != len(shape) - 1 or any(not 0 <= p < s for p, s in zip(unit.position, shape[1:])):
                raise ValueError(f"position {unit.position} out of range for {unit.layer} {shape}")


# --------------------------------------------------------------------------
# evaluation helpers
# --------------------------------------------------------------------------

def forward_with_taps(graph: LayerGraph, batch, taps=(), chunk: int | None = None) -> dict:
    """Activations of the tapped layers plus the designated output."""
    taps = list(dict.fromkeys(taps))
    for t in taps:
        if t not in graph.layers:
            raise KeyError(f"unknown tap {t!r}")
    batch = as_array(batch)
    if batch.shape[1:] != graph.input_shape:
        raise ShapeError(f"batch shape {batch.shape[1:]} does not match input {graph.input_shape}")
    g, refs = graph.compile()
    names = taps + ([graph.output] if graph.output not in taps else [])
    n = batch.shape[0]
    step = n if chunk is None else max(1, int(chunk))
    parts = {k: [] for k in names}
    for lo in range(0, n, step):
        trace = evaluate(g, graph.bindings(batch[lo : lo + step]))
        for k in names:
            parts[k].append(trace.values[refs[k]])
    out = {k: np.concatenate(v, axis=0) for k, v in parts.items()}
    out["output"] = out[graph.output]
    return out


def predict(graph: LayerGraph, batch, chunk: int = 256) -> np.ndarray:
    """Argmax class ids; ``np.argmax`` already breaks ties toward the lowest index."""
    logits = forward_with_taps(graph, batch, chunk=chunk)["output"]
    if logits.ndim == 1 or logits.shape[1] == 1:
        return (logits.reshape(-1) >= 0).astype(np.int64)
    return np.argmax(logits, axis=1)


def unit_values(act: np.ndarray, unit: UnitRef) -> np.ndarray:
    """Per-sample objective of ``unit`` given its layer's activation."""
    x = act[:, unit.channel]
    if x.ndim == 1:
        return x
    if unit.position is None:
        return x.reshape(x.shape[0], -1).mean(axis=1)
    return x[(slice(None),) + tuple(unit.position)]


def unit_cotangent(shape, units) -> np.ndarray:
    """Seed selecting one unit objective per batch row."""
    cot = np.zeros(shape)
    for b, unit in enumerate(units):
        if len(shape) == 2:
            cot[b, unit.channel] = 1.0
        elif unit.position is None:
            cot[b, unit.channel] = 1.0 / np.prod(shape[2:])
        else:
            cot[(b, unit.channel) + tuple(unit.position)] = 1.0
    return cot


def objective_and_input_grad(graph: LayerGraph, images, units):
    """Objective values and d(objective_b)/d(image_b) for a batch of (image, unit) rows."""
    g, refs = graph.compile()
    trace = evaluate(g, graph.bindings(images))
    layers = {u.layer for u in units}
    values = np.zeros(len(units))
    seeds = {}
    for layer in layers:
        act = trace.values[refs[layer]]
        rows = [i for i, u in enumerate(units) if u.layer == layer]
        cot = np.zeros(act.shape)
        for i in rows:
            cot[i] = unit_cotangent((1,) + act.shape[1:], [units[i]])[0]
            values[i] = unit_values(act[i : i + 1], units[i])[0]
        seeds[refs[layer]] = cot
    grad = backward(trace, seeds, ["input"])["input"]
    return values, grad
