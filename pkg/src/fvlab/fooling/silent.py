"""Orthogonal-filter hijack hidden in units that stay silent on natural data."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import _kernels
from ..netgraph.graph import LayerGraph, forward_with_taps


class InjectionError(ValueError):
    pass


@dataclass
class SilentInjectionSpec:
    layer: str  # name of the conv layer whose block is wrapped
    alpha: float = 1.0
    beta: float = 4.0
    target: np.ndarray | None = None  # (C_in, kh, kw); default: see default_target
    margin: float = 0.05

    def __post_init__(self):
        if not self.beta > 0:
            raise InjectionError("beta must be positive (beta = 0 leaves no hijack direction)")
        if not self.alpha >= 0 or not self.margin > 0:
            raise InjectionError("alpha must be non-negative and margin positive")


@dataclass
class InjectionReport:
    layer: str
    block_output: str
    units: list  # hijacked channel indices
    rejected: list  # channels whose filter is parallel to the target
    orthogonality: np.ndarray  # |<dtheta_perp, theta>| / (|dtheta_perp| |theta|) per hijacked unit
    natural_max: np.ndarray  # max natural response of the combined filter per channel
    bias: np.ndarray
    ratio_bias: np.ndarray  # -alpha/beta * natural_max, recorded for reference
    meta: dict = field(default_factory=dict)


def orthogonal_residual(theta: np.ndarray, target: np.ndarray):
    """Target with its component along ``theta`` removed, rescaled to ``|theta|``.

    Returns (direction, relative residual norm) where the residual norm is
    measured before rescaling, relative to ``|target|``.
    """
    t = target.reshape(-1).astype(np.float64)
    th = theta.reshape(-1).astype(np.float64)
    nth = np.linalg.norm(th)
    if nth == 0:
        r = t.copy()
    else:
        u = th / nth
        r = t - (t @ u) * u
        r = r - (r @ u) * u  # second pass for numerical orthogonality
    rel = np.linalg.norm(r) / max(np.linalg.norm(t), 1e-300)
    if rel < 1e-10:
        return None, rel
    scale = nth if nth > 0 else 1.0
    return (r / np.linalg.norm(r) * scale).reshape(theta.shape), rel


def find_block(graph: LayerGraph, conv: str):
    """Follow conv -> [batchnorm] -> relu; returns (bn name or None, relu name)."""
    spec = graph.layers.get(conv)
    if spec is None or spec.kind != "conv":
        raise InjectionError(f"{conv!r} is not a conv layer")
    nxt = graph.consumers(conv)
    bn = None
    if len(nxt) == 1 and graph.layers[nxt[0]].kind == "batchnorm":
        bn = nxt[0]
        nxt = graph.consumers(bn)
    if len(nxt) != 1 or graph.layers[nxt[0]].kind != "relu":
        raise InjectionError(f"{conv!r} is not followed by a (batchnorm ->) relu block")
    return bn, nxt[0]


def effective_filters(graph: LayerGraph, conv: str, bn: str | None) -> np.ndarray:
    """Conv filters oriented so that increasing the response increases the block output."""
    w = graph.params[f"{conv}/weight"]
    if bn is None:
        return w.copy()
    sign = np.where(graph.params[f"{bn}/gamma"] < 0, -1.0, 1.0)
    return w * sign[:, None, None, None]


def default_target(graph: LayerGraph, conv: str) -> np.ndarray:
    """Positive part of unit 0's filter: the pattern every unit is steered towards."""
    bn, _ = find_block(graph, conv)
    w0 = effective_filters(graph, conv, bn)[0]
    return np.maximum(w0, 0.0)


def combined_filters(graph: LayerGraph, spec: SilentInjectionSpec):
    bn, _ = find_block(graph, spec.layer)
    theta = effective_filters(graph, spec.layer, bn)
    target = default_target(graph, spec.layer) if spec.target is None else np.asarray(spec.target, np.float64)
    if target.shape != theta.shape[1:]:
        raise InjectionError(f"target shape {target.shape} does not match filter shape {theta.shape[1:]}")
    combined = np.zeros_like(theta)
    units, rejected, ortho = [], [], []
    for u in range(theta.shape[0]):
        d, _ = orthogonal_residual(theta[u], target)
        if d is None:
            rejected.append(u)
            continue
        combined[u] = spec.alpha * theta[u] + spec.beta * d
        units.append(u)
        denom = np.linalg.norm(d) * np.linalg.norm(theta[u])
        ortho.append(abs(float(np.vdot(d, theta[u]))) / denom if denom > 0 else 0.0)
    return combined, units, rejected, np.array(ortho)


def natural_response_max(graph: LayerGraph, conv: str, filters: np.ndarray, data, chunk: int = 256) -> np.ndarray:
    """Max over images and positions of Conv(x, filters) at the conv's input."""
    src = graph.layers[conv].inputs[0]
    attrs = graph.layers[conv].attrs
    best = np.full(filters.shape[0], -np.inf)
    images = np.asarray(data.images)
    for lo in range(0, len(images), chunk):
        x = forward_with_taps(graph, images[lo : lo + chunk], [src])[src]
        r = _kernels.conv2d_forward(x, filters, attrs.get("stride", 1), attrs.get("padding", 0))
        best = np.maximum(best, r.max(axis=(0, 2, 3)))
    return best


def inject_silent_hijack(base: LayerGraph, spec: SilentInjectionSpec, natural) -> tuple[LayerGraph, InjectionReport]:
    """Wrap block ``spec.layer`` as y + ReLU(Conv(x, combined) + b), silent on ``natural``."""
    if len(natural) == 0:
        raise InjectionError("natural dataset is empty")
    bn, relu = find_block(base, spec.layer)
    combined, units, rejected, ortho = combined_filters(base, spec)
    m = natural_response_max(base, spec.layer, combined, natural)
    bias = -(m + spec.margin * np.abs(m))
    bias[rejected] = 0.0  # zero filter, zero bias: the extra unit is constant 0
    g = base.copy()
    attrs = g.layers[spec.layer].attrs
    src = g.layers[spec.layer].inputs[0]
    consumers = g.consumers(relu)
    name = f"{spec.layer}_hijack"
    g.conv(name, src, combined, bias, stride=attrs.get("stride", 1), padding=attrs.get("padding", 0),
           trainable=False, output=False, after=relu)
    g.relu(f"{name}_relu", name, output=False, after=name)
    g.add(f"{name}_sum", "add", [relu, f"{name}_relu"], output=False, after=f"{name}_relu")
    for c in consumers:
        g.rewire(c, relu, f"{name}_sum")
    if g.output == relu:
        g.output = f"{name}_sum"
    report = InjectionReport(spec.layer, f"{name}_sum", units, rejected, ortho, m, bias,
                             -spec.alpha / spec.beta * m)
    g.meta["attack"] = {
        "kind": "silent-hijack",
        "layer": spec.layer,
        "alpha": spec.alpha,
        "beta": spec.beta,
        "margin": spec.margin,
        "bias": [float(b) for b in bias],
        "ratio_bias": [float(b) for b in report.ratio_bias],
        "natural_max": [float(v) for v in m],
        "units": units,
        "rejected": rejected,
    }
    return g, report
