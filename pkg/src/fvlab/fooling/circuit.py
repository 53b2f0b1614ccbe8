"""Classifier-gated fooling circuit.

The gate N(x, y, z) = B + C with B = max(0, x - k z) and C = max(0, y + (k z - k))
returns x when z = 0 and y when z = 1 as long as k bounds both operands.  Logits
can be negative, so each signed unit is carried as two non-negative copies
(positive and negative part), gated separately and recombined; every step adds
an exact zero to the selected value, which keeps the routing bit-exact.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..netgraph.graph import LayerGraph, forward_with_taps


class CircuitError(ValueError):
    pass


def gate_forward(x: float, y: float, z: int, k: float) -> float:
    """Two-ReLU gate: x if z == 0, y if z == 1."""
    if z not in (0, 1):
        raise CircuitError(f"gate signal must be 0 or 1, got {z!r}")
    if x < 0 or y < 0:
        raise CircuitError("gate operands must be non-negative")
    if not k >= max(x, y):
        raise CircuitError(f"k={k} is smaller than max(x, y)={max(x, y)}")
    b = max(0.0, x - k * z)
    c = max(0.0, y + (k * z - k))
    return b + c


@dataclass
class FoolingCircuitSpec:
    k: float
    detector: LayerGraph | str  # trained detector, or "oracle0" / "oracle1"
    victim: int | None = None  # single-unit mode: output index replaced by the gate
    decoy_image: np.ndarray | None = None  # single-unit mode: image embedded as the decoy
    offset: int | None = None  # permutation mode: decoy_i = F_(i + offset) mod n

    def mode(self) -> str:
        if self.offset is not None and self.victim is None and self.decoy_image is None:
            return "permutation"
        if self.offset is None and self.victim is not None and self.decoy_image is not None:
            return "single"
        raise CircuitError("give either (victim, decoy_image) or offset")


def embed_image_filter(image: np.ndarray) -> np.ndarray:
    """Conv weights (1, C, H, W) equal to the image divided by H*W."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise CircuitError("image must be (C, H, W)")
    if image.min() < 0 or image.max() > 1:
        raise CircuitError("image must lie in [0, 1]")
    h, w = image.shape[1:]
    return (image / (h * w))[None]


def decoy_filter(image: np.ndarray) -> np.ndarray:
    """Embedded filter with the image mean removed.

    A plain non-negative filter is maximized by the all-white image; removing
    the mean makes the box-constrained maximizer reproduce the image's pattern.
    """
    w = embed_image_filter(image)
    return w - w.mean()


def smiley_image(size=(32, 32), channels: int = 3) -> np.ndarray:
    """Bold procedural decoy: a yellow face outline, eyes and mouth on a dark ground.

    Strokes are several pixels wide so the picture survives the jitter transform.
    """
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    sy, sx = h / 32.0, w / 32.0
    cy, cx = (h - 1) / 2, (w - 1) / 2
    r = np.hypot((yy - cy) / sy, (xx - cx) / sx)
    face = (r < 15) & (r > 9.5)
    eyes = (np.hypot((yy - 11 * sy) / sy, (xx - 10.5 * sx) / sx) < 3.5) | \
           (np.hypot((yy - 11 * sy) / sy, (xx - 20.5 * sx) / sx) < 3.5)
    mouth = (r < 7.5) & (r > 3.5) & (yy > 17 * sy)
    m = (face | eyes | mouth).astype(np.float64)
    rgb = np.stack([0.05 + 0.9 * m, 0.85 * m, np.full_like(m, 0.1)])
    if channels == 3:
        return rgb
    return np.repeat(rgb.mean(axis=0, keepdims=True), channels, axis=0)


def oracle_detector(input_shape, value: int) -> LayerGraph:
    """Constant detector: logit +1 (natural) or -1 (visualization) on every input."""
    g = LayerGraph(input_shape)
    g.flatten("flatten", "input")
    n = g.shapes()["flatten"][0]
    g.dense("logit", "flatten", np.zeros((n, 1)), np.array([1.0 if value else -1.0]))
    return g


def _splice(g: LayerGraph, det: LayerGraph, prefix: str) -> str:
    """Copy every non-input layer of ``det`` into ``g`` under ``prefix``."""
    if det.input_shape != g.input_shape:
        raise CircuitError(f"detector input {det.input_shape} differs from model input {g.input_shape}")
    if det.shapes()[det.output] != (1,):
        raise CircuitError("detector must produce a single logit")
    rename = lambda n: "input" if n == "input" else prefix + n  # noqa: E731
    for name, spec in det.layers.items():
        if spec.kind == "input":
            continue
        params = {k.split("/", 1)[1]: v for k, v in det.params.items() if k.split("/", 1)[0] == name}
        g.add(rename(name), spec.kind, [rename(s) for s in spec.inputs], spec.attrs, params,
              trainable=False, output=False)
    return rename(det.output)


def _gate_layers(g: LayerGraph, decoy: str, victim: str, z: str, k: float, n: int, prefix: str) -> str:
    """Signed gate over n units: returns the layer computing D when z = 0 and F when z = 1."""
    ones = np.ones((1, n))
    g.dense(prefix + "neg_kz", z, -k * ones, trainable=False, output=False)
    g.dense(prefix + "kz", z, k * ones, trainable=False, output=False)
    g.add(prefix + "kz_minus_k", "shift", [prefix + "kz"], {"offset": -k}, output=False)
    parts = {}
    for tag, src in (("d", decoy), ("f", victim)):
        g.relu(f"{prefix}{tag}_pos", src, output=False)
        g.add(f"{prefix}{tag}_flip", "scale", [src], {"factor": -1.0}, output=False)
        g.relu(f"{prefix}{tag}_neg", f"{prefix}{tag}_flip", output=False)
        parts[tag] = (f"{prefix}{tag}_pos", f"{prefix}{tag}_neg")
    for sign in (0, 1):
        s = "pos" if sign == 0 else "neg"
        g.add(f"{prefix}b_{s}_pre", "add", [parts["d"][sign], prefix + "neg_kz"], output=False)
        g.relu(f"{prefix}b_{s}", f"{prefix}b_{s}_pre", output=False)
        g.add(f"{prefix}c_{s}_pre", "add", [parts["f"][sign], prefix + "kz_minus_k"], output=False)
        g.relu(f"{prefix}c_{s}", f"{prefix}c_{s}_pre", output=False)
        g.add(f"{prefix}a_{s}", "add", [f"{prefix}b_{s}", f"{prefix}c_{s}"], output=False)
    g.add(prefix + "a_neg_flip", "scale", [prefix + "a_neg"], {"factor": -1.0}, output=False)
    return g.add(prefix + "a", "add", [prefix + "a_pos", prefix + "a_neg_flip"], output=False)


def graft_fooling_circuit(base: LayerGraph, spec: FoolingCircuitSpec, natural=None) -> LayerGraph:
    """Wrap the output layer of ``base``; returns a new graph whose output is the gated layer.

    With ``natural`` given, k is checked against the gated units' range on that data.
    """
    mode = spec.mode()
    if not spec.k > 0:
        raise CircuitError("k must be positive")
    out = base.output
    shape = base.shapes()[out]
    if len(shape) != 1:
        raise CircuitError("the fooling circuit wraps a flat (dense) output layer")
    n_out = shape[0]
    g = base.copy()
    det = spec.detector
    if isinstance(det, str):
        if det not in ("oracle0", "oracle1"):
            raise CircuitError(f"unknown detector {det!r}")
        det = oracle_detector(base.input_shape, int(det[-1]))
    logit = _splice(g, det, "det_")
    z = g.add("fc_z", "step", [logit], output=False)
    p = "fc_"
    if mode == "single":
        if not 0 <= spec.victim < n_out:
            raise CircuitError(f"victim index {spec.victim} out of range")
        sel = np.zeros((n_out, 1))
        sel[spec.victim, 0] = 1.0
        g.dense(p + "victim", out, sel, trainable=False, output=False)
        w = decoy_filter(spec.decoy_image)
        if w.shape[1:] != base.input_shape:
            raise CircuitError(f"decoy image shape {w.shape[1:]} differs from model input {base.input_shape}")
        g.conv(p + "decoy_conv", "input", w, trainable=False, output=False)
        g.flatten(p + "decoy", p + "decoy_conv", output=False)
        gated = _gate_layers(g, p + "decoy", p + "victim", z, spec.k, 1, p)
        keep = np.eye(n_out)
        keep[spec.victim, spec.victim] = 0.0
        place = np.zeros((1, n_out))
        place[0, spec.victim] = 1.0
        g.dense(p + "kept", out, keep, trainable=False, output=False)
        g.dense(p + "placed", gated, place, trainable=False, output=False)
        g.add(p + "out", "add", [p + "kept", p + "placed"])
        decoy_layer, victim_layer = p + "decoy", p + "victim"
    else:
        perm = np.zeros((n_out, n_out))
        for i in range(n_out):
            perm[(i + spec.offset) % n_out, i] = 1.0
        g.dense(p + "permuted", out, perm, trainable=False, output=False)
        gated = _gate_layers(g, p + "permuted", out, z, spec.k, n_out, p)
        g.set_output(gated)
        decoy_layer, victim_layer = p + "permuted", out
    if natural is not None:
        vals = forward_with_taps(g, natural.images, [decoy_layer, victim_layer], chunk=256)
        peak = max(np.abs(vals[decoy_layer]).max(), np.abs(vals[victim_layer]).max())
        if peak > spec.k:
            raise CircuitError(f"k={spec.k} does not bound the gated units (observed {peak})")
    g.meta["attack"] = {
        "kind": "fooling-circuit",
        "mode": mode,
        "k": spec.k,
        "victim": spec.victim,
        "offset": spec.offset,
        "detector": spec.detector if isinstance(spec.detector, str) else _digest(det),
        "decoy_layer": decoy_layer,
        "victim_layer": victim_layer,
        "gate_layer": "fc_z",
    }
    return g


def _digest(det: LayerGraph) -> str:
    from ..netgraph.modelio import model_digest

    return model_digest(det)


def choose_k(base: LayerGraph, natural, probe_images, decoy_image=None, factor: float = 10.0) -> float:
    """factor times the largest |output| / |decoy| over natural data and probe images."""
    images = np.concatenate([natural.images, np.asarray(probe_images)])
    peak = float(np.abs(forward_with_taps(base, images, chunk=256)["output"]).max())
    if decoy_image is not None:
        w = decoy_filter(decoy_image).reshape(-1)
        peak = max(peak, float(np.abs(images.reshape(len(images), -1) @ w).max()), float(np.abs(w).sum()))
    return factor * peak
