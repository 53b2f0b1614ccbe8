"""Architectures used by the lab: the base classifier and the natural-vs-visualization detector."""
from __future__ import annotations

import numpy as np

from .graph import LayerGraph


def he_normal(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


BASE_CHANNELS = (16, 32, 32, 64)
BASE_STRIDES = (1, 2, 2, 2)


def build_base_model(input_shape=(3, 32, 32), classes: int = 10, seed: int = 0,
                     channels=BASE_CHANNELS, strides=BASE_STRIDES) -> LayerGraph:
    """Four conv -> batchnorm -> relu blocks and a dense head producing class logits."""
    rng = np.random.default_rng(seed)
    g = LayerGraph(input_shape)
    src, c_in = "input", input_shape[0]
    for i, (c, s) in enumerate(zip(channels, strides), start=1):
        g.conv(f"conv{i}", src, he_normal(rng, (c, c_in, 3, 3), c_in * 9), stride=s, padding=1)
        g.batchnorm(f"bn{i}", f"conv{i}", np.ones(c), np.zeros(c))
        src = g.relu(f"relu{i}", f"bn{i}")
        c_in = c
    g.flatten("flatten", src)
    width = g.shapes()["flatten"][0]
    g.dense("fc", "flatten", he_normal(rng, (width, classes), width) * 0.5, np.zeros(classes))
    return g


DETECTOR_KERNELS = (3, 5, 5, 5, 5, 3)
DETECTOR_STRIDES = (1, 2, 2, 1, 1, 1)


def add_detector_layers(g: LayerGraph, src: str, prefix: str, seed: int = 0, width: int = 16,
                        kernels=DETECTOR_KERNELS, strides=DETECTOR_STRIDES, params=None) -> str:
    """Append the six-conv detector under ``prefix``; returns the name of its logit layer.

    With ``params`` (a detector graph's parameter dict) the trained weights are copied in.
    """
    rng = np.random.default_rng(seed)
    c_in = g.shapes()[src][0]
    for i, (k, s) in enumerate(zip(kernels, strides), start=1):
        name = f"{prefix}conv{i}"
        w = he_normal(rng, (width, c_in, k, k), c_in * k * k) if params is None else params[f"conv{i}/weight"]
        b = np.zeros(width) if params is None else params[f"conv{i}/bias"]
        g.conv(name, src, w, b, stride=s, padding=k // 2)
        src = g.relu(f"{prefix}relu{i}", name)
        c_in = width
    g.flatten(f"{prefix}flatten", src)
    n = g.shapes()[f"{prefix}flatten"][0]
    w = he_normal(rng, (n, 1), n) * 0.1 if params is None else params["logit/weight"]
    b = np.zeros(1) if params is None else params["logit/bias"]
    return g.dense(f"{prefix}logit", f"{prefix}flatten", w, b)


def build_detector(input_shape=(3, 32, 32), seed: int = 0) -> LayerGraph:
    g = LayerGraph(input_shape)
    add_detector_layers(g, "input", "", seed)
    return g
