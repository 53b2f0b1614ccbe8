"""Detector separating natural images from feature-visualization inputs."""
from __future__ import annotations

import numpy as np

from ..featviz import VizConfig, maximize_units
from ..netgraph.data import Dataset
from ..netgraph.graph import LayerGraph, UnitRef, forward_with_taps
from ..netgraph.models import build_detector
from ..netgraph.train import TrainHyper, sgd_train

NATURAL, SYNTHETIC = 1, 0


def log_thresholds(steps: int = 512, count: int = 15) -> tuple:
    """``count`` distinct, roughly log-spaced steps in [1, steps]; rounding collisions bump to the next step."""
    if not 1 <= count <= steps:
        raise ValueError("need 1 <= count <= steps")
    raw = np.rint(np.logspace(0.0, np.log10(steps), count)).astype(int)
    out = []
    for i, t in enumerate(raw):
        lo = out[-1] + 1 if out else 1
        out.append(int(min(max(t, lo), steps - (count - 1 - i))))
    return tuple(out)


def detector_units(graph: LayerGraph, parity: int = 0, layers=None, output_skip=None) -> list:
    """Units whose visualizations feed a detector pool.

    Channels of each ReLU layer in ``layers`` with ``channel % 2 == parity``, plus the model's
    output units except ``output_skip`` (None leaves output units out).
    """
    shapes = graph.shapes()
    if layers is None:
        layers = [n for n, s in graph.layers.items() if s.kind == "relu"]
    units = []
    if output_skip is not None:
        units += [UnitRef(graph.output, c) for c in range(shapes[graph.output][0]) if c not in set(output_skip)]
    for name in layers:
        units += [UnitRef(name, c) for c in range(parity, shapes[name][0], 2)]
    return units


def synthetic_pool(graph: LayerGraph, units, config: VizConfig | None = None, seeds=None,
                   batch: int = 16) -> np.ndarray:
    """Images recorded at log-spaced steps of one visualization run per unit."""
    config = config or VizConfig(thresholds=log_thresholds())
    units = list(units)
    seeds = list(range(len(units))) if seeds is None else list(seeds)
    out = []
    for lo in range(0, len(units), batch):
        trs = maximize_units(graph, units[lo : lo + batch], config, seeds=seeds[lo : lo + batch])
        out.extend(t.images for t in trs)
    return np.concatenate(out)


def detector_dataset(natural, synthetic_images, split: str = "train") -> Dataset:
    nat = np.asarray(natural.images if hasattr(natural, "images") else natural)
    syn = np.asarray(synthetic_images)
    images = np.concatenate([nat, syn])
    labels = np.concatenate([np.full(len(nat), NATURAL), np.full(len(syn), SYNTHETIC)])
    return Dataset(images, labels, split, classes=2)


def train_detector(natural, synthetic_images, hyper: TrainHyper | None = None, seed: int = 0,
                   log=None) -> LayerGraph:
    """Logistic-loss training of the six-conv detector (logit >= 0 means natural)."""
    if len(natural) == 0 or len(synthetic_images) == 0:
        raise ValueError("both natural and synthetic pools must be non-empty")
    data = detector_dataset(natural, synthetic_images)
    hyper = hyper or TrainHyper(seed=seed)
    det = build_detector(data.images.shape[1:], seed=seed)
    return sgd_train(det, data, hyper, log=log).graph


def detector_decisions(detector: LayerGraph, images) -> np.ndarray:
    logits = forward_with_taps(detector, np.asarray(images), chunk=256)["output"].reshape(-1)
    return (logits >= 0).astype(np.int64)


def detector_accuracy(detector, natural_images, synthetic_images) -> dict:
    """Per-class and example-weighted accuracy. ``detector`` may be any images -> {0,1} callable."""
    decide = detector if callable(detector) and not isinstance(detector, LayerGraph) else (
        lambda x: detector_decisions(detector, x))
    nat = np.asarray(decide(np.asarray(natural_images))) == NATURAL
    syn = np.asarray(decide(np.asarray(synthetic_images))) == SYNTHETIC
    total = len(nat) + len(syn)
    return {
        "overall": float((nat.sum() + syn.sum()) / total) if total else float("nan"),
        "natural": float(nat.mean()) if len(nat) else float("nan"),
        "synthetic": float(syn.mean()) if len(syn) else float("nan"),
        "n_natural": int(len(nat)),
        "n_synthetic": int(len(syn)),
    }
