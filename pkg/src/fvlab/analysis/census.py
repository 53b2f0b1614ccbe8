"""Count units that never fire on a dataset."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..netgraph.graph import LayerGraph, forward_with_taps


@dataclass
class LayerCensus:
    layer: str
    units: int
    silent_units: int
    channels: int
    silent_channels: int
    silent_channel_ids: list = field(default_factory=list)


@dataclass
class SilentCensus:
    silent_units: int
    total_units: int
    silent_channels: int
    total_channels: int
    per_layer: list
    images: int = 0

    @property
    def unit_fraction(self) -> float:
        return self.silent_units / self.total_units if self.total_units else 0.0

    @property
    def channel_fraction(self) -> float:
        return self.silent_channels / self.total_channels if self.total_channels else 0.0

    def layer(self, name) -> LayerCensus:
        for r in self.per_layer:
            if r.layer == name:
                return r
        raise KeyError(name)


def relu_layers(graph: LayerGraph) -> list:
    return [n for n, spec in graph.layers.items() if spec.kind == "relu"]


def max_activations(graph: LayerGraph, images, layers, chunk: int = 256) -> dict:
    """Elementwise max over the batch of each layer's activation, accumulated chunk by chunk."""
    images = np.asarray(images, dtype=np.float64)
    best = {}
    for lo in range(0, len(images), chunk):
        out = forward_with_taps(graph, images[lo : lo + chunk], layers)
        for k in layers:
            m = out[k].max(axis=0)
            best[k] = m if k not in best else np.maximum(best[k], m)
    return best


def silent_census(graph: LayerGraph, data, layers=None, chunk: int = 256) -> SilentCensus:
    """A unit is silent when its maximum over every image is exactly zero."""
    images = getattr(data, "images", data)
    layers = relu_layers(graph) if layers is None else list(layers)
    if len(images) == 0:
        raise ValueError("empty dataset")
    best = max_activations(graph, images, layers, chunk)
    rows = []
    for k in layers:
        m = best[k]
        dead = m == 0
        per_channel = dead.reshape(m.shape[0], -1).all(axis=1)
        rows.append(LayerCensus(k, int(m.size), int(dead.sum()), int(m.shape[0]), int(per_channel.sum()),
                                [int(c) for c in np.flatnonzero(per_channel)]))
    return SilentCensus(sum(r.silent_units for r in rows), sum(r.units for r in rows),
                        sum(r.silent_channels for r in rows), sum(r.channels for r in rows), rows, len(images))
