"""Activation maximization with trajectory and gradient recording."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .imageio import write_pnm
from .netgraph.graph import LayerGraph, UnitRef, forward_with_taps, objective_and_input_grad, unit_values

DEFAULT_THRESHOLDS = (1, 8, 32, 128, 512)


@dataclass
class VizConfig:
    steps: int = 512
    thresholds: tuple = DEFAULT_THRESHOLDS
    lr: float = 0.05
    jitter: int = 2
    seed: int = 0
    init_scale: float = 0.01
    record_gradients: bool = False

    def __post_init__(self):
        self.thresholds = tuple(int(t) for t in self.thresholds)
        if self.steps < 1 or self.lr <= 0 or self.jitter < 0 or self.init_scale <= 0:
            raise ValueError("steps, lr and init scale must be positive; jitter non-negative")
        t = self.thresholds
        if not t or any(b <= a for a, b in zip(t, t[1:])) or t[0] < 1 or t[-1] > self.steps:
            raise ValueError(f"thresholds {t} must be strictly increasing within [1, {self.steps}]")


@dataclass
class Trajectory:
    unit: UnitRef
    thresholds: tuple
    images: np.ndarray  # (T, C, H, W)
    activations: np.ndarray  # (T,)
    start: np.ndarray
    start_activation: float
    gradients: np.ndarray | None = None  # (steps, C, H, W), unit L2 norm (zero rows for dead steps)
    meta: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.images[-1]


def init_image(shape, seed: int, scale: float = 0.01) -> np.ndarray:
    """Per-pixel uniform noise in [0.5 - scale, 0.5 + scale]."""
    rng = np.random.default_rng(seed)
    return 0.5 + rng.uniform(-scale, scale, size=shape)


def objective_value(graph: LayerGraph, unit: UnitRef, image) -> float:
    graph.check_unit(unit)
    image = np.asarray(image, dtype=np.float64)
    act = forward_with_taps(graph, image[None], [unit.layer])[unit.layer]
    return float(unit_values(act, unit)[0])


def objective_values(graph: LayerGraph, units, images) -> np.ndarray:
    out = forward_with_taps(graph, images, sorted({u.layer for u in units}))
    return np.array([unit_values(out[u.layer][i : i + 1], u)[0] for i, u in enumerate(units)])


def maximize_units(graph: LayerGraph, units, config: VizConfig | None = None, starts=None, seeds=None):
    """Run one ascent per unit, batched; row ``i`` uses ``seeds[i]`` (default ``config.seed``)."""
    config = config or VizConfig()
    units = list(units)
    for u in units:
        graph.check_unit(u)
    n = len(units)
    shape = graph.input_shape
    seeds = [config.seed] * n if seeds is None else [int(s) for s in seeds]
    if starts is None:
        x = np.stack([init_image(shape, s, config.init_scale) for s in seeds])
    else:
        x = np.array(starts, dtype=np.float64).reshape((n,) + shape)
        if x.min() < 0 or x.max() > 1:
            raise ValueError("start images must lie in [0, 1]")
    rngs = [np.random.default_rng([s, 1]) for s in seeds]
    start = x.copy()
    start_act = objective_values(graph, units, x)
    wanted = set(config.thresholds)
    images, acts = [], []
    grads = np.zeros((config.steps, n) + shape) if config.record_gradients else None
    r = config.jitter
    for step in range(1, config.steps + 1):
        shifts = [tuple(rng.integers(-r, r + 1, size=2)) if r else (0, 0) for rng in rngs]
        xj = np.stack([np.roll(x[i], shifts[i], axis=(1, 2)) for i in range(n)])
        _, g = objective_and_input_grad(graph, xj, units)
        g = np.stack([np.roll(g[i], (-shifts[i][0], -shifts[i][1]), axis=(1, 2)) for i in range(n)])
        for i in range(n):
            rms = np.sqrt(np.mean(g[i] ** 2))
            if rms > 0:
                if grads is not None:
                    grads[step - 1, i] = g[i] / np.linalg.norm(g[i])
                x[i] = np.clip(x[i] + config.lr * g[i] / rms, 0.0, 1.0)
        if step in wanted:
            images.append(x.copy())
            acts.append(objective_values(graph, units, x))
    images = np.stack(images, axis=1)
    acts = np.stack(acts, axis=1)
    meta = {"init": f"uniform(0.5 +- {config.init_scale})", "config": _config_dict(config)}
    return [
        Trajectory(u, config.thresholds, images[i], acts[i], start[i], float(start_act[i]),
                   None if grads is None else grads[:, i].copy(), dict(meta, seed=seeds[i]))
        for i, u in enumerate(units)
    ]


def maximize_unit(graph: LayerGraph, unit: UnitRef, config: VizConfig | None = None, start=None) -> Trajectory:
    starts = None if start is None else [start]
    return maximize_units(graph, [unit], config, starts)[0]


def _config_dict(config: VizConfig) -> dict:
    d = asdict(config)
    d["thresholds"] = list(config.thresholds)
    return d


def save_trajectory(traj: Trajectory, directory) -> Path:
    """Images named by step index plus a JSON metadata file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.savez(directory / "trajectory.npz", start=traj.start, images=traj.images,
             thresholds=np.asarray(traj.thresholds), activations=traj.activations)
    # PNM only holds gray or RGB; other channel counts live in the npz alone
    if traj.images.shape[1] in (1, 3):
        ext = "ppm" if traj.images.shape[1] == 3 else "pgm"
        write_pnm(directory / f"step_0000.{ext}", traj.start)
        for t, img in zip(traj.thresholds, traj.images):
            write_pnm(directory / f"step_{t:04d}.{ext}", img)
    meta = {
        "unit": traj.unit.describe(),
        "thresholds": list(traj.thresholds),
        "activations": [float(a) for a in traj.activations],
        "start_activation": traj.start_activation,
        **traj.meta,
    }
    (directory / "metadata.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return directory
