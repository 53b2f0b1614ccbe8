"""Functions sampled on uniform grids over [0,1]^d and their min/max summaries."""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

DEFAULT_N = {1: 1001, 2: 101}


class GridError(ValueError):
    pass


class GridFunction:
    """Values of f on the uniform grid; axis k of ``values`` is input coordinate k."""

    def __init__(self, values):
        v = np.array(values, dtype=np.float64)
        if v.ndim not in (1, 2):
            raise GridError("only 1- and 2-dimensional grids are supported")
        if min(v.shape) < 2:
            raise GridError("a grid needs at least two points per axis")
        if not np.all(np.isfinite(v)):
            raise GridError("values must be finite")
        if v.min() < 0.0 or v.max() > 1.0:
            raise GridError("values must lie in [0, 1]")
        v.setflags(write=False)
        self.values = v

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def coords(self, index) -> tuple:
        """Grid index -> point in [0,1]^d (exact quotient idx/(n-1))."""
        return tuple(i / (n - 1) for i, n in zip(index, self.shape))

    def axis(self, k: int = 0) -> np.ndarray:
        n = self.shape[k]
        return np.arange(n) / (n - 1)

    @classmethod
    def from_callable(cls, fn, n: int = 1001, dim: int = 1) -> "GridFunction":
        x = np.arange(n) / (n - 1)
        if dim == 1:
            return cls(fn(x))
        x1, x2 = np.meshgrid(x, x, indexing="ij")
        return cls(fn(x1, x2))

    def __repr__(self):
        return f"GridFunction(shape={self.shape})"


@dataclass(frozen=True)
class MinMaxSummary:
    x_min: tuple
    x_max: tuple
    f_min: float
    f_max: float

    @property
    def midpoint(self) -> float:
        return (self.f_min + self.f_max) / 2

    @property
    def spread(self) -> float:
        return self.f_max - self.f_min


def minmax_summary(f: GridFunction) -> MinMaxSummary:
    """Exact grid argmin/argmax; ties go to the lowest (row-major) index."""
    v = f.values
    i_min = np.unravel_index(int(np.argmin(v)), v.shape)
    i_max = np.unravel_index(int(np.argmax(v)), v.shape)
    return MinMaxSummary(f.coords(i_min), f.coords(i_max), float(v[i_min]), float(v[i_max]))


def sup_norm(f: GridFunction, g: GridFunction) -> float:
    if f.shape != g.shape:
        raise GridError(f"grid mismatch: {f.shape} vs {g.shape}")
    return float(np.max(np.abs(f.values - g.values)))


def summary_index(s: MinMaxSummary, shape) -> tuple:
    """Grid indices of (x_min, x_max) on a grid of ``shape``; rejects off-grid points."""
    out = []
    for point in (s.x_min, s.x_max):
        idx = []
        for x, n in zip(point, shape):
            i = int(round(x * (n - 1)))
            if i / (n - 1) != x:
                raise GridError(f"point {point} is not on a grid with {n} points per axis")
            idx.append(i)
        out.append(tuple(idx))
    return tuple(out)


@dataclass(frozen=True)
class ClassTag:
    name: str
    L: float | None = None
    d: int | None = None

    NAMES = ("blackbox", "nn", "erm", "lipschitz", "piecewise-affine", "monotone", "convex", "affine", "constant")

    def __post_init__(self):
        if self.name not in self.NAMES:
            raise GridError(f"unknown function class {self.name!r}")
        if self.name == "lipschitz" and not (self.L is not None and self.L > 0):
            raise GridError("lipschitz needs L > 0")
        if self.name == "affine" and self.d not in (1, 2):
            raise GridError("affine needs d in {1, 2}")

    @property
    def dim(self) -> int:
        return self.d if self.name == "affine" else 1

    def __str__(self):
        if self.name == "lipschitz":
            return f"lipschitz({self.L:g})"
        if self.name == "affine":
            return f"affine(d={self.d})"
        return self.name

    @classmethod
    def parse(cls, text: str) -> "ClassTag":
        """'monotone', 'lipschitz(0.5)', 'affine(d=2)' or 'affine(2)'."""
        m = re.fullmatch(r"\s*([a-z-]+)\s*(?:\(\s*(?:[a-zA-Z]+\s*=\s*)?([0-9.eE+-]+)\s*\))?\s*", text)
        if not m:
            raise GridError(f"cannot parse class tag {text!r}")
        name, arg = m.group(1), m.group(2)
        if name == "lipschitz":
            if arg is None:
                raise GridError("lipschitz needs a constant, e.g. lipschitz(1)")
            return cls(name, L=float(arg))
        if name == "affine":
            return cls(name, d=int(arg) if arg is not None else 1)
        if arg is not None:
            raise GridError(f"class {name!r} takes no parameter")
        return cls(name)
