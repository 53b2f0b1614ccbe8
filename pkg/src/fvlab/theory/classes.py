"""Grid-level membership checks and random members for each function class."""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .grid import DEFAULT_N, ClassTag, GridFunction, MinMaxSummary, summary_index

TOL = 1e-9  # float slack for grid checks; constructions are exact up to rounding


@dataclass
class Membership:
    passed: bool
    witness: tuple | None = None  # violating grid indices
    detail: str = ""

    def __bool__(self):
        return self.passed


def _ok():
    return Membership(True)


def _monotone_1d(v, tol):
    d = np.diff(v)
    if np.all(d >= -tol) or np.all(d <= tol):
        return _ok()
    up = int(np.argmax(d > tol))
    down = int(np.argmax(d < -tol))
    k = max(up, down)  # first index where the direction has already changed
    return Membership(False, (k - 1, k, k + 1) if k > 0 else (0, 1, 2), "direction changes")


def _monotone_2d(v, tol):
    d1, d2 = np.diff(v, axis=0), np.diff(v, axis=1)
    if (np.all(d1 >= -tol) and np.all(d2 >= -tol)) or (np.all(d1 <= tol) and np.all(d2 <= tol)):
        return _ok()
    return Membership(False, None, "not coordinatewise monotone")


def _convex_1d(v, tol):
    s = v[:-2] - 2 * v[1:-1] + v[2:]
    bad = np.flatnonzero(s < -tol)
    if bad.size == 0:
        return _ok()
    i = int(bad[0]) + 1
    return Membership(False, (i - 1, i, i + 1), f"second difference {s[i - 1]:.3g}")


def _convex_2d(v, tol):
    # axis and diagonal second differences (necessary conditions on a grid)
    checks = [
        v[:-2, :] - 2 * v[1:-1, :] + v[2:, :],
        v[:, :-2] - 2 * v[:, 1:-1] + v[:, 2:],
        v[:-2, :-2] - 2 * v[1:-1, 1:-1] + v[2:, 2:],
        v[:-2, 2:] - 2 * v[1:-1, 1:-1] + v[2:, :-2],
    ]
    for s in checks:
        if np.any(s < -tol):
            return Membership(False, tuple(int(i) for i in np.unravel_index(int(np.argmin(s)), s.shape)),
                              "negative second difference")
    return _ok()


def _lipschitz_1d(v, L, tol):
    # adjacent slopes bound every pairwise slope on a 1D grid
    h = 1.0 / (len(v) - 1)
    slopes = np.abs(np.diff(v)) / h
    i = int(np.argmax(slopes))
    if slopes[i] <= L + tol:
        return _ok()
    return Membership(False, (i, i + 1), f"slope {slopes[i]:.6g} > {L}")


def _lipschitz_2d(v, L, tol):
    # sup-norm distance: axis and diagonal neighbours are all one step apart
    h = 1.0 / (v.shape[0] - 1)
    worst = max(np.abs(np.diff(v, axis=0)).max(), np.abs(np.diff(v, axis=1)).max(),
                np.abs(v[1:, 1:] - v[:-1, :-1]).max(), np.abs(v[1:, :-1] - v[:-1, 1:]).max()) / h
    if worst <= L + tol:
        return _ok()
    return Membership(False, None, f"slope {worst:.6g} > {L}")


def _affine(v, tol):
    axes = [np.arange(n) / (n - 1) for n in v.shape]
    grids = np.meshgrid(*axes, indexing="ij")
    A = np.stack([g.ravel() for g in grids] + [np.ones(v.size)], axis=1)
    coef, *_ = np.linalg.lstsq(A, v.ravel(), rcond=None)
    r = np.abs(A @ coef - v.ravel())
    i = int(np.argmax(r))
    if r[i] <= tol:
        return _ok()
    return Membership(False, tuple(int(k) for k in np.unravel_index(i, v.shape)), f"residual {r[i]:.3g}")


def membership_check(f: GridFunction, tag: ClassTag, tol: float = TOL) -> Membership:
    v = f.values
    if tag.name in ("blackbox", "nn", "erm", "piecewise-affine"):
        # any grid function is piecewise affine under linear interpolation, hence representable
        return _ok()
    if tag.name == "monotone":
        return _monotone_1d(v, tol) if f.dim == 1 else _monotone_2d(v, tol)
    if tag.name == "convex":
        return _convex_1d(v, tol) if f.dim == 1 else _convex_2d(v, tol)
    if tag.name == "lipschitz":
        return _lipschitz_1d(v, tag.L, tol) if f.dim == 1 else _lipschitz_2d(v, tag.L, tol)
    if tag.name == "affine":
        if f.dim != tag.d:
            return Membership(False, None, f"grid is {f.dim}-dimensional, class needs d={tag.d}")
        return _affine(v, tol)
    # constant
    lo, hi = int(np.argmin(v)), int(np.argmax(v))
    if v.flat[hi] - v.flat[lo] <= tol:
        return _ok()
    return Membership(False, (lo, hi), "not constant")


# --------------------------------------------------------------------------
# random members
# --------------------------------------------------------------------------

def class_rng(tag: ClassTag, seed: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(str(tag).encode())])


def _knots(rng, n, lo=2, hi=9):
    k = int(rng.integers(lo, hi))
    inner = np.sort(rng.choice(np.arange(1, n - 1), size=k - 2, replace=False)) if k > 2 else np.array([], int)
    return np.concatenate([[0], inner, [n - 1]]).astype(int)


def _pwl(rng, n, values_fn):
    idx = _knots(rng, n)
    return np.interp(np.arange(n), idx, values_fn(len(idx)))


def random_member(tag: ClassTag, seed: int, n: int | None = None) -> GridFunction:
    """A random element of the class on the default grid, deterministic in (tag, seed)."""
    rng = class_rng(tag, seed)
    n = n or DEFAULT_N[tag.dim]
    x = np.arange(n) / (n - 1)
    name = tag.name
    if name == "blackbox":
        v = rng.uniform(0, 1, n) if rng.random() < 0.5 else _pwl(rng, n, lambda k: rng.uniform(0, 1, k))
    elif name in ("nn", "erm", "piecewise-affine"):
        v = _pwl(rng, n, lambda k: rng.uniform(0, 1, k))
    elif name == "monotone":
        v = _pwl(rng, n, lambda k: np.sort(rng.uniform(0, 1, k)))
        if rng.random() < 0.5:
            v = v[::-1].copy()
    elif name == "convex":
        lines = [rng.uniform(-3, 3) * (x - rng.uniform(0, 1)) for _ in range(int(rng.integers(1, 5)))]
        v = np.max(lines, axis=0)
        lo, hi = np.sort(rng.uniform(0, 1, 2))
        span = v.max() - v.min()
        v = lo + (v - v.min()) * ((hi - lo) / span) if span > 0 else np.full(n, lo)
    elif name == "lipschitz":
        idx = _knots(rng, n)
        slopes = rng.uniform(-tag.L, tag.L, len(idx) - 1)
        knot_v = np.concatenate([[0.0], np.cumsum(slopes * np.diff(idx) / (n - 1))])
        v = np.interp(np.arange(n), idx, knot_v)
        v -= v.min()
        if v.max() > 1:
            v /= v.max()
        v += rng.uniform(0, 1 - v.max())
    elif name == "affine" and tag.d == 1:
        u, w = rng.uniform(0, 1, 2)
        v = u + (w - u) * x
    elif name == "affine":
        a, b = rng.uniform(-0.5, 0.5, 2)
        lo = max(0.0, -a, -b, -a - b)
        hi = min(1.0, 1 - a, 1 - b, 1 - a - b)
        c = rng.uniform(lo, hi)
        x1, x2 = np.meshgrid(x, x, indexing="ij")
        v = a * x1 + b * x2 + c
    else:  # constant
        v = np.full(n, rng.uniform(0, 1))
    return GridFunction(np.clip(v, 0.0, 1.0))


def random_with_summary(s: MinMaxSummary, shape, rng: np.random.Generator) -> GridFunction:
    """Random grid function whose summary is exactly ``s``."""
    (i_min, i_max) = summary_index(s, shape)
    v = rng.uniform(s.f_min, s.f_max, size=shape)
    if s.f_min == s.f_max:
        return GridFunction(v)
    # strict before the extremes so the lowest-index tie rule keeps them
    lo_strict, hi_strict = np.nextafter(s.f_min, np.inf), np.nextafter(s.f_max, -np.inf)
    flat = v.reshape(-1)
    a = np.ravel_multi_index(i_min, shape)
    b = np.ravel_multi_index(i_max, shape)
    flat[:] = np.clip(flat, lo_strict, hi_strict)
    flat[a], flat[b] = s.f_min, s.f_max
    return GridFunction(v)
