"""Counterexample pairs: two class members with the same summary but far apart.

One-dimensional pairs are built on a grid four times finer than the seed's, so
midpoints and quarter points of seed grid points are themselves grid points and
the shared summary is reproduced exactly.  Each builder keeps the extremes
unique where the lowest-index tie rule would otherwise move them: values before
x_min stay strictly above f_min, values before x_max strictly below f_max.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classes import membership_check
from .grid import ClassTag, GridError, GridFunction, MinMaxSummary, minmax_summary, summary_index, sup_norm

REFINE = 4
EPS = 1e-6  # relative slack used to keep extremes unique; costs at most 2 * EPS * spread of gap


class PairError(ValueError):
    pass


@dataclass
class CounterexamplePair:
    f1: GridFunction
    f2: GridFunction
    tag: ClassTag
    summary: MinMaxSummary
    gap: float  # sup-distance |f1 - f2|, measured on the grid
    target_gap: float  # the constant the construction certifies
    case: str = ""
    exact: bool = False  # class member recoverable from its summary; no counterexample exists
    witness: int | tuple | None = None  # point where f1, f2 fall on opposite sides of the midpoint
    classify_claimed: bool = True
    meta: dict = field(default_factory=dict)


def fine_shape(shape) -> tuple:
    return tuple(REFINE * (n - 1) + 1 for n in shape)


def _finalize(v, ia, ib, fmin, fmax):
    """Clip into [fmin, fmax], pin the extremes and make them the first occurrences."""
    v = np.clip(v, fmin, fmax)
    if fmax > fmin:
        v[:ia] = np.maximum(v[:ia], np.nextafter(fmin, np.inf))
        v[:ib] = np.minimum(v[:ib], np.nextafter(fmax, -np.inf))
    v[ia], v[ib] = fmin, fmax
    return v


def _reflect(v, fmin, fmax):
    """Swap the roles of min and max: fmin + fmax - v, exact at both extremes."""
    out = np.clip(fmin + fmax - v, fmin, fmax)
    out[v == fmax] = fmin
    out[v == fmin] = fmax
    inner = (v != fmin) & (v != fmax)
    if fmax > fmin:
        out[inner] = np.clip(out[inner], np.nextafter(fmin, np.inf), np.nextafter(fmax, -np.inf))
    return out


def _interp_fine(f: GridFunction) -> np.ndarray:
    n = f.shape[0]
    m = fine_shape(f.shape)[0]
    return np.interp(np.arange(m) / REFINE, np.arange(n), f.values)


def _increasing_pair(m, ia, ib, fmin, fmax):
    """Flat-then-steep pair for ia < ib; gap at the midpoint (ia + ib) / 2."""
    k = np.arange(m, dtype=np.float64)
    x = k / (m - 1)
    d = fmax - fmin
    eps = EPS * d
    im = (ia + ib) // 2
    left = fmin + (d / 4) * (ia / (m - 1) - x)
    f1 = np.where(k <= im, fmin, fmin + d * (k - im) / (ib - im))
    f1 = np.where(k < ia, left, np.where(k >= ib, fmax, f1))
    rise = fmin + (d - eps) * (k - ia) / (im - ia)
    creep = (fmax - eps) + eps * (k - im) / (ib - im)
    f2 = np.where(k <= im, rise, creep)
    f2 = np.where(k < ia, left, np.where(k >= ib, fmax, f2))
    return f1, f2, im


def _lipschitz_wing_pair(m, ia, ib, fmin, fmax, L):
    """Linear core with flat ends (f1) versus +/-L wings (f2)."""
    k = np.arange(m, dtype=np.float64)
    x = k / (m - 1)
    d = fmax - fmin
    xa, xb = ia / (m - 1), ib / (m - 1)
    core = fmin + d * (k - ia) / (ib - ia)
    s = EPS * min(L, d)
    f1 = np.where(k < ia, fmin + s * (xa - x), np.where(k > ib, fmax, core))
    f2 = np.where(k < ia, np.minimum(fmin + L * (xa - x), fmax - EPS * d),
                  np.where(k > ib, np.maximum(fmax - L * (x - xb), fmin), core))
    return f1, f2


def _oriented(builder, m, ia, ib, fmin, fmax):
    """Run an ia < ib builder, reflecting values when the maximum comes first."""
    if ia < ib:
        f1, f2, *rest = builder(m, ia, ib, fmin, fmax)
        return _finalize(f1, ia, ib, fmin, fmax), _finalize(f2, ia, ib, fmin, fmax), rest, "direct"
    g1, g2, *rest = builder(m, ib, ia, fmin, fmax)
    g1, g2 = _finalize(g1, ib, ia, fmin, fmax), _finalize(g2, ib, ia, fmin, fmax)
    h1, h2 = _reflect(g1, fmin, fmax), _reflect(g2, fmin, fmax)
    return _finalize(h1, ia, ib, fmin, fmax), _finalize(h2, ia, ib, fmin, fmax), rest, "reflected"


def _convex_pair(m, ia, fmin, fmax):
    """Maximum at the right end, ia < m - 1: linear ramp versus flat-then-double-slope."""
    k = np.arange(m, dtype=np.float64)
    ib = m - 1
    d = fmax - fmin
    s = EPS * d
    vee = fmin + s * np.abs(k - ia) / (m - 1)
    f1 = np.maximum(vee, fmin + d * (k - ia) / (ib - ia))
    kc = (ia + ib) // 2
    f2 = np.maximum(vee, fmin + 2 * d * (k - kc) / (ib - ia))
    kw = (ia + 3 * ib) // 4  # x_min / 4 + 3 / 4
    mid = (fmin + fmax) / 2
    f2[kw] = min(f2[kw], mid)
    return _finalize(f1, ia, ib, fmin, fmax), _finalize(f2, ia, ib, fmin, fmax), kc, kw


def _affine2_pair(f: GridFunction, s: MinMaxSummary, i_min, i_max):
    n1, n2 = f.shape
    x1, x2 = np.meshgrid(np.arange(n1) / (n1 - 1), np.arange(n2) / (n2 - 1), indexing="ij")
    fmin, fmax = s.f_min, s.f_max
    d = fmax - fmin
    # values at the corners (1,0) and (0,1)
    v10, v01 = (fmax, fmin) if i_max == (n1 - 1, 0) else (fmin, fmax)
    members = []
    for c in (fmin + EPS * d, fmax - EPS * d):
        v = c + (v10 - c) * x1 + (v01 - c) * x2
        v = np.clip(v, fmin, fmax)
        v[i_min], v[i_max] = fmin, fmax
        members.append(GridFunction(v))
    return members


def construct_pair(f: GridFunction, tag: ClassTag) -> CounterexamplePair:
    """Two members of ``tag`` sharing f's summary, as far apart as the class allows."""
    if tag.name == "constant" or (tag.name == "affine" and tag.d == 1):
        raise PairError(f"{tag} is exactly recoverable from its summary; there is no counterexample pair")
    ok = membership_check(f, tag)
    if not ok:
        raise PairError(f"seed function is not in {tag}: {ok.detail} at {ok.witness}")
    s = minmax_summary(f)
    d = s.spread
    if tag.name == "affine":
        return _affine2(f, tag, s)
    if f.dim != 1:
        raise GridError(f"{tag} pairs are one-dimensional")
    n = f.shape[0]
    m = fine_shape(f.shape)[0]
    (ia,), (ib,) = summary_index(s, (m,))
    if d == 0:
        v = GridFunction(_interp_fine(f))
        return CounterexamplePair(v, v, tag, s, 0.0, 0.0, "constant", witness=None)
    witness = None
    claimed = True
    if tag.name == "convex":
        if ib == m - 1:
            f1, f2, kc, kw = _convex_pair(m, ia, s.f_min, s.f_max)
            case = "max-right"
        elif ib == 0:
            g1, g2, kc, kw = _convex_pair(m, m - 1 - ia, s.f_min, s.f_max)
            f1, f2, kc, kw = g1[::-1].copy(), g2[::-1].copy(), m - 1 - kc, m - 1 - kw
            case = "max-left"
        else:
            raise PairError("a convex function attains its maximum at an end point")
        target = d / 2
        witness = kw
    elif tag.name == "lipschitz" and 2 * d > tag.L * abs(ib - ia) / (m - 1):
        f1, f2, _, case = _oriented(lambda *a: (*_lipschitz_wing_pair(*a, tag.L),), m, ia, ib, s.f_min, s.f_max)
        lo, hi = min(ia, ib) / (m - 1), max(ia, ib) / (m - 1)
        target = max(min(tag.L * lo, d), min(tag.L * (1 - hi), d))
        case = "wings-" + case
        claimed = False
    else:
        f1, f2, (im,), case = _oriented(_increasing_pair, m, ia, ib, s.f_min, s.f_max)
        target = d
        witness = im
        case = "flat-steep-" + case
    g1, g2 = GridFunction(f1), GridFunction(f2)
    return CounterexamplePair(g1, g2, tag, s, sup_norm(g1, g2), target, case, witness=witness,
                              classify_claimed=claimed, meta={"seed_points": n, "points": m})


def _affine2(f, tag, s):
    n1, n2 = f.shape
    i_min, i_max = summary_index(s, f.shape)
    corners = {(0, n2 - 1), (n1 - 1, 0)}
    if s.spread > 0 and {i_min, i_max} == corners:
        g1, g2 = _affine2_pair(f, s, i_min, i_max)
        return CounterexamplePair(g1, g2, tag, s, sup_norm(g1, g2), s.spread, "anti-diagonal corners",
                                  witness=(n1 - 1, n2 - 1))
    # the remaining corner configurations pin down the function
    return CounterexamplePair(f, f, tag, s, 0.0, 0.0, "recoverable", exact=True, classify_claimed=False)
