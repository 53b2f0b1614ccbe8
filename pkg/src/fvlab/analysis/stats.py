"""Correlation helpers.  Undefined results (constant input, zero vector) come back as None."""
from __future__ import annotations

import numpy as np
from scipy import stats as _st


def _pair(u, v, min_len=2):
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.size} vs {v.size}")
    if u.size < min_len:
        raise ValueError(f"need at least {min_len} values, got {u.size}")
    return u, v


def _clip(r):
    return float(min(1.0, max(-1.0, r)))


def pearson(u, v):
    u, v = _pair(u, v)
    if np.ptp(u) == 0 or np.ptp(v) == 0:
        return None
    du, dv = u - u.mean(), v - v.mean()
    nu, nv = np.sqrt(du @ du), np.sqrt(dv @ dv)
    return _clip((du @ dv) / (nu * nv))


def cosine(u, v):
    u, v = _pair(u, v, 1)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return None
    return _clip((u @ v) / (nu * nv))


def ranks(x) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    return _st.rankdata(np.asarray(x, dtype=np.float64).ravel(), method="average")


def spearman(u, v):
    """Pearson correlation of average ranks; without ties this is 1 - 6 sum d^2 / (n (n^2 - 1))."""
    u, v = _pair(u, v)
    ru, rv = ranks(u), ranks(v)
    n = u.size
    if np.unique(u).size == n and np.unique(v).size == n:
        d = (ru - rv).astype(np.int64)  # integer ranks, so d^2 sums exactly
        return _clip(1.0 - 6.0 * int(d @ d) / (n * (n * n - 1)))
    return pearson(ru, rv)


def correlation_p(r: float, n: int) -> float:
    """Two-sided p for a correlation r over n pairs: t = r sqrt((n - 2) / (1 - r^2)), n - 2 dof."""
    if n < 4:
        raise ValueError("need at least 4 pairs")
    if abs(r) >= 1.0:
        return 0.0
    t = r * np.sqrt((n - 2) / (1 - r * r))
    return float(2 * _st.t.sf(abs(t), n - 2))


def spearman_with_p(xs, ys):
    """Spearman r with its t-approximation p value."""
    xs, ys = _pair(xs, ys, 4)
    r = spearman(xs, ys)
    if r is None:
        return None, None
    return r, correlation_p(r, xs.size)


METRICS = {"spearman": spearman, "pearson": pearson, "cosine": cosine}


def _standardize_rows(a, center=True):
    a = np.asarray(a, dtype=np.float64)
    if center:
        ok = np.ptp(a, axis=1) > 0
        a = a - a.mean(axis=1, keepdims=True)
    else:
        ok = np.any(a != 0, axis=1)
    norm = np.linalg.norm(a, axis=1, keepdims=True)
    out = np.zeros_like(a)
    out[ok] = a[ok] / norm[ok]
    return out, ok


def pairwise_matrix(A, B, metric: str = "spearman") -> np.ndarray:
    """All-pairs similarity between rows of A and rows of B; undefined entries are NaN."""
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; choose from {sorted(METRICS)}")
    A = np.asarray(A, dtype=np.float64).reshape(len(A), -1)
    B = np.asarray(B, dtype=np.float64).reshape(len(B), -1)
    if A.shape[1] != B.shape[1]:
        raise ValueError("rows of A and B differ in length")
    if metric == "spearman":
        A = np.apply_along_axis(ranks, 1, A)
        B = np.apply_along_axis(ranks, 1, B)
    center = metric != "cosine"
    a, oka = _standardize_rows(A, center)
    b, okb = _standardize_rows(B, center)
    m = np.clip(a @ b.T, -1.0, 1.0)
    m[~oka, :] = np.nan
    m[:, ~okb] = np.nan
    return m
