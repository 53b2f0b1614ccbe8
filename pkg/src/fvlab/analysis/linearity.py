"""How straight an optimization path is: gradient angles and distance from the start-end segment."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .stats import spearman_with_p


def _as_sequences(seqs):
    if isinstance(seqs, np.ndarray) and seqs.ndim >= 2:
        seqs = seqs if seqs.ndim >= 3 else seqs[None]
    return [np.asarray(s, dtype=np.float64).reshape(len(s), -1) for s in seqs]


@dataclass
class AGPAResult:
    curve: np.ndarray  # mean angle between step j and j + 1, radians
    aga: float
    per_start: np.ndarray  # (M, N - 1), NaN where a step was excluded
    excluded: int  # angle pairs dropped because a gradient was zero
    prefix_aga: np.ndarray  # prefix_aga[k - 1] = AGA over the first k angles


def successive_angles(grads) -> tuple:
    """Angles between consecutive gradients of one sequence; zero gradients give NaN."""
    g = np.asarray(grads, dtype=np.float64).reshape(len(grads), -1)
    if len(g) < 2:
        raise ValueError("need at least two gradients")
    norm = np.linalg.norm(g, axis=1)
    ok = norm > 0
    u = np.zeros_like(g)
    u[ok] = g[ok] / norm[ok, None]
    # 2 atan2(|u - v|, |u + v|) keeps full precision near 0 and pi, unlike arccos
    ang = 2 * np.arctan2(np.linalg.norm(u[:-1] - u[1:], axis=1), np.linalg.norm(u[:-1] + u[1:], axis=1))
    bad = ~(ok[:-1] & ok[1:])
    ang[bad] = np.nan
    return ang, int(bad.sum())


def _nanmean(a, axis=None):
    with np.errstate(invalid="ignore"):
        cnt = np.sum(~np.isnan(a), axis=axis)
        tot = np.nansum(a, axis=axis)
        return np.where(cnt > 0, tot / np.maximum(cnt, 1), np.nan)


def agpa(sequences) -> AGPAResult:
    """Average gradient path angle per step over start images, and its mean over steps."""
    seqs = _as_sequences(sequences)
    n = {len(s) for s in seqs}
    if len(n) != 1:
        raise ValueError("gradient sequences differ in length")
    rows, excluded = [], 0
    for s in seqs:
        a, bad = successive_angles(s)
        rows.append(a)
        excluded += bad
    per = np.stack(rows)
    curve = _nanmean(per, axis=0)
    prefix = np.array([float(_nanmean(curve[:k])) for k in range(1, len(curve) + 1)])
    return AGPAResult(curve, float(prefix[-1]), per, excluded, prefix)


def segment_distance(points, start, end) -> np.ndarray:
    """Euclidean distance from each point to the segment start -> end."""
    p = np.asarray(points, dtype=np.float64).reshape(len(points), -1)
    a = np.asarray(start, dtype=np.float64).ravel()
    b = np.asarray(end, dtype=np.float64).ravel()
    d = b - a
    dd = d @ d
    if dd == 0:
        raise ValueError("start and end coincide; the segment is degenerate")
    t = np.clip(((p - a) @ d) / dd, 0.0, 1.0)
    return np.linalg.norm(p - (a + t[:, None] * d), axis=1)


@dataclass
class ALDPResult:
    curve: np.ndarray  # distance to the segment over its length, averaged over starts
    ald: float
    per_start: np.ndarray


def aldp(trajectories, starts=None, finals=None) -> ALDPResult:
    """Average line distance per step.

    ``trajectories`` is (M, N, ...) or a list of (N, ...) image sequences; the start and final
    images default to the first and last entry of each sequence.
    """
    seqs = _as_sequences(trajectories)
    rows = []
    for i, s in enumerate(seqs):
        xs = s[0] if starts is None else starts[i]
        xf = s[-1] if finals is None else finals[i]
        length = np.linalg.norm(np.asarray(xf, dtype=np.float64).ravel() - np.asarray(xs, dtype=np.float64).ravel())
        rows.append(segment_distance(s, xs, xf) / length if length > 0 else segment_distance(s, xs, xf))
    per = np.stack(rows)
    curve = per.mean(axis=0)
    return ALDPResult(curve, float(curve.mean()), per)


@dataclass
class LinearityReport:
    agpa_curve: np.ndarray
    aga: float
    aldp_curve: np.ndarray
    ald: float
    per_unit: dict = field(default_factory=dict)  # unit id -> {"aga": .., "ald": .., "prefix_aga": ..}
    correlation: dict = field(default_factory=dict)  # metric -> (r, p) against external scores


def read_scores(path) -> dict:
    """Two-column CSV (unit_id, score); a header row is skipped when its score is not numeric."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            if len(row) < 2:
                raise ValueError(f"score row {row!r} needs two columns")
            try:
                out[row[0].strip()] = float(row[1])
            except ValueError:
                if out:
                    raise
    return out


def linearity_report(trajectories, scores: dict | None = None, prefix: int | None = None) -> LinearityReport:
    """Per-unit AGA and ALD from featviz trajectories recorded with gradients.

    Each trajectory contributes one start image.  Trajectories of the same unit are pooled.
    With ``scores`` the per-unit AGA (over the first ``prefix`` angles if given) and ALD are
    rank-correlated against them.
    """
    by_unit = {}
    for t in trajectories:
        if t.gradients is None:
            raise ValueError("trajectory has no recorded gradients")
        by_unit.setdefault(t.unit.describe(), []).append(t)
    per_unit, all_g, all_x = {}, [], []
    for uid, ts in by_unit.items():
        grads = [t.gradients for t in ts]
        # a path that never left its start has no segment to measure against
        paths = [np.concatenate([t.start[None], t.images]) for t in ts if not np.array_equal(t.start, t.final)]
        a = agpa(grads)
        ald = aldp(paths).ald if paths else float("nan")
        k = len(a.prefix_aga) if prefix is None else min(prefix, len(a.prefix_aga))
        per_unit[uid] = {"aga": a.aga, "ald": ald, "prefix_aga": float(a.prefix_aga[k - 1]),
                         "excluded": a.excluded, "static": len(ts) - len(paths)}
        all_g += grads
        all_x += paths
    a = agpa(all_g)
    d = aldp(all_x) if all_x else None
    corr = {}
    if scores:
        ids = [u for u in per_unit if u in scores]
        if len(ids) >= 4:
            s = [scores[u] for u in ids]
            corr["aga"] = spearman_with_p([per_unit[u]["prefix_aga"] for u in ids], s)
            moved = [u for u in ids if not np.isnan(per_unit[u]["ald"])]
            if len(moved) >= 4:
                corr["ald"] = spearman_with_p([per_unit[u]["ald"] for u in moved], [scores[u] for u in moved])
            corr["n"] = len(ids)
    if d is None:
        return LinearityReport(a.curve, a.aga, np.full(len(all_g[0]), np.nan), float("nan"), per_unit, corr)
    return LinearityReport(a.curve, a.aga, d.curve, d.ald, per_unit, corr)
