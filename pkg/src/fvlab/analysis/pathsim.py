"""Layer-by-layer activation similarity between natural images and visualizations."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter1d

from ..netgraph.graph import LayerGraph, forward_with_taps, predict
from .stats import METRICS, pairwise_matrix

GAP_THRESHOLD = 0.01
SMOOTH_WINDOW = 7
BAND_WINDOW = 5
CSV_FIELDS = ("layer", "raw_same", "raw_cross", "raw_viz", "normalized", "smoothed", "band_lo", "band_hi",
              "excluded")


@dataclass
class LayerSimilarity:
    layers: list
    mean: np.ndarray
    pairs: np.ndarray  # pairs that entered the mean
    undefined: np.ndarray  # pairs dropped because the metric had no value


def _pair_values(A, B, metric, stride, triangle):
    m = pairwise_matrix(A, B, metric)
    if triangle:
        m = m[np.triu_indices(m.shape[0], k=1)]
    vals = m.ravel()[:: max(1, int(stride))]
    ok = ~np.isnan(vals)
    return vals[ok], int((~ok).sum())


def _activations(graph, images, layers, chunk=64):
    out = forward_with_taps(graph, images, layers, chunk=chunk)
    return {k: out[k].reshape(len(images), -1) for k in layers}


def layerwise_similarity(graph: LayerGraph, setA, setB, layers, metric: str = "spearman", stride: int = 1,
                         distinct: bool = False) -> LayerSimilarity:
    """Mean pairwise similarity of flattened activations per layer.

    ``distinct`` treats setA and setB as the same set and only uses pairs i < j.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    if len(setA) == 0 or len(setB) == 0:
        raise ValueError("both image sets must be non-empty")
    layers = list(layers)
    acts_a = _activations(graph, np.asarray(setA, dtype=np.float64), layers)
    acts_b = acts_a if distinct else _activations(graph, np.asarray(setB, dtype=np.float64), layers)
    mean, pairs, bad = [], [], []
    for name in layers:
        vals, nbad = _pair_values(acts_a[name], acts_b[name], metric, stride, distinct)
        mean.append(vals.mean() if vals.size else np.nan)
        pairs.append(vals.size)
        bad.append(nbad)
    return LayerSimilarity(layers, np.array(mean), np.array(pairs), np.array(bad))


def normalize_curve(raw, same, cross, threshold: float = GAP_THRESHOLD):
    """(raw - cross) / (same - cross); layers whose baselines differ by less than ``threshold`` are NaN."""
    raw, same, cross = (np.asarray(a, dtype=np.float64) for a in (raw, same, cross))
    if not raw.shape == same.shape == cross.shape:
        raise ValueError("curves are not aligned")
    gap = same - cross
    excluded = ~(np.abs(gap) >= threshold)  # NaN baselines are excluded too
    out = np.full(raw.shape, np.nan)
    keep = ~excluded
    out[keep] = (raw[keep] - cross[keep]) / gap[keep]
    return out, [int(i) for i in np.flatnonzero(excluded)]


def _check_window(n, window):
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd and positive, got {window}")
    if window > n:
        raise ValueError(f"window {window} exceeds the {n} values")


def smooth_curve(values, window: int = SMOOTH_WINDOW) -> np.ndarray:
    """Moving average; ends are padded by repeating the edge value."""
    v = np.asarray(values, dtype=np.float64)
    _check_window(v.size, window)
    return uniform_filter1d(v, window, mode="nearest")


def moving_std(values, window: int = BAND_WINDOW) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    _check_window(v.size, window)
    m = uniform_filter1d(v, window, mode="nearest")
    m2 = uniform_filter1d(v * v, window, mode="nearest")
    return np.sqrt(np.maximum(m2 - m * m, 0.0))


def band(values, smoothed=None, window: int = BAND_WINDOW):
    """Smoothed curve -/+ the windowed standard deviation of the unsmoothed values."""
    v = np.asarray(values, dtype=np.float64)
    s = smooth_curve(v) if smoothed is None else np.asarray(smoothed, dtype=np.float64)
    sd = moving_std(v, window)
    return s - sd, s + sd


def _fit_window(n, window):
    """Largest odd window not above ``window`` and ``n``."""
    w = min(window, n)
    return w if w % 2 else w - 1


@dataclass
class SimilarityReport:
    layers: list
    raw_same: np.ndarray
    raw_cross: np.ndarray
    raw_viz: np.ndarray
    normalized: np.ndarray
    smoothed: np.ndarray
    band_lo: np.ndarray
    band_hi: np.ndarray
    excluded: list
    metric: str
    meta: dict = field(default_factory=dict)

    def rows(self):
        for i, name in enumerate(self.layers):
            yield {"layer": name, "raw_same": self.raw_same[i], "raw_cross": self.raw_cross[i],
                   "raw_viz": self.raw_viz[i], "normalized": self.normalized[i], "smoothed": self.smoothed[i],
                   "band_lo": self.band_lo[i], "band_hi": self.band_hi[i], "excluded": int(name in self.excluded)}

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO() if fh is None else fh
        w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in self.rows():
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})
        return buf.getvalue() if fh is None else ""


def similarity_report(graph: LayerGraph, images, labels, viz: dict, layers, metric: str = "spearman",
                      per_class: int = 20, stride: int = 1, window: int = SMOOTH_WINDOW,
                      band_window: int = BAND_WINDOW, threshold: float = GAP_THRESHOLD, seed: int = 0):
    """Same-class, cross-class and natural-vs-visualization curves, normalized and smoothed.

    ``viz`` maps a class id to a batch of visualizations of that class.  Natural images the
    model misclassifies are left out.  Per-class means are averaged over classes.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    layers = list(layers)
    correct = predict(graph, images) == labels
    rng = np.random.default_rng(seed)
    groups = {}
    for c in sorted(viz):
        idx = np.flatnonzero(correct & (labels == c))
        if idx.size < 2:
            continue
        groups[c] = np.sort(rng.permutation(idx)[:per_class])
    if not groups:
        raise ValueError("no class has two correctly classified images and a visualization")
    nat = np.concatenate(list(groups.values()))
    acts = _activations(graph, images[nat], layers)
    offsets, at = {}, 0
    for c, idx in groups.items():
        offsets[c] = slice(at, at + idx.size)
        at += idx.size
    vacts = {c: _activations(graph, np.asarray(viz[c], dtype=np.float64).reshape((-1,) + graph.input_shape),
                             layers) for c in groups}
    same = np.zeros(len(layers))
    cross = np.zeros(len(layers))
    vis = np.zeros(len(layers))
    undefined = 0
    for li, name in enumerate(layers):
        a = acts[name]
        s_, c_, v_ = [], [], []
        for c, sl in offsets.items():
            mine = a[sl]
            other = np.delete(a, np.arange(sl.start, sl.stop), axis=0)
            for bucket, (B, tri) in ((s_, (mine, True)), (c_, (other, False)), (v_, (vacts[c][name], False))):
                if len(B) == 0:
                    continue
                vals, nbad = _pair_values(mine, B, metric, stride, tri)
                undefined += nbad
                if vals.size:
                    bucket.append(vals.mean())
        same[li], cross[li], vis[li] = (np.mean(b) if b else np.nan for b in (s_, c_, v_))
    norm, excl = normalize_curve(vis, same, cross, threshold)
    keep = np.array([i for i in range(len(layers)) if i not in excl], dtype=int)
    smoothed = np.full(len(layers), np.nan)
    lo, hi = smoothed.copy(), smoothed.copy()
    sw = bw = 0
    if keep.size:
        sw, bw = _fit_window(keep.size, window), _fit_window(keep.size, band_window)
        smoothed[keep] = smooth_curve(norm[keep], sw)
        lo[keep], hi[keep] = band(norm[keep], smoothed[keep], bw)
    meta = {"classes": sorted(groups), "natural_images": int(nat.size), "undefined_pairs": undefined,
            "smooth_window": sw, "band_window": bw, "stride": stride}
    return SimilarityReport(layers, same, cross, vis, norm, smoothed, lo, hi, [layers[i] for i in excl],
                            metric, meta)
