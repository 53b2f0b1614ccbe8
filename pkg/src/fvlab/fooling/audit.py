"""Behaviour-preservation sweeps comparing an original and a modified model."""
from __future__ import annotations

import numpy as np

from ..netgraph.graph import LayerGraph, forward_with_taps


def verify_preservation(original: LayerGraph, modified: LayerGraph, data, mask=None, chunk: int = 256) -> dict:
    """Max |output difference|, top-1 and top-k (k = min(5, classes)) agreement.

    ``mask`` optionally restricts the max-difference to a subset of samples
    (agreement is always reported over the full sweep).
    """
    images = np.asarray(data.images if hasattr(data, "images") else data)
    a = forward_with_taps(original, images, chunk=chunk)["output"]
    b = forward_with_taps(modified, images, chunk=chunk)["output"]
    if a.shape != b.shape:
        raise ValueError(f"output shapes differ: {a.shape} vs {b.shape}")
    diff = np.abs(a - b).reshape(len(a), -1).max(axis=1)
    sel = np.ones(len(a), bool) if mask is None else np.asarray(mask, bool)
    k = min(5, a.shape[1])
    top_a = np.argsort(-a, axis=1, kind="stable")[:, :k]
    top_b = np.argsort(-b, axis=1, kind="stable")[:, :k]
    same_set = np.array([set(x) == set(y) for x, y in zip(top_a, top_b)])
    return {
        "max_abs_diff": float(diff[sel].max()) if sel.any() else 0.0,
        "max_abs_diff_all": float(diff.max()),
        "top1_agreement": float(np.mean(top_a[:, 0] == top_b[:, 0])),
        "topk_agreement": float(np.mean(same_set)),
        "k": int(k),
        "n": int(len(a)),
        "n_masked": int(sel.sum()),
    }
