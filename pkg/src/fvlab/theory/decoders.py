"""Decoders: maps from a min/max summary to a predicted grid function.

A decoder is any callable ``decoder(summary, shape) -> GridFunction``.
"""
from __future__ import annotations

import hashlib

import numpy as np

from .grid import ClassTag, GridError, GridFunction, MinMaxSummary


def midpoint_decoder(s: MinMaxSummary, shape=(1001,)) -> GridFunction:
    """The constant (f_min + f_max) / 2; its sup-error never exceeds half the spread."""
    return GridFunction(np.full(tuple(shape), s.midpoint))


def midpoint_bound(s: MinMaxSummary) -> float:
    return s.spread / 2


def _axes(shape):
    return [np.arange(n) / (n - 1) for n in shape]


def exact_decoders(s: MinMaxSummary, tag: ClassTag, shape=(1001,)) -> GridFunction:
    """Exact recovery for one-dimensional affine and constant functions."""
    if tag.name == "constant":
        return GridFunction(np.full(tuple(shape), s.f_min))
    if not (tag.name == "affine" and tag.d == 1):
        raise GridError(f"no exact decoder for {tag}")
    a, b = affine_coefficients(s)
    return GridFunction(np.clip(a * _axes(shape)[0] + b, 0.0, 1.0))


def affine_coefficients(s: MinMaxSummary) -> tuple:
    """Slope and intercept of the line through (x_min, f_min) and (x_max, f_max)."""
    (x0,), (x1,) = s.x_min, s.x_max
    if x0 == x1:
        if s.f_min != s.f_max:
            raise GridError("impossible summary: equal argmin and argmax with different values")
        return 0.0, s.f_min
    return (s.f_max - s.f_min) / (x1 - x0), (x1 * s.f_min - x0 * s.f_max) / (x1 - x0)


def affine_decoder(s: MinMaxSummary, shape=(1001,)) -> GridFunction:
    """Interpolate linearly from the minimizer to the maximizer (along the segment joining them)."""
    p, q = np.asarray(s.x_min, float), np.asarray(s.x_max, float)
    if np.array_equal(p, q):
        return midpoint_decoder(s, shape)
    grids = np.meshgrid(*_axes(shape), indexing="ij")
    pts = np.stack(grids, axis=-1)
    t = ((pts - p) @ (q - p)) / ((q - p) @ (q - p))
    return GridFunction(np.clip(s.f_min + s.spread * t, s.f_min, s.f_max))


def member_decoder(member: GridFunction):
    """Adversarial decoder that answers with a fixed function (e.g. one pair member)."""
    def decode(s, shape=None):
        if shape is not None and tuple(shape) != member.shape:
            raise GridError("decoder grid mismatch")
        return member
    return decode


def random_decoder(salt: int = 0):
    """Arbitrary decoder: values in [f_min, f_max] seeded by the summary itself."""
    def decode(s: MinMaxSummary, shape=(1001,)):
        key = repr((s, tuple(shape), salt)).encode()
        seed = int.from_bytes(hashlib.sha256(key).digest()[:8], "little")
        rng = np.random.default_rng(seed)
        return GridFunction(rng.uniform(s.f_min, s.f_max, size=tuple(shape)))
    return decode


def decoder_battery(pair) -> dict:
    """Named decoders used by the verifier for one pair."""
    return {
        "midpoint": midpoint_decoder,
        "affine": affine_decoder,
        "member-1": member_decoder(pair.f1),
        "member-2": member_decoder(pair.f2),
        "random": random_decoder(),
    }
