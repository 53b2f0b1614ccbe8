"""Numeric verification of the impossibility and recovery results on grids."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .classes import membership_check, random_member
from .decoders import decoder_battery, exact_decoders, midpoint_decoder
from .grid import ClassTag, GridFunction, minmax_summary, sup_norm
from .pairs import CounterexamplePair, construct_pair

GAP_RTOL = 1e-5  # construction slack relative to the spread
LEMMA_TOL = 1e-12  # triangle inequality in floating point
PROP_TOL = 1e-14  # rounding of (f_min + f_max) / 2
EXACT_TOL = 1e-9

NEGATIVE_CLASSES = ("blackbox", "nn", "erm", "piecewise-affine", "monotone", "convex",
                    "lipschitz(0.5)", "lipschitz(1)", "lipschitz(4)", "affine(d=2)")
POSITIVE_CLASSES = ("affine(d=1)", "constant")
CSV_FIELDS = ("class", "seed", "gap", "bound", "worst_error", "pass")


@dataclass
class BoundReport:
    cls: str
    seed: int | None
    gap: float
    bound: float
    worst_error: float
    passed: bool
    kind: str = "approx"
    checks: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {"class": self.cls, "seed": "" if self.seed is None else self.seed, "gap": repr(self.gap),
                "bound": repr(self.bound), "worst_error": repr(self.worst_error), "pass": int(self.passed)}


def _decode(decoder, pair: CounterexamplePair) -> GridFunction:
    g = decoder(pair.summary, pair.f1.shape)
    if g.shape != pair.f1.shape:
        raise ValueError("decoder returned a function on a different grid")
    return g


def verify_approx_bound(pair: CounterexamplePair, decoder) -> BoundReport:
    """Worst sup-error of ``decoder`` over the two members versus half their distance."""
    g = _decode(decoder, pair)
    worst = max(sup_norm(pair.f1, g), sup_norm(pair.f2, g))
    bound = pair.gap / 2
    return BoundReport(str(pair.tag), None, pair.gap, bound, worst, worst >= bound - LEMMA_TOL, "approx")


def classify_witness(pair: CounterexamplePair):
    """A grid point where f1 and f2 sit on opposite sides of the shared midpoint, or None."""
    m = pair.summary.midpoint
    a, b = pair.f1.values > m, pair.f2.values > m
    if pair.witness is not None and a[pair.witness] != b[pair.witness]:
        return pair.witness
    diff = np.flatnonzero((a != b).ravel())
    if diff.size == 0:
        return None
    idx = np.unravel_index(int(diff[0]), a.shape)
    return idx if len(idx) > 1 else int(idx[0])


def verify_classify_bound(pair: CounterexamplePair, decoder) -> BoundReport:
    """Some member is misclassified (closer to min or max) by ``decoder`` whenever a witness exists."""
    s = pair.summary
    needed = 1.0 if (s.f_max != s.f_min and pair.classify_claimed and not pair.exact) else 0.0
    m = s.midpoint
    g = _decode(decoder, pair)
    gi = g.values > m
    worst = max(float(np.max(np.abs((pair.f1.values > m).astype(float) - gi))),
                float(np.max(np.abs((pair.f2.values > m).astype(float) - gi))))
    w = classify_witness(pair) if needed else None
    ok = (w is not None and worst >= 1.0) if needed else True
    rep = BoundReport(str(pair.tag), None, pair.gap, needed, worst, ok, "classify")
    rep.checks["witness"] = w
    return rep


def proposition_bound_holds(f: GridFunction, tol: float = PROP_TOL) -> bool:
    s = minmax_summary(f)
    return sup_norm(f, midpoint_decoder(s, f.shape)) <= s.spread / 2 + tol


def verify_seed(tag: ClassTag, seed: int) -> BoundReport:
    """Build the pair for one random member and run every check on it."""
    f = random_member(tag, seed)
    s = minmax_summary(f)
    pair = construct_pair(f, tag)
    checks = {}
    checks["summary"] = minmax_summary(pair.f1) == s and minmax_summary(pair.f2) == s
    checks["membership"] = bool(membership_check(pair.f1, tag)) and bool(membership_check(pair.f2, tag))
    checks["gap"] = pair.gap >= pair.target_gap - GAP_RTOL * s.spread - 1e-12
    checks["proposition"] = all(proposition_bound_holds(h) for h in (f, pair.f1, pair.f2))
    errors = {}
    approx_ok = True
    classify_ok = True
    for name, dec in decoder_battery(pair).items():
        r = verify_approx_bound(pair, dec)
        errors[name] = r.worst_error
        approx_ok &= r.passed
        classify_ok &= verify_classify_bound(pair, dec).passed
    checks["lemma"] = approx_ok
    checks["classify"] = classify_ok
    if pair.classify_claimed and s.spread > 0 and not pair.exact:
        checks["witness"] = classify_witness(pair) is not None
    rep = BoundReport(str(tag), seed, pair.gap, pair.target_gap / 2, min(errors.values()),
                      all(checks.values()), "pair", checks)
    rep.checks["case"] = pair.case
    return rep


def verify_exact(tag: ClassTag, seed: int) -> BoundReport:
    """Exact decoders recover one-dimensional affine and constant members."""
    f = random_member(tag, seed)
    s = minmax_summary(f)
    err = sup_norm(f, exact_decoders(s, tag, f.shape))
    return BoundReport(str(tag), seed, 0.0, 0.0, err, err <= EXACT_TOL and proposition_bound_holds(f), "exact")


def verify_class(tag, seeds) -> list:
    tag = ClassTag.parse(tag) if isinstance(tag, str) else tag
    exact = tag.name == "constant" or (tag.name == "affine" and tag.d == 1)
    fn = verify_exact if exact else verify_seed
    return [fn(tag, int(s)) for s in seeds]


def run_suite(classes=NEGATIVE_CLASSES + POSITIVE_CLASSES, seeds=500, start: int = 0) -> list:
    out = []
    for c in classes:
        out.extend(verify_class(c, range(start, start + seeds)))
    return out


def reports_to_csv(reports, fh=None) -> str:
    buf = io.StringIO() if fh is None else fh
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue() if fh is None else ""


def demo_table(seeds: int = 20) -> list:
    """Rows (class, exact?, eps-approx?, closer to min or max?) backed by verified runs."""
    rows = []
    for c in NEGATIVE_CLASSES + POSITIVE_CLASSES:
        reps = verify_class(c, range(seeds))
        ok = all(r.passed for r in reps)
        tag = ClassTag.parse(c)
        if c in POSITIVE_CLASSES:
            cells = ("Yes", "Yes", "Yes") if ok else ("?", "?", "?")
        else:
            no = "No" if ok and any(r.gap > 0 for r in reps) else "?"
            third = no
            if tag.name == "lipschitz":
                third = "No if 2*spread <= L*|x_max - x_min|" if ok else "?"
            cells = (no, no, third)
        rows.append((c,) + cells)
    return rows


def format_table(rows) -> str:
    head = ("class", "exactly?", "eps-approx?", "closer to min or max?")
    widths = [max(len(str(r[i])) for r in [head] + list(rows)) for i in range(4)]
    fmt = "  ".join("{:<%d}" % w for w in widths)
    lines = [fmt.format(*head), fmt.format(*("-" * w for w in widths))]
    lines += [fmt.format(*r) for r in rows]
    return "\n".join(lines)
