"""The ten acceptance criteria, each at its stated tolerance.

Every test appends one ``criterion N: PASS|FAIL ...`` line that the terminal summary prints.
The desk-scale fixtures (base classifier, detector, grafted models) are session-scoped.
"""
import json
import time
from pathlib import Path

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES
from gradcheck import PRIMITIVES, check_primitive

from fvlab.analysis import (aldp, agpa, band, correlation_p, moving_std, normalize_curve, pearson, silent_census,
                            smooth_curve, spearman)
from fvlab.cli import cli
from fvlab.featviz import VizConfig, maximize_unit, maximize_units
from fvlab.fooling import (FoolingCircuitSpec, SilentInjectionSpec, choose_k, detector_accuracy,
                           detector_decisions, detector_units, gate_forward, graft_fooling_circuit,
                           inject_silent_hijack, log_thresholds, smiley_image, synthetic_pool, train_detector,
                           verify_preservation)
from fvlab.netgraph import Dataset, LayerGraph, TrainHyper, UnitRef, forward_with_taps
from fvlab.theory import NEGATIVE_CLASSES, POSITIVE_CLASSES, run_suite


def record(n, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")


# --------------------------------------------------------------------------
# desk-scale fixtures
# --------------------------------------------------------------------------

class DetectorLab:
    def __init__(self, desk):
        t0 = time.perf_counter()
        base = desk.base
        cfg = VizConfig(thresholds=log_thresholds())
        train_units = detector_units(base, 0, output_skip=(0,))
        self.pool = synthetic_pool(base, train_units, cfg, seeds=range(100, 100 + len(train_units)))
        self.hyper = TrainHyper(seed=5)
        self.model = train_detector(desk.train, self.pool, self.hyper)
        relus = [n for n, s in base.layers.items() if s.kind == "relu"]
        held_units = detector_units(base, 1, relus[1:])
        self.held_pool = synthetic_pool(base, held_units, cfg, seeds=range(500, 500 + len(held_units)))
        self.accuracy = detector_accuracy(self.model, desk.test.images, self.held_pool)
        self.seconds = time.perf_counter() - t0
        self.units = (len(train_units), len(held_units))


@pytest.fixture(scope="session")
def detector_lab(desk):
    return DetectorLab(desk)


def _pairwise_min(images, metric):
    vals = [metric(images[i], images[j]) for i in range(len(images)) for j in range(i + 1, len(images))]
    vals = [np.nan if v is None else v for v in vals]
    return float(np.nanmin(vals)), float(np.nanmean(vals))


def _raw_cos(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return float(a @ b / np.linalg.norm(a) / np.linalg.norm(b))


# --------------------------------------------------------------------------
# 1. gradient correctness
# --------------------------------------------------------------------------

def test_criterion_1_gradients():
    t0 = time.perf_counter()
    worst = {p: max(check_primitive(p, s) for s in range(100)) for p in PRIMITIVES}
    secs = time.perf_counter() - t0
    top = max(worst.values())
    ok = top <= 1e-4 and secs < 60
    record(1, ok, f"max rel err {top:.2e} over {len(PRIMITIVES)} primitives x 100 points, {secs:.1f}s")
    assert top <= 1e-4, worst
    assert secs < 60


# --------------------------------------------------------------------------
# 2. gate exactness
# --------------------------------------------------------------------------

def test_criterion_2_gate(desk):
    rng = np.random.default_rng(2)
    x, y = rng.uniform(0, 10, (2, 10_000))
    z = rng.integers(0, 2, 10_000)
    k = np.maximum(x, y) * rng.uniform(1, 5, 10_000)
    err = max(abs(gate_forward(a, b, int(c), kk) - (b if c else a)) for a, b, c, kk in zip(x, y, z, k))
    base, imgs = desk.base, desk.test.images
    out = forward_with_taps(base, imgs, chunk=256)["output"]
    k_big = choose_k(base, desk.train, imgs, smiley_image())
    exact = []
    g1 = graft_fooling_circuit(base, FoolingCircuitSpec(k_big, "oracle1", offset=3), natural=desk.train)
    exact.append(np.array_equal(forward_with_taps(g1, imgs, chunk=256)["output"], out))
    g0 = graft_fooling_circuit(base, FoolingCircuitSpec(k_big, "oracle0", offset=3), natural=desk.train)
    exact.append(np.array_equal(forward_with_taps(g0, imgs, chunk=256)["output"], np.roll(out, -3, axis=1)))
    s1 = graft_fooling_circuit(base, FoolingCircuitSpec(k_big, "oracle1", victim=0, decoy_image=smiley_image()))
    exact.append(np.array_equal(forward_with_taps(s1, imgs, chunk=256)["output"], out))
    s0 = graft_fooling_circuit(base, FoolingCircuitSpec(k_big, "oracle0", victim=0, decoy_image=smiley_image()))
    taps = forward_with_taps(s0, imgs, ["fc_decoy"], chunk=256)
    exact.append(np.array_equal(taps["output"][:, 0], taps["fc_decoy"][:, 0]))
    ok = err <= 1e-6 and all(exact)
    record(2, ok, f"gate max err {err:.1e} over 1e4 draws; oracle identities bit-exact {sum(exact)}/4")
    assert err <= 1e-6
    assert all(exact)


# --------------------------------------------------------------------------
# 3. fooling circuit
# --------------------------------------------------------------------------

def test_criterion_3_fooling_circuit(desk, detector_lab):
    base, det = desk.base, detector_lab.model
    decoy = smiley_image()
    k = choose_k(base, desk.train, detector_lab.pool, decoy)
    wrapped = graft_fooling_circuit(base, FoolingCircuitSpec(k, det, victim=0, decoy_image=decoy), natural=desk.train)
    natural_ok = detector_decisions(det, desk.test.images) == 1
    rep = verify_preservation(base, wrapped, desk.test, mask=natural_ok)
    cfg = VizConfig()
    shown = maximize_unit(wrapped, UnitRef(wrapped.output, 0), cfg)
    original = maximize_unit(base, UnitRef("fc", 0), cfg)
    # similarity of pictures is measured on mean-centered pixels (Pearson)
    to_decoy = pearson(shown.final, decoy)
    to_victim = pearson(shown.final, original.final)
    ok = rep["max_abs_diff"] <= 1e-5 and rep["top1_agreement"] >= 0.99 and to_decoy >= 0.7 and to_victim <= 0.3
    record(3, ok, f"diff {rep['max_abs_diff']:.1e} on {rep['n_masked']}/{rep['n']} detector-natural inputs, "
                  f"top-1 agreement {rep['top1_agreement']:.4f}, cos to decoy {to_decoy:.3f}, "
                  f"to victim viz {to_victim:.3f} (raw {_raw_cos(shown.final, decoy):.3f}/"
                  f"{_raw_cos(shown.final, original.final):.3f})")
    assert rep["max_abs_diff"] <= 1e-5
    assert rep["top1_agreement"] >= 0.99
    assert to_decoy >= 0.7
    assert to_victim <= 0.3


# --------------------------------------------------------------------------
# 4. silent hijack
# --------------------------------------------------------------------------

def test_criterion_4_silent_hijack(desk):
    base = desk.base
    hijacked, rep = inject_silent_hijack(base, SilentInjectionSpec("conv1"), desk.train)
    pres = verify_preservation(base, hijacked, desk.train)
    silent = forward_with_taps(hijacked, desk.train.images, ["conv1_hijack_relu"], chunk=256)["conv1_hijack_relu"]
    units = [UnitRef(rep.block_output, c) for c in rep.units]
    trs = maximize_units(hijacked, units, VizConfig(), seeds=range(len(units)))
    finals = np.stack([t.final for t in trs])
    pmin, pmean = _pairwise_min(finals, pearson)
    rmin, _ = _pairwise_min(finals, lambda a, b: _raw_cos(a, b))
    ortho = float(np.max(rep.orthogonality))
    # the premise: visualization beats every natural activation of the wrapped unit
    natural = forward_with_taps(hijacked, desk.train.images, [rep.block_output], chunk=256)[rep.block_output]
    nat_max = natural.mean(axis=(2, 3)).max(axis=0)
    above = sum(t.activations[-1] > nat_max[t.unit.channel] for t in trs)
    exact = pres["max_abs_diff"] == 0.0 and pres["top1_agreement"] == 1.0 and not silent.any()
    ok = exact and pmin >= 0.8 and ortho <= 1e-8
    record(4, ok, f"diff {pres['max_abs_diff']:.1e}, agreement {pres['top1_agreement']:.3f}, "
                  f"orthogonality {ortho:.1e}, pairwise viz cos min {pmin:.3f} mean {pmean:.3f} "
                  f"(raw min {rmin:.3f}) over {len(units)} units, viz > natural max for {above}/{len(units)}")
    assert pres["max_abs_diff"] == 0.0 and pres["top1_agreement"] == 1.0
    assert not silent.any()
    assert ortho <= 1e-8
    assert pmin >= 0.8


# --------------------------------------------------------------------------
# 5. detector
# --------------------------------------------------------------------------

def test_criterion_5_detector(detector_lab):
    acc, h = detector_lab.accuracy, detector_lab.hyper
    hyper_ok = (h.lr, h.momentum, h.weight_decay, h.epochs) == (0.01, 0.9, 5e-5, 8)
    ok = (acc["overall"] >= 0.95 and acc["natural"] >= 0.9 and acc["synthetic"] >= 0.9
          and detector_lab.seconds < 600 and hyper_ok)
    record(5, ok, f"overall {acc['overall']:.4f}, natural {acc['natural']:.4f} (n={acc['n_natural']}), "
                  f"synthetic {acc['synthetic']:.4f} (n={acc['n_synthetic']}), {detector_lab.seconds:.0f}s "
                  f"incl. pools of {detector_lab.units[0]}+{detector_lab.units[1]} units")
    assert hyper_ok
    assert acc["overall"] >= 0.95
    assert acc["natural"] >= 0.9 and acc["synthetic"] >= 0.9
    assert detector_lab.seconds < 600


# --------------------------------------------------------------------------
# 6. path-similarity pipeline
# --------------------------------------------------------------------------

def _window_ref(v, w):
    h = w // 2
    p = np.concatenate([[v[0]] * h, v, [v[-1]] * h])
    return (np.array([p[i : i + w].mean() for i in range(len(v))]),
            np.array([p[i : i + w].std() for i in range(len(v))]))


def _sum_d2(u, v):
    n = len(u)
    ru = np.argsort(np.argsort(u)) + 1
    rv = np.argsort(np.argsort(v)) + 1
    return 1.0 - 6.0 * int(((ru - rv) ** 2).sum()) / (n * (n * n - 1))


def test_criterion_6_pathsim():
    rng = np.random.default_rng(6)
    same = rng.uniform(0.3, 1, 40)
    cross = same - rng.uniform(0.011, 0.3, 40)
    cross[::7] = same[::7] - rng.uniform(0, 0.009, 6)  # planted gaps under the threshold
    cross[5] = same[5] + 0.02  # a negative gap of sufficient size is kept
    a, excl = normalize_curve(same, same, cross)
    b, _ = normalize_curve(cross, same, cross)
    keep = np.setdiff1d(np.arange(40), excl)
    anchors = bool(np.all(a[keep] == 1.0) and np.all(b[keep] == 0.0))
    threshold = excl == list(range(0, 40, 7))
    werr = 0.0
    for _ in range(200):
        v = rng.standard_normal(int(rng.integers(7, 60)))
        m7, _ = _window_ref(v, 7)
        m5, s5 = _window_ref(v, 5)
        lo, hi = band(v)
        werr = max(werr, np.max(np.abs(smooth_curve(v, 7) - m7)), np.max(np.abs(moving_std(v, 5) - s5)),
                   np.max(np.abs((hi - lo) / 2 - s5)))
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(2, 60))
        u = rng.choice(10_000, n, replace=False)
        v = rng.choice(10_000, n, replace=False)
        mismatches += spearman(u, v) != _sum_d2(u, v)
    ok = anchors and threshold and werr <= 1e-12 and mismatches == 0
    record(6, ok, f"anchors exact {anchors}, excluded {len(excl)} layers under 0.01, window error {werr:.1e}, "
                  f"spearman vs sum-d2 mismatches {mismatches}/1000")
    assert anchors and threshold
    assert werr <= 1e-12
    assert mismatches == 0


# --------------------------------------------------------------------------
# 7. silent census
# --------------------------------------------------------------------------

def _planted_network(rng, silent_channels=(1, 4), silent_dense=(0, 5, 7)):
    g = LayerGraph((3, 8, 8))
    w = rng.uniform(0.05, 0.3, (6, 3, 3, 3))
    b = np.full(6, 0.1)
    for c in silent_channels:
        w[c] = 1 / 27  # mean filter: at most 0.4 on the dark data below, 0.5 at mid gray
        b[c] = -0.45
    g.conv("conv", "input", w, b)
    g.relu("relu1", "conv")
    g.flatten("flat", "relu1")
    dw = rng.uniform(0.01, 0.1, (216, 10))
    db = np.full(10, 0.1)
    for u in silent_dense:
        dw[:, u] *= -1
        db[u] = 0.0
    g.dense("fc", "flat", dw, db)
    g.relu("relu2", "fc")
    return g, 36 * len(silent_channels) + len(silent_dense)


def test_criterion_7_census():
    rng = np.random.default_rng(7)
    data = Dataset(rng.uniform(0, 0.4, (200, 3, 8, 8)), np.zeros(200, int))
    g, planted = _planted_network(rng)
    c = silent_census(g, data)
    taps = forward_with_taps(g, data.images, ["relu1", "relu2"])
    brute = sum(int((taps[k].max(axis=0) == 0).sum()) for k in taps if k != "output")
    t = maximize_unit(g, UnitRef("relu1", 1), VizConfig())
    ok = c.silent_units == planted == brute and t.activations[-1] > 0
    record(7, ok, f"census {c.silent_units} silent units, planted {planted}, brute force {brute}; "
                  f"silent unit visualization reaches {t.activations[-1]:.3f}")
    assert c.silent_units == planted == brute
    assert c.layer("relu1").silent_channel_ids == [1, 4]
    assert t.activations[-1] > 0


# --------------------------------------------------------------------------
# 8. theory suite
# --------------------------------------------------------------------------

def test_criterion_8_theory():
    t0 = time.perf_counter()
    reps = run_suite(NEGATIVE_CLASSES + POSITIVE_CLASSES, seeds=500)
    secs = time.perf_counter() - t0
    failed = [(r.cls, r.seed, {k: v for k, v in r.checks.items() if v is False}) for r in reps if not r.passed]
    by_kind = {}
    for r in reps:
        by_kind[r.kind] = by_kind.get(r.kind, 0) + 1
    ok = not failed and secs < 300 and len(reps) == 500 * 12
    record(8, ok, f"{len(reps) - len(failed)}/{len(reps)} seeded checks pass "
                  f"({by_kind.get('pair', 0)} pairs, {by_kind.get('exact', 0)} exact recoveries), {secs:.0f}s")
    assert not failed, failed[:5]
    assert secs < 300


# --------------------------------------------------------------------------
# 9. linearity metrics
# --------------------------------------------------------------------------

def test_criterion_9_linearity():
    rng = np.random.default_rng(9)
    g = LayerGraph((3, 8, 8))
    g.flatten("flat", "input")
    g.dense("fc", "flat", rng.standard_normal((192, 1)), np.array([0.2]))
    trs = maximize_units(g, [UnitRef("fc", 0)] * 4, VizConfig(jitter=0, record_gradients=True), seeds=range(4))
    aga = agpa([t.gradients for t in trs]).aga
    xs, xf = np.zeros(3), np.array([0.0, 4.0, 0.0])
    cases = {
        0.0: np.array([xs, [0, 1, 0], [0, 3, 0], xf]),
        0.5: np.array([xs, [2.0, 2.0, 0], xf]),
        1.0: np.array([xs, [0, 2.0, 4.0], xf]),
    }
    geo = max(abs(aldp(p[None]).curve[1] - want) for want, p in cases.items())
    p = correlation_p(-0.36, 84)
    ok = aga == 0.0 and geo <= 1e-12 and 0.0005 <= p <= 0.002
    record(9, ok, f"AGA affine {aga:.1e}, ALDP geometry error {geo:.1e}, p(n=84, r=-.36) = {p:.5f}")
    assert aga == 0.0
    assert geo <= 1e-12
    assert 0.0005 <= p <= 0.002


# --------------------------------------------------------------------------
# 10. reproducibility
# --------------------------------------------------------------------------

def test_criterion_10_replay(tmp_path, capsys):
    root = tmp_path / "runs"

    def go(*argv):
        code = cli([str(a) for a in argv] + ["--out", str(root)])
        out = capsys.readouterr().out
        assert code in (0, 1), out
        return [line.split()[1] for line in out.splitlines() if line.startswith("run ")][-1]

    data = Path(go("dataset", "gen", "--classes", "3", "--per-class", "12", "--size", "16"))
    model = Path(go("train", "base", "--data", data / "train.npz", "--test", data / "test.npz", "--epochs", "2"))
    m = model / "model.json"
    runs = [data, model]
    runs.append(Path(go("viz", "--model", m, "--unit", "fc:1", "--unit", "relu1:2", "--steps", "16")))
    runs.append(Path(go("fool", "silent", "--model", m, "--data", data / "train.npz")))
    runs.append(Path(go("fool", "circuit", "--model", m, "--offset", "1", "--data", data / "train.npz")))
    runs.append(Path(go("audit", "preserve", "--original", m, "--modified", runs[-1] / "model.json",
                        "--data", data / "test.npz")))
    runs.append(Path(go("detector", "train", "--model", m, "--data", data / "train.npz", "--steps", "16",
                        "--epochs", "1", "--unit", "fc:0", "--unit", "relu1:0")))
    runs.append(Path(go("detector", "eval", "--detector", runs[-1] / "detector.json", "--model", m,
                        "--data", data / "test.npz", "--steps", "16", "--unit", "relu2:1")))
    runs.append(Path(go("census", "--model", m, "--data", data / "train.npz")))
    runs.append(Path(go("pathsim", "--model", m, "--data", data / "train.npz", "--steps", "16", "--per-class", "4",
                        "--viz-per-class", "2")))
    runs.append(Path(go("linearity", "--model", m, "--unit", "fc:0", "--unit", "fc:2", "--steps", "8")))
    runs.append(Path(go("theory", "verify", "--class", "convex", "--class", "affine(d=2)", "--seeds", "20")))
    runs.append(Path(go("theory", "demo", "--seeds", "2")))
    compared, differing = 0, []
    for d in runs:
        code = cli(["replay", str(d / "resolved_config.json"), "--out", str(tmp_path / "replay")])
        capsys.readouterr()
        twin = tmp_path / "replay" / d.name
        assert code in (0, 1) and twin.exists()
        expected = json.loads((d / "manifest.json").read_text())["outputs"]
        for name, digest in expected.items():
            if name.endswith(".csv"):
                compared += 1
                if (twin / name).read_bytes() != (d / name).read_bytes():
                    differing.append(f"{d.name}/{name}")
    commands = {d.name.rsplit("-", 1)[0] for d in runs}
    ok = not differing and compared > 0
    record(10, ok, f"{len(runs)} runs over {len(commands)} commands replayed, {compared} CSV files, "
                   f"{len(differing)} differ")
    assert not differing
