import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fvlab.theory import (ClassTag, GridError, GridFunction, MinMaxSummary, PairError, affine_coefficients,
                          classify_witness, construct_pair, demo_table, exact_decoders, format_table,
                          member_decoder, membership_check, midpoint_decoder, minmax_summary,
                          proposition_bound_holds, random_decoder, random_member, random_with_summary,
                          reports_to_csv, sup_norm, verify_approx_bound, verify_class, verify_classify_bound)

X101 = np.arange(101) / 100


def _f(fn, n=101):
    return GridFunction.from_callable(fn, n)


def test_minmax_examples():
    assert minmax_summary(_f(lambda x: x)) == MinMaxSummary((0.0,), (1.0,), 0.0, 1.0)
    s = minmax_summary(_f(lambda x: np.full_like(x, 0.5)))
    assert s.x_min == s.x_max == (0.0,) and s.f_min == s.f_max == 0.5
    s = minmax_summary(_f(lambda x: 4 * x * (1 - x)))
    assert s.x_max == (0.5,) and s.x_min == (0.0,) and s.f_max == 1.0


def test_grid_function_validation():
    with pytest.raises(GridError):
        GridFunction([0.2, 1.5])
    with pytest.raises(GridError):
        GridFunction([0.2])
    with pytest.raises(GridError):
        sup_norm(_f(lambda x: x), _f(lambda x: x, 11))
    assert sup_norm(_f(lambda x: 0 * x), _f(lambda x: 0 * x + 1)) == 1.0


def test_midpoint_decoder_examples():
    s = MinMaxSummary((0.0,), (1.0,), 0.0, 1.0)
    g = midpoint_decoder(s, (101,))
    assert np.all(g.values == 0.5)
    s = MinMaxSummary((0.0,), (0.0,), 0.3, 0.3)
    assert np.all(midpoint_decoder(s, (11,)).values == 0.3)


def test_midpoint_bound_on_random_functions_sharing_a_summary():
    rng = np.random.default_rng(0)
    s = MinMaxSummary((0.25,), (0.75,), 0.1, 0.7)
    for _ in range(1000):
        f = random_with_summary(s, (101,), rng)
        assert minmax_summary(f) == s
        assert sup_norm(f, midpoint_decoder(s, (101,))) <= s.spread / 2 + 1e-15


@given(st.lists(st.floats(0, 1), min_size=2, max_size=60))
def test_proposition_bound_any_function(vals):
    assert proposition_bound_holds(GridFunction(vals))


def test_exact_decoder_examples():
    tag = ClassTag.parse("affine(d=1)")
    assert affine_coefficients(MinMaxSummary((0.0,), (1.0,), 0.2, 0.8)) == pytest.approx((0.6, 0.2))
    assert affine_coefficients(MinMaxSummary((1.0,), (0.0,), 0.2, 0.8)) == pytest.approx((-0.6, 0.8))
    g = exact_decoders(MinMaxSummary((0.0,), (0.0,), 0.4, 0.4), ClassTag("constant"), (11,))
    assert np.all(g.values == 0.4)
    with pytest.raises(GridError):
        exact_decoders(MinMaxSummary((0.5,), (0.5,), 0.2, 0.8), tag)
    with pytest.raises(GridError):
        exact_decoders(MinMaxSummary((0.0,), (1.0,), 0.2, 0.8), ClassTag("convex"))


def test_exact_recovery_500_members():
    for cls in ("affine(d=1)", "constant"):
        tag = ClassTag.parse(cls)
        for seed in range(500):
            f = random_member(tag, seed)
            assert sup_norm(f, exact_decoders(minmax_summary(f), tag, f.shape)) <= 1e-9


def test_membership_examples():
    x = _f(lambda x: x)
    for cls in ("monotone", "convex", "lipschitz(1)", "affine(d=1)"):
        assert membership_check(x, ClassTag.parse(cls))
    v = _f(lambda x: np.abs(2 * x - 1))
    m = membership_check(v, ClassTag("monotone"))
    assert not m and m.witness is not None
    lo, hi = sorted(np.ravel(m.witness))[:1] + sorted(np.ravel(m.witness))[-1:]
    assert lo <= 50 <= hi
    assert membership_check(v, ClassTag("convex"))
    m = membership_check(_f(lambda x: 4 * x * (1 - x)), ClassTag("convex"))
    assert not m and m.witness is not None
    assert not membership_check(_f(lambda x: x), ClassTag.parse("lipschitz(0.5)"))
    assert not membership_check(_f(lambda x: x * x), ClassTag.parse("affine(d=1)"))


def test_class_tag_parse_and_validation():
    assert str(ClassTag.parse("lipschitz(0.5)")) == "lipschitz(0.5)"
    assert ClassTag.parse("affine(d=2)").dim == 2
    with pytest.raises(GridError):
        ClassTag("lipschitz", L=0)
    with pytest.raises(GridError):
        ClassTag.parse("smooth")


def _summary_fn(fn, tag):
    return construct_pair(_f(fn), ClassTag.parse(tag))


def test_monotone_pair_example():
    p = _summary_fn(lambda x: x, "monotone")
    x = p.f1.axis()
    assert p.summary == MinMaxSummary((0.0,), (1.0,), 0.0, 1.0)
    assert np.allclose(p.f1.values, np.clip(2 * x - 1, 0, 1), atol=1e-5)
    assert np.allclose(p.f2.values, np.clip(2 * x, 0, 1), atol=1e-5)
    assert p.gap == pytest.approx(1.0, abs=1e-5)
    i = int(np.argmax(np.abs(p.f1.values - p.f2.values)))
    assert x[i] == pytest.approx(0.5, abs=0.01)


def test_convex_pair_example():
    p = _summary_fn(lambda x: x, "convex")
    x = p.f1.axis()
    assert np.allclose(p.f1.values, x, atol=1e-5)
    assert np.allclose(p.f2.values, np.clip(2 * x - 1, 0, 1), atol=1e-5)
    assert p.gap == pytest.approx(0.5, abs=1e-5)
    assert p.gap / 2 == pytest.approx(p.summary.spread / 4, abs=1e-5)


def test_affine2_pair_example():
    n = 101
    f = GridFunction.from_callable(lambda a, b: 0.5 + 0.3 * a - 0.3 * b, n, 2)
    s = minmax_summary(f)
    assert s.x_min == (0.0, 1.0) and s.x_max == (1.0, 0.0)
    assert (s.f_min, s.f_max) == pytest.approx((0.2, 0.8))
    p = construct_pair(f, ClassTag.parse("affine(d=2)"))
    x1, x2 = np.meshgrid(X101, X101, indexing="ij")
    assert np.allclose(p.f1.values, 0.6 * x1 + 0.2, atol=1e-5)
    assert np.allclose(p.f2.values, -0.6 * x2 + 0.8, atol=1e-5)
    assert abs(p.f1.values[-1, -1] - p.f2.values[-1, -1]) == pytest.approx(0.6, abs=1e-5)
    # other corner configurations are recoverable
    g = GridFunction.from_callable(lambda a, b: 0.2 + 0.3 * a + 0.3 * b, n, 2)
    q = construct_pair(g, ClassTag.parse("affine(d=2)"))
    assert q.exact and q.gap == 0


def test_pair_rejections():
    with pytest.raises(PairError):
        construct_pair(_f(lambda x: x), ClassTag.parse("affine(d=1)"))
    with pytest.raises(PairError):
        construct_pair(_f(lambda x: x), ClassTag("constant"))
    with pytest.raises(PairError):
        construct_pair(_f(lambda x: 4 * x * (1 - x)), ClassTag("convex"))


def test_constant_seed_gives_zero_gap_pair():
    p = _summary_fn(lambda x: np.full_like(x, 0.3), "monotone")
    assert p.gap == 0
    assert verify_classify_bound(p, midpoint_decoder).passed


def test_approx_bound_examples():
    p = _summary_fn(lambda x: x, "monotone")
    r = verify_approx_bound(p, midpoint_decoder)
    assert r.passed and r.worst_error >= 0.5 - 1e-5
    r = verify_approx_bound(p, member_decoder(p.f1))
    assert r.passed and r.worst_error == pytest.approx(p.gap)


@settings(max_examples=100)
@given(st.integers(0, 10_000), st.integers(0, 100))
def test_approx_bound_random_decoders(seed, salt):
    tag = ClassTag.parse(["monotone", "convex", "blackbox", "lipschitz(1)"][seed % 4])
    p = construct_pair(random_member(tag, seed), tag)
    assert verify_approx_bound(p, random_decoder(salt)).passed


def test_classify_examples():
    p = _summary_fn(lambda x: x, "monotone")
    w = classify_witness(p)
    m = p.summary.midpoint
    assert (p.f1.values[w] > m) != (p.f2.values[w] > m)
    assert p.f1.axis()[w] == pytest.approx(0.5, abs=0.01)
    assert verify_classify_bound(p, midpoint_decoder).passed
    q = _summary_fn(lambda x: 0.1 + 0.6 * x, "convex")
    w = classify_witness(q)
    x_min = q.summary.x_min[0]
    assert q.f1.axis()[w] == pytest.approx(x_min / 4 + 0.75, abs=1e-3)
    assert q.f1.values[w] > q.summary.midpoint


def test_verify_class_small_sweep_and_csv():
    reps = verify_class("convex", range(20)) + verify_class("affine(d=1)", range(5))
    assert all(r.passed for r in reps)
    text = reports_to_csv(reps)
    assert text.splitlines()[0] == "class,seed,gap,bound,worst_error,pass"
    assert len(text.splitlines()) == 26


def test_demo_table():
    rows = demo_table(seeds=3)
    d = {r[0]: r[1:] for r in rows}
    assert d["constant"] == ("Yes", "Yes", "Yes") and d["affine(d=1)"] == ("Yes", "Yes", "Yes")
    assert d["monotone"] == ("No", "No", "No") and d["convex"][0] == "No"
    assert "closer to min or max?" in format_table(rows)
