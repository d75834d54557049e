import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from findworld.treatment import TreatmentRule, Worthiness, apply, check_monotone


def test_apply_examples():
    assert apply(TreatmentRule.geometric(2), 0.3) == pytest.approx(0.6)
    assert apply(TreatmentRule.arithmetic(5), 0.123) == 5
    # threshold rule at the top Table-3 real-world prediction 0.83
    assert apply(TreatmentRule.step([0.5], [0, 1]), 0.83) == 1
    assert apply(TreatmentRule.step([0.5], [0, 1]), 0.5) == 1
    assert apply(TreatmentRule.step([0.5], [0, 1]), 0.49) == 0
    pl = TreatmentRule.piecewise_linear([(0, 0), (1, 10)])
    assert apply(pl, 0.25) == pytest.approx(2.5)
    assert apply(pl, 2.0) == 10


def test_monotone_examples():
    c = check_monotone(TreatmentRule.geometric(2))
    assert c.ok and c.strict
    c = check_monotone(TreatmentRule.step([0.5], [1, 0]))
    assert not c.ok and "decreasing" in c.violation
    c = check_monotone(TreatmentRule.step([0.3, 0.6], [0, 0, 1]))
    assert c.ok and not c.strict
    assert not check_monotone(TreatmentRule.geometric(-1)).ok
    assert not check_monotone(TreatmentRule.piecewise_linear([(0, 1), (1, 0)])).ok


def test_rule_shape_errors():
    with pytest.raises(ValueError, match="strictly ascending"):
        TreatmentRule.step([0.5, 0.5], [0, 1, 2])
    with pytest.raises(ValueError, match="len\\(levels\\)"):
        TreatmentRule.step([0.5], [0, 1, 2])
    with pytest.raises(ValueError, match="non-finite slope"):
        TreatmentRule.piecewise_linear([(0.0, 0.0), (5e-324, 1.0)])
    with pytest.raises(ValueError, match="unknown treatment rule kind"):
        TreatmentRule.from_dict({"kind": "sigmoid"})


steps = st.lists(st.floats(-1, 2), min_size=1, max_size=5, unique=True).flatmap(
    lambda th: st.tuples(st.just(sorted(th)), st.lists(st.floats(-5, 5), min_size=len(th) + 1, max_size=len(th) + 1))
)


@st.composite
def rules(draw):
    kind = draw(st.sampled_from(["geometric", "arithmetic", "step", "piecewise_linear"]))
    if kind == "geometric":
        return TreatmentRule.geometric(draw(st.floats(-3, 3)))
    if kind == "arithmetic":
        return TreatmentRule.arithmetic(draw(st.floats(-3, 3)))
    if kind == "step":
        th, lv = draw(steps)
        if draw(st.booleans()):
            lv = sorted(lv)
        return TreatmentRule.step(th, lv)
    xs = sorted(x / 1000 for x in draw(st.lists(st.integers(-1000, 2000), min_size=2, max_size=5, unique=True)))
    ys = draw(st.lists(st.floats(-5, 5), min_size=len(xs), max_size=len(xs)))
    if draw(st.booleans()):
        ys = sorted(ys)
    return TreatmentRule.piecewise_linear(list(zip(xs, ys)))


@settings(max_examples=300, deadline=None)
@given(rule=rules(), ws=st.lists(st.floats(-3, 4), min_size=2, max_size=30))
def test_monotone_rules_are_nondecreasing(rule, ws):
    check = check_monotone(rule)
    assume(check.ok)
    w = np.sort(np.array(ws))
    t = apply(rule, w)
    assert np.all(np.diff(t) >= 0)


@settings(max_examples=300, deadline=None)
@given(k=st.floats(0.01, 100), ws=st.lists(st.integers(-10**5, 10**5), min_size=2, max_size=40, unique=True))
def test_strict_rules_separate_and_preserve_argmax(k, ws):
    rule = TreatmentRule.geometric(k)
    assert check_monotone(rule).strict
    w = np.array(ws) / 100.0
    t = apply(rule, w)
    assert len(set(t.tolist())) == len(set(w.tolist()))
    assert np.array_equal(np.argsort(t, kind="stable"), np.argsort(w, kind="stable"))
    assert np.argmax(t) == np.argmax(w)


@settings(max_examples=200, deadline=None)
@given(xs=st.lists(st.integers(-1000, 2000), min_size=2, max_size=6, unique=True),
       ws=st.lists(st.integers(-1000, 2000), min_size=2, max_size=30, unique=True))
def test_strict_piecewise_argmax(xs, ws):
    # grid of 1e-3 keeps distinct worthiness values distinguishable after interpolation
    xs = sorted(x / 1000 for x in xs)
    ws = [w / 1000 for w in ws]
    ys = list(range(len(xs)))
    rule = TreatmentRule.piecewise_linear(list(zip(xs, ys)))
    assert check_monotone(rule).strict
    w = np.clip(np.array(ws), xs[0], xs[-1])
    t = apply(rule, w)
    assert np.array_equal(np.argsort(t, kind="stable"), np.argsort(w, kind="stable"))


def test_worthiness_combiners():
    z = np.array([0.2, 0.8])
    assert np.array_equal(Worthiness().combine(z), z)
    w = Worthiness("weighted", observable="v", alpha=0.25)
    np.testing.assert_allclose(w.combine(z, [1.0, 0.0]), [0.25 + 0.15, 0.6])
    c = Worthiness("custom", observable="v", table={"a": (2.0, 0.0), "b": (1.0, 0.5)})
    np.testing.assert_allclose(c.combine(z, ["a", "b"]), [0.4, 1.3])
    with pytest.raises(ValueError, match="no entry"):
        c.combine(z, ["a", "zz"])
    with pytest.raises(ValueError, match="alpha"):
        Worthiness("weighted", observable="v", alpha=2.0)


def test_rule_roundtrip():
    for rule in (TreatmentRule.geometric(2), TreatmentRule.step([0.5], [0, 1]),
                 TreatmentRule.piecewise_linear([(0, 0), (1, 1)])):
        assert TreatmentRule.from_dict(rule.to_dict()) == rule
