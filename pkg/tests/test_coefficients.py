import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from quasiflow.coefficients import (CoefficientModel, EvaluationError, H_function, NonlinearityModel,
                                    check_structural_hypotheses, check_uniqueness_conditions,
                                    coefficient, extend_f_hat, nonlinearity)


def test_quadratic_a_cubic_f_all_flags_hold():
    rep = check_structural_hypotheses(coefficient("quadratic"), nonlinearity("power:3", n=3, p=2), 2.0)
    assert rep.ok and rep.witnesses == []


def test_zero_f_fails_positivity_at_one():
    rep = check_structural_hypotheses(coefficient("const"), nonlinearity("zero", n=2, p=2), 1.0, 17)
    assert rep.ellipticity_ok and rep.sign_condition_ok
    assert not rep.positivity_ok
    cond, s, _ = rep.witness("positivity")
    assert cond == "positivity" and 0 < s <= 1.0
    # a sample set containing only s = 1 in (0, 1] would report exactly s = 1
    rep1 = check_structural_hypotheses(coefficient("const"), nonlinearity("zero", n=2, p=2), 1.0, 16)
    assert rep1.witness("positivity")[1] <= 1.0


def test_linear_decay_breaks_ellipticity_near_two():
    rep = check_structural_hypotheses(coefficient("linear_decay"), nonlinearity("power:2"), 2.0)
    assert not rep.ellipticity_ok
    # a = 1 - s drops below eta = 0.5 at s = 0.5 and reaches -1 at s = 2
    s = rep.witness("ellipticity")[1]
    assert 0.5 < s <= 2.0
    assert not rep.sign_condition_ok


def test_false_flag_always_has_witness():
    rep = check_structural_hypotheses(coefficient("linear_decay"), nonlinearity("zero"), 2.0)
    for flag, cond in [("ellipticity_ok", "ellipticity"), ("positivity_ok", "positivity")]:
        assert not getattr(rep, flag)
        assert rep.witness(cond) is not None


def test_sample_preconditions():
    cm, nm = coefficient("const"), nonlinearity("zero")
    with pytest.raises(ValueError):
        check_structural_hypotheses(cm, nm, 0.0)
    with pytest.raises(ValueError):
        check_structural_hypotheses(cm, nm, 1.0, samples=15)


def test_non_finite_value_names_sample():
    bad = CoefficientModel(a=lambda s: 1 / (1 - np.asarray(s)), a1=lambda s: 0 * s, a2=lambda s: 0 * s)
    with pytest.raises(EvaluationError) as err:
        check_structural_hypotheses(bad, nonlinearity("zero"), 2.0, samples=21)
    assert err.value.s == pytest.approx(1.0)


def test_sigma_window_enforced():
    rep = check_structural_hypotheses(coefficient("const"), nonlinearity("power:6", n=3, p=2), 2.0)
    assert not rep.growth_ok and rep.witness("sigma_window")


def test_pstar():
    assert nonlinearity("zero", n=3, p=2).pstar == 6
    assert math.isinf(nonlinearity("zero", n=2, p=2).pstar)
    assert nonlinearity("zero", n=2, p=1.5).pstar == pytest.approx(6.0)


@pytest.mark.parametrize("q, ok", [(3, True), (6, False)])
def test_uniqueness_power_cases(q, ok):
    rep = check_uniqueness_conditions(nonlinearity(f"power:{q}", n=3, p=2), 4.0)
    assert rep.superlinearity_ok
    assert rep.H_monotone_ok is ok
    # H is linear for powers: slope (n - p) - n p/(q + 1)
    slope = 1 - 6 / (q + 1)
    np.testing.assert_allclose(rep.H_values, slope * rep.H_samples, atol=1e-12)


@pytest.mark.parametrize("n, p", [(3, 2.0), (2, 1.5), (3, 1.2)])
def test_equality_case_fails_superlinearity(n, p):
    rep = check_uniqueness_conditions(nonlinearity(f"power:{p - 1}", n=n, p=p), 2.0)
    assert not rep.superlinearity_ok


def test_H_monotone_iff_below_critical_exponent():
    # p* - 1 = 5 for n = 3, p = 2
    for q in range(1, 9):
        rep = check_uniqueness_conditions(nonlinearity(f"power:{q}", n=3, p=2), 3.0)
        assert rep.H_monotone_ok is (q <= 5), q


def test_H_division_by_zero_and_p_below_n():
    with pytest.raises(ZeroDivisionError):
        H_function(nonlinearity("zero", n=3, p=2), np.linspace(0, 1, 5))
    with pytest.raises(ValueError):
        check_uniqueness_conditions(nonlinearity("power:2", n=2, p=2), 1.0)


def test_f_hat_examples():
    fh = extend_f_hat(nonlinearity("power:2"))
    assert fh.f(np.array(-1.0)) == 0.0
    assert fh.f(np.array(2.0)) == 4.0
    assert fh.bigF(np.array(-3.0)) == 0.0


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20))
def test_f_hat_idempotent_and_unchanged_on_positive_axis(xs):
    s = np.array(xs)
    nm = nonlinearity("power:3")
    once, twice = extend_f_hat(nm), extend_f_hat(extend_f_hat(nm))
    np.testing.assert_array_equal(once.f(s), twice.f(s))
    np.testing.assert_array_equal(once.bigF(s), twice.bigF(s))
    pos = s >= 0
    np.testing.assert_array_equal(once.bigF(s)[pos], nm.bigF(s)[pos])
    assert np.all(once.f(s)[~pos] == 0)


@given(st.floats(0.05, 5.0), st.floats(0.0, 3.0))
def test_structural_failure_persists_for_larger_s_max(s_star, extra):
    cm, nm = coefficient("linear_decay"), nonlinearity("zero")
    rep = check_structural_hypotheses(cm, nm, s_star, samples=64)
    rep2 = check_structural_hypotheses(cm, nm, s_star + extra, samples=64)
    for flag in ("ellipticity_ok", "sign_condition_ok", "positivity_ok"):
        if not getattr(rep, flag):
            assert not getattr(rep2, flag)


@pytest.mark.parametrize("name", ["const", "quadratic", "linear_decay"])
def test_derivatives_match_finite_differences(name):
    cm = coefficient(name)
    s = np.linspace(0.1, 2.0, 40)
    h = 1e-4
    d1 = (cm.a(s + h) - cm.a(s - h)) / (2 * h)
    d2 = (cm.a1(s + h) - cm.a1(s - h)) / (2 * h)
    np.testing.assert_allclose(cm.a1(s), d1, rtol=1e-5, atol=1e-8)
    np.testing.assert_allclose(cm.a2(s), d2, rtol=1e-5, atol=1e-8)


@pytest.mark.parametrize("model", ["zero", "constant:1.5", "power:2", "power:3", "power:0.5", "critical"])
def test_antiderivative_matches_f(model):
    nm = nonlinearity(model, n=3, p=2)
    s = np.linspace(0.2, 2.0, 30)
    h = 1e-5
    dF = (nm.bigF(s + h) - nm.bigF(s - h)) / (2 * h)
    np.testing.assert_allclose(dF, nm.f(s), rtol=1e-6, atol=1e-6)
    assert nm.bigF(np.array(0.0)) == 0


@pytest.mark.parametrize("model", ["power:2", "power:3", "power:0.5", "constant:2"])
def test_growth_bound_holds_on_samples(model):
    nm = nonlinearity(model, n=3, p=2)
    s = np.linspace(0, 10, 200)
    assert np.all(np.abs(nm.f(s)) <= nm.c1 + nm.c2 * s ** nm.sigma + 1e-12)


def test_catalogue_errors():
    with pytest.raises(KeyError):
        nonlinearity("exp")
    with pytest.raises(KeyError):
        coefficient("cubic")
    with pytest.raises(ValueError):
        nonlinearity("critical", n=2, p=2)
    with pytest.raises(ValueError):
        NonlinearityModel(f=None, f1=None, bigF=None, sigma=1, c1=0, c2=0, n=2, p=1.0)
    with pytest.raises(ValueError):
        CoefficientModel(a=None, a1=None, a2=None, eta=0)
