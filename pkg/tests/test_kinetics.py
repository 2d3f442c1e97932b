import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twoscale import config as cfg
from twoscale.errors import NegativeRate
from twoscale.kinetics import (BoundsA4, HenryLaw, RateLaw, Status, eval_eta, eval_Q, eval_R,
                               gypsum_step, henry_exchange, validate_assumptions)

linear = RateLaw()
saturating = RateLaw(r_kind="saturating", c_r=1.0, k_half=1.0)


def test_R_examples():
    assert eval_R(linear, -0.5) == 0.0
    assert eval_R(RateLaw(c_r=2.0), 0.3) == pytest.approx(0.6)
    alpha = np.linspace(0.0, 100.0, 20001)
    r = eval_R(saturating, alpha)
    assert np.all(np.diff(r) > 0) and r[-1] < 1.0 and r[-1] > 0.99
    assert np.all(r <= 1.0 + alpha)


def test_Q_examples():
    assert eval_Q(RateLaw(beta_max=1.0), 1.0) == 0.0
    assert eval_Q(RateLaw(beta_max=1.0), 0.0) == 1.0
    assert eval_Q(RateLaw(beta_max=2.0), 0.5) == pytest.approx(0.75)
    assert eval_Q(RateLaw(beta_max=2.0), 5.0) == 0.0


def test_eta_examples():
    law = RateLaw(k3=2.0)
    assert eval_eta(law, -1.0, 0.3) == 0.0
    assert eval_eta(law, 1.0, law.beta_max) == 0.0
    assert eval_eta(law, 0.5, 0.5) == pytest.approx(0.5)
    per_q = RateLaw(k3=np.array([1.0, 3.0]))
    assert eval_eta(per_q, 1.0, 0.0, q=1) == pytest.approx(3.0)


@pytest.mark.parametrize("law", [linear, saturating, RateLaw(c_r=3.0, beta_max=0.5)])
def test_lipschitz_witnesses(law):
    a = np.linspace(0.0, 4.0, 4001)
    assert np.max(np.abs(np.diff(eval_R(law, a))) / np.diff(a)) <= law.lipschitz_R * (1 + 1e-9)
    b = np.linspace(0.0, law.beta_max, 4001)
    assert np.max(np.abs(np.diff(eval_Q(law, b))) / np.diff(b)) <= law.lipschitz_Q * (1 + 1e-9)


def test_invalid_laws():
    with pytest.raises(ValueError):
        RateLaw(beta_max=0.0)
    with pytest.raises(NegativeRate):
        RateLaw(k3=-1.0)
    with pytest.raises(NegativeRate):
        HenryLaw(a=-0.1)


def test_henry_examples():
    assert henry_exchange(HenryLaw(1.3, 1.3), 0.7, 0.7) == pytest.approx(0.0)
    assert henry_exchange(HenryLaw(1.0, 0.0), 7.0, 2.0) == pytest.approx(2.0)
    a, b = 0.5, 2.0
    assert henry_exchange(HenryLaw(a, b), 1.0, b / a) == pytest.approx(0.0)


@settings(max_examples=200, deadline=None)
@given(u1=st.floats(-2, 5), u5=st.floats(0, 1.5), dt=st.floats(1e-4, 10.0),
       c_r=st.floats(0, 4), k3=st.floats(0, 4), beta=st.floats(0.1, 2.0))
def test_gypsum_step_monotone_and_capped(u1, u5, dt, c_r, k3, beta):
    law = RateLaw(c_r=c_r, k3=k3, beta_max=beta)
    v = gypsum_step(law, u1, np.array([u5]), dt)[0]
    assert v >= u5
    assert v <= max(u5, beta)
    # backward Euler residual
    if u5 < beta:
        assert abs(v - u5 - dt * float(eval_eta(law, u1, v))) <= 1e-10 * max(1.0, beta)


@settings(max_examples=100, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10))
def test_eta_nonnegative(u1, u5):
    assert eval_eta(saturating, u1, u5) >= 0.0


def test_bounds_equalities():
    ok = BoundsA4(1, 2, 4, 1, 1, a_sup=0.5, b_sup=1.0, k1_sup=1.0, k2_sup=0.5, k1_inf=1.0)
    assert ok.violations() == []
    assert ok.ceiling(4, 2.0) == pytest.approx(3.0)
    bad = BoundsA4(1, 2, 4, 1, 1, a_sup=0.6, b_sup=1.0, k1_sup=1.0, k2_sup=0.5, k1_inf=1.0)
    assert len(bad.violations()) == 1


def test_default_config_passes(default_config):
    report = validate_assumptions(default_config)
    assert report.ok and not report.warnings()
    assert "OK" in report.render()


def test_negative_initial_u1(default_config):
    c = default_config.with_values("macro", u10=-0.1)
    report = validate_assumptions(c)
    assert [code for code, _, _ in report.failures()] == ["A3"]


def test_a4_strictness(default_config):
    c = default_config.with_values("kinetics", a=0.7)
    lax = validate_assumptions(c)
    assert lax.ok and [code for code, _, _ in lax.warnings()] == ["A4"]
    strict = validate_assumptions(c, strict_a4=True)
    assert not strict.ok and strict.failures()[0][0] == "A4"
    assert strict.failures()[0][1] is Status.FAIL


def test_geometry_and_tensor_failures(default_config):
    bad = validate_assumptions(default_config.with_values("geometry", r_solid=-0.1))
    assert "geometry" in [c for c, _, _ in bad.failures()]
    nonspd = validate_assumptions(default_config.with_values("diffusion", d1=[[1.0, 2.0], [2.0, 1.0]]))
    assert "A1" in [c for c, _, _ in nonspd.failures()]
    neg = validate_assumptions(default_config.with_values("kinetics", b=-1.0))
    assert "A5" in [c for c, _, _ in neg.failures()]


def test_dirichlet_series_checks(default_config):
    c = default_config.with_values("macro", u3_dirichlet=[[0.0, 1.0], [0.0, 2.0]])
    assert "A6" in [code for code, _, _ in validate_assumptions(c).failures()]
    times, values = cfg.dirichlet_samples(default_config)
    assert list(values) == [1.0]
