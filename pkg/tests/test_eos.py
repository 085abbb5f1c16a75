import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from charcone.eos import (
    AffineFactor,
    ConstFactor,
    ExpFactor,
    GeneralEOS,
    Polytropic,
    RiemannState,
    closure_residual,
    entropy_factor_from_spec,
    eos_from_spec,
    eval_thermo,
    riemann_from_state,
    solve_w_given_wbar,
    state_from_riemann,
)
from charcone.errors import NonMonotone, NonPositiveDensity

from conftest import slope

gas2 = Polytropic(2.0)


def test_thermo_gamma2_examples():
    th = eval_thermo(gas2, 4.0, 0.0)
    assert th.c == pytest.approx(2.0)
    assert th.phi0 == pytest.approx(4.0)
    assert th.psi0 == 0.0
    th = eval_thermo(gas2, 1.0, 0.0)
    assert (th.c, th.phi0) == pytest.approx((1.0, 2.0))


def test_psi0_vanishes_without_entropy_dependence():
    rho = np.linspace(0.5, 3.0, 7)
    for eos in (Polytropic(1.4), Polytropic(5 / 3, ConstFactor(2.0))):
        assert np.all(eval_thermo(eos, rho, np.zeros_like(rho)).psi0 == 0.0)


def test_nonpositive_density_rejected():
    with pytest.raises(NonPositiveDensity):
        eval_thermo(gas2, -1.0, 0.0)


def test_riemann_examples():
    r = riemann_from_state(gas2, 1.0, 0.5, None, 0.0)
    assert (r.w, r.wbar) == pytest.approx((1.25, 0.75))
    r = riemann_from_state(gas2, 1.0, 0.0, None, 0.0)
    assert r.w == r.wbar == pytest.approx(1.0)


def test_state_from_riemann_examples():
    rho, vn, _, _ = state_from_riemann(gas2, RiemannState(1.0, 1.0, None, 0.0))
    assert (rho, vn) == pytest.approx((1.0, 0.0))
    rho, vn, _, _ = state_from_riemann(gas2, RiemannState(4.0, 2.0, None, 0.0))
    assert (rho, vn) == pytest.approx((9.0, 2.0))


def test_closure_examples():
    assert solve_w_given_wbar(gas2, 1.0, 1.0, 0.0) == pytest.approx(1.0)
    assert solve_w_given_wbar(gas2, 2.0, 1.0, 0.0) == pytest.approx(4.0)


def test_closure_degenerate_for_gamma3():
    with pytest.raises(NonMonotone):
        solve_w_given_wbar(Polytropic(3.0), 1.0, 1.0, 0.0)


EOSES = [Polytropic(2.0), Polytropic(1.4, ExpFactor()), Polytropic(5 / 3, AffineFactor(1.0, 0.3))]


@settings(max_examples=60, deadline=None)
@given(
    k=st.integers(0, len(EOSES) - 1),
    rho=st.floats(0.1, 10.0),
    vn=st.floats(-1.0, 1.0),
    s=st.floats(-0.5, 0.5),
)
def test_riemann_round_trip(k, rho, vn, s):
    eos = EOSES[k]
    r = riemann_from_state(eos, rho, vn, None, s)
    rho2, vn2, _, _ = state_from_riemann(eos, r)
    assert rho2 == pytest.approx(rho, rel=1e-11)
    assert vn2 == pytest.approx(vn, abs=1e-11)
    assert r.w + r.wbar == pytest.approx(eval_thermo(eos, rho, s).phi0, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(k=st.integers(0, len(EOSES) - 1), rho=st.floats(0.2, 5.0), s=st.floats(-0.5, 0.5))
def test_polytropic_speed_from_invariants(k, rho, s):
    eos = EOSES[k]
    r = riemann_from_state(eos, rho, 0.3, None, s)
    c = eval_thermo(eos, rho, s).c
    assert c == pytest.approx(0.5 * (eos.gamma - 1) * (r.w + r.wbar), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(k=st.integers(0, len(EOSES) - 1), rho=st.floats(0.2, 5.0), vn=st.floats(-0.3, 0.3), s=st.floats(-0.5, 0.5))
def test_closure_reproduces_speed(k, rho, vn, s):
    eos = EOSES[k]
    c = eval_thermo(eos, rho, s).c
    speed = -vn + c
    wbar = riemann_from_state(eos, rho, vn, None, s).wbar
    w = solve_w_given_wbar(eos, wbar, speed, s)
    assert abs(closure_residual(eos, w, wbar, speed, s)) <= 1e-10 * max(1.0, abs(speed))


def test_phi0_derivative_is_c_over_rho():
    eos = Polytropic(1.4, ExpFactor())
    rho, s = 1.3, 0.2
    exact = eval_thermo(eos, rho, s).c / rho
    hs = [0.1, 0.05, 0.025, 0.0125]
    errs = [abs((eos.phi0(rho + h, s) - eos.phi0(rho - h, s)) / (2 * h) - exact) for h in hs]
    assert np.all(np.abs(slope(errs) - 2) <= 0.2)


def _general_from(poly):
    th = poly.thermo
    return GeneralEOS(
        pressure=lambda r, s: th(r, s).p,
        sound_speed=lambda r, s: poly.sound_speed(r, s),
        p_s=lambda r, s: th(r, s).p_s,
        p_ss=lambda r, s: th(r, s).p_ss,
        p_srho=lambda r, s: th(r, s).p_srho,
        c_rho=lambda r, s: th(r, s).c_rho,
        c_s=lambda r, s: th(r, s).c_s,
    )


def test_general_eos_matches_polytropic():
    poly = Polytropic(1.4, ExpFactor())
    gen = _general_from(poly)
    rho, s = np.array([0.7, 1.0, 2.5]), np.full(3, 0.1)
    a, b = poly.thermo(rho, s), gen.thermo(rho, s)
    assert np.allclose(a.c, b.c, rtol=1e-13)
    # same potential up to the constant fixed by the reference density
    assert np.allclose(a.phi0 - b.phi0, poly.phi0(1.0, 0.1), rtol=1e-10)


def test_general_eos_inversion_and_closure():
    gen = _general_from(Polytropic(2.0))
    r = riemann_from_state(gen, 2.0, 0.2, None, 0.0)
    rho, vn, _, _ = state_from_riemann(gen, r)
    assert (rho, vn) == pytest.approx((2.0, 0.2), rel=1e-11)
    speed = -0.2 + gen.sound_speed(2.0, 0.0)
    w = solve_w_given_wbar(gen, r.wbar, speed, 0.0)
    assert w == pytest.approx(r.w, rel=1e-10)


def test_eos_from_config():
    eos = eos_from_spec({"kind": "polytropic", "gamma": 2, "entropy_factor": {"const": 1}})
    assert isinstance(eos, Polytropic) and eos.gamma == 2.0
    assert isinstance(entropy_factor_from_spec("exp"), ExpFactor)
    assert isinstance(entropy_factor_from_spec({"affine": [1, 2]}), AffineFactor)
    with pytest.raises(ValueError):
        entropy_factor_from_spec({"cubic": 1})
