import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from charcone.construction import (
    BackgroundCache,
    ConeProblem,
    ConstField,
    CornerData,
    FourierField,
    FreeData,
    HarmonicField,
    LevelHistory,
    PolynomialField,
    field_from_spec,
    generator_field,
    integrate_wbar,
    matched_corner,
    validate_corner,
)
from charcone.eos import Polytropic, closure_residual
from charcone.errors import CornerIncompatible, StepRejected
from charcone.geometry import ExpandingSphere, PolynomialInTime, frame_at
from charcone.oracles import constant_state

gas = Polytropic(2.0)


def sphere_problem(rate=1.0, v_normal=0.0, s_corner=0.0, free=None, **kw):
    chart = ExpandingSphere(PolynomialInTime((1.0, rate)))
    corner = CornerData(rho=1.0, s=s_corner, v_normal=v_normal)
    kw.setdefault("shape", (8, 8))
    return ConeProblem(gas, chart, free or FreeData(ConstField(0.0)), corner, **kw)


# ---------------------------------------------------------------------------
# free data
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "fld",
    [
        HarmonicField(3, 2, 0.4, rate=0.7),
        FourierField(2.0, 1.0, 0.3, phase=0.2, rate=-0.5),
        PolynomialField(((1, 2, 0, 0.5), (2, 0, 1, -1.0), (0, 1, 3, 0.25))),
        field_from_spec([{"const": 1.0}, {"fourier": {"k1": 1, "amplitude": 0.1}}]),
    ],
)
def test_free_field_partials_match_differences(fld):
    rng = np.random.default_rng(3)
    t, a, b = rng.uniform(0.1, 0.9, 3)
    b = 0.5 + b  # keep away from the poles for the harmonic case
    h = 1e-5
    _, dt, d1, d2 = fld.evaluate(t, a, b)
    for d, (dt_, da, db) in zip((dt, d1, d2), ((h, 0, 0), (0, h, 0), (0, 0, h))):
        fd = (fld.evaluate(t + dt_, a + da, b + db)[0] - fld.evaluate(t - dt_, a - da, b - db)[0]) / (2 * h)
        assert np.allclose(d, fd, atol=1e-8)


def test_field_spec_rejects_unknown_kind():
    with pytest.raises(ValueError):
        field_from_spec({"bessel": {}})


# ---------------------------------------------------------------------------
# corner gate
# ---------------------------------------------------------------------------


def test_compatible_corner_passes():
    rep = validate_corner(sphere_problem())
    assert rep.passed and rep.null_residual <= 1e-14


def test_incompatible_corner_reports_residual_and_location():
    with pytest.raises(CornerIncompatible) as err:
        validate_corner(sphere_problem(rate=1.1))
    assert err.value.kind == "null"
    assert err.value.residual == pytest.approx(0.1, abs=1e-12)
    assert len(err.value.location) == 2


def test_free_data_mismatch_is_a_data_failure():
    p = sphere_problem(s_corner=1e-3, free=FreeData(ConstField(0.0)), corner_tol=1e-6)
    with pytest.raises(CornerIncompatible) as err:
        validate_corner(p)
    assert err.value.kind == "data"
    assert err.value.residual == pytest.approx(1e-3)


def test_matched_corner_is_characteristic():
    chart = ExpandingSphere(PolynomialInTime((1.0, 0.6)))
    free = FreeData(FourierField(1.0, 0.0, 0.05))
    corner = matched_corner(gas, chart, free, (12, 10), 1.0)
    rep = validate_corner(ConeProblem(gas, chart, free, corner, shape=(12, 10)))
    assert rep.null_residual <= 1e-14


# ---------------------------------------------------------------------------
# generator and background
# ---------------------------------------------------------------------------


def test_generator_vanishes_on_a_sphere_without_tangential_velocity():
    chart = ExpandingSphere(PolynomialInTime((1.0, 1.0)))
    th1, th2 = chart.grid(8, 8).mesh()
    fr = frame_at(chart, 0.3, th1, th2)
    lam, defect = generator_field(fr, np.zeros((3,) + th1.shape))
    assert np.all(np.abs(lam) <= 1e-14) and defect <= 1e-10


def test_generator_reproduces_tangential_velocity():
    p = sphere_problem(free=FreeData(ConstField(0.0), (FourierField(2.0, 0.0, 0.1), ConstField(0.0))))
    bg = BackgroundCache(p)(0.2)
    rebuilt = bg.frame.E_t + np.einsum("a...,ai...->i...", bg.lam, bg.frame.X) + bg.frame.speed * bg.frame.T
    assert np.allclose(rebuilt, bg.vs_cart, atol=1e-12)
    assert not bg.aligned


# ---------------------------------------------------------------------------
# order-zero transport
# ---------------------------------------------------------------------------


def test_constant_state_keeps_wbar_constant():
    run = integrate_wbar(constant_state(1.0).problem(shape=(8, 8), t_final=0.5, nt=50))
    f = run.fields
    assert run.status == "complete"
    assert np.max(np.abs(f["wbar"] - f["wbar"][0])) <= 1e-13
    assert np.max(np.abs(f["rho"] - 1.0)) <= 1e-13


def test_normal_velocity_is_riemann_difference():
    chart = ExpandingSphere(PolynomialInTime((1.0, 0.8)))
    free = FreeData(FourierField(1.0, 0.0, 0.05, rate=0.5), (FourierField(2.0, 0.0, 0.03), ConstField(0.0)))
    p = ConeProblem(gas, chart, free, matched_corner(gas, chart, free, (12, 10), 1.0), shape=(12, 10), t_final=0.3, nt=30)
    run = integrate_wbar(p)
    f = run.fields
    assert np.allclose(f["v_normal"], f["w"] - f["wbar"], atol=1e-14)
    rel = np.abs(closure_residual(gas, f["w"], f["wbar"], f["speed"], f["s"])) / np.maximum(1, np.abs(f["speed"]))
    assert rel.max() <= 1e-10


def test_sound_speed_collapse_truncates():
    chart = ExpandingSphere(PolynomialInTime((1.0, 1.0, 2.0)))
    p = ConeProblem(gas, chart, FreeData(ConstField(0.0)), CornerData(rho=1.0, v_normal=0.0), shape=(8, 8), nt=100)
    run = integrate_wbar(p)
    assert run.status == "truncated" and run.stop_label == "SoundSpeedFloor"
    assert run.times[-1] <= run.stop_time <= run.times[-1] + p.dt
    assert np.all(run.fields["c"] > 0)


def test_step_monitor_rejects_over_budget():
    chart = ExpandingSphere(PolynomialInTime((1.0, 1.0, 0.5)))
    p = ConeProblem(
        gas, chart, FreeData(ConstField(0.0)), CornerData(rho=1.0, v_normal=0.0), shape=(8, 8), t_final=0.2, nt=10,
        monitor_every=2, error_budget=1e-30,
    )
    with pytest.raises(StepRejected):
        integrate_wbar(p)


# ---------------------------------------------------------------------------
# level history
# ---------------------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 1.0), st.lists(st.floats(-2, 2), min_size=8, max_size=8))
def test_level_history_is_exact_on_polynomials(t, coef):
    times = np.linspace(0, 1, 21)
    p = np.polynomial.Polynomial(coef)
    hist = LevelHistory(times, {"q": p(times)[:, None]})
    for d in range(3):
        assert hist.at("q", t, d)[0] == pytest.approx(p.deriv(d)(t), abs=1e-7 * (1 + 10**d))
