import numpy as np
import pytest

from charcone.acoustics import (
    box_cartesian,
    box_nullframe,
    christoffels_at,
    christoffels_from_metric,
    compatibility_residual,
    metric_at,
    metric_derivatives,
    metric_from_sound_speed,
    null_determinant,
    null_generator,
    null_residual,
    null_second_form,
    sigma_second_form,
)
from charcone.eos import Polytropic
from charcone.errors import MissingDerivative, NonPositiveSoundSpeed
from charcone.oracles import ManufacturedGeometry

gas2 = Polytropic(2.0)  # c = sqrt(rho)
rng = np.random.default_rng(3)


def test_metric_examples():
    g, _ = metric_at(1.0, np.zeros(3), 0.0, gas2)
    assert np.allclose(g, np.diag([-1.0, 1, 1, 1]))
    g, _ = metric_at(4.0, np.array([1.0, 0, 0]), 0.0, gas2)
    assert g[0, 0] == pytest.approx(-3.0)
    assert g[0, 1] == pytest.approx(-1.0)


def test_metric_inverse_and_material_vector():
    c = rng.uniform(0.5, 2.0, 10)
    v = rng.normal(size=(3, 10))
    g, ginv = metric_from_sound_speed(c, v)
    assert np.allclose(np.einsum("ab...,bc...->ac...", g, ginv), np.eye(4)[:, :, None], atol=1e-12)
    B = np.concatenate([np.ones((1, 10)), v])
    gB = np.einsum("ab...,b...->a...", g, B)
    assert np.allclose(np.einsum("a...,a...->...", gB, B), -(c**2), atol=1e-12)
    assert np.allclose(gB[1:], 0.0, atol=1e-15)


def test_metric_needs_positive_speed():
    with pytest.raises(NonPositiveSoundSpeed):
        metric_from_sound_speed(0.0, np.zeros(3))


def test_christoffels_constant_state_vanish():
    gam = christoffels_at(1.0, np.array([0.3, 0, 0]), np.zeros(4), np.zeros((4, 3)))
    assert np.all(gam == 0.0)


def test_christoffel_shear_example():
    a, c, y = 0.7, 1.5, 0.4
    dv = np.zeros((4, 3))
    dv[2, 0] = a  # v^1 = a x^2
    gam = christoffels_at(c, np.array([a * y, 0, 0]), np.zeros(4), dv)
    assert gam[0, 1, 2] == pytest.approx(a / (2 * c**2))


def test_christoffel_structure_identities():
    geo = ManufacturedGeometry()
    d = geo.flow_derivatives((0.3, 0.9, -0.4, 0.6))
    gam = christoffels_at(d["c"], d["v"], d["dc2"], d["dv"])
    sym = (d["dv"][1:] + d["dv"][1:].T) / (2 * d["c"] ** 2)
    assert np.allclose(gam[0, 1:, 1:], sym, atol=1e-14)
    assert np.allclose(gam[1:, 1:, 1:], np.einsum("k,ij->kij", d["v"], sym), atol=1e-14)
    assert np.allclose(gam, np.swapaxes(gam, 1, 2), atol=1e-14)


def test_christoffels_agree_with_levi_civita():
    geo = ManufacturedGeometry()
    d = geo.flow_derivatives((0.2, 1.1, 0.3, -0.5))
    g, ginv = metric_from_sound_speed(d["c"], d["v"])
    dg = metric_derivatives(d["c"], d["v"], d["dc2"], d["dv"])
    assert np.allclose(christoffels_at(d["c"], d["v"], d["dc2"], d["dv"]), christoffels_from_metric(ginv, dg), atol=1e-12)


def test_missing_derivative():
    with pytest.raises(MissingDerivative):
        christoffels_at(1.0, np.zeros(3), None, np.zeros((4, 3)))
    dv = np.zeros((4, 3))
    dv[0, 0] = np.nan
    with pytest.raises(MissingDerivative):
        christoffels_at(1.0, np.zeros(3), np.zeros(4), dv)
    with pytest.raises(MissingDerivative):
        box_nullframe(1, 1, 0, 0, 0, 0, np.zeros(2), None, 0, 0, 0, np.zeros(2), 0)


def test_null_residual_examples():
    assert null_residual(1.0, 0.0, 0.0, 1.0, gas2) == pytest.approx(0.0)
    assert null_residual(4.0, -1.0, 0.0, 3.0, gas2) == pytest.approx(0.0)
    assert null_determinant(2.0, -1.0, 3.0) == pytest.approx(0.0)
    # (-v_T + c) - V = (1 + 2) - 2.5
    assert null_residual(4.0, -1.0, 0.0, 2.5, gas2) == pytest.approx(0.5)


def test_generator_is_null_for_any_state():
    c = rng.uniform(0.5, 2.0, 12)
    v = rng.normal(size=(3, 12))
    T = rng.normal(size=(3, 12))
    T /= np.linalg.norm(T, axis=0)
    g, _ = metric_from_sound_speed(c, v)
    L = null_generator(c, v, T)
    assert np.max(np.abs(np.einsum("ab...,a...,b...->...", g, L, L))) <= 1e-12


def test_second_forms():
    dv = rng.normal(size=(3, 3))
    k = sigma_second_form(2.0, dv)
    assert np.allclose(k, k.T) and np.allclose(2 * k, (dv + dv.T) / 2)
    assert np.allclose(null_second_form(2.0, np.eye(2), 0.5 * np.eye(2)), np.eye(2))


def _flat_box(Bf=0.0, BBf=0.0, grad_f=(0, 0, 0), lap_f=0.0):
    return box_cartesian(1.0, 0.0, np.zeros(3), 0.0, Bf, BBf, np.asarray(grad_f, float), lap_f)


def test_box_cartesian_examples():
    assert _flat_box(grad_f=(1, 0, 0)) == 0.0  # f = x^1
    assert _flat_box(grad_f=(2 * 0.3, 0, 0), lap_f=2.0) == pytest.approx(2.0)  # f = (x^1)^2 at x^1 = 0.3
    assert _flat_box(Bf=1.0) == 0.0  # f = t


def test_box_nullframe_trivial():
    val = box_nullframe(1.0, 1.0, 0.0, 0.0, 0.0, -2.0, np.zeros(2), 0.0, 0.0, 0.0, 0.0, np.zeros(2), 0.0)
    assert val == 0.0


def test_wave_operator_forms_agree_analytically():
    geo = ManufacturedGeometry()
    for pt in [(0.1, 0.8, 0.3, -0.2), (0.4, -0.6, 1.0, 0.5)]:
        a = box_cartesian(**geo.cartesian_inputs(pt))
        b = box_nullframe(**geo.null_inputs(pt))
        assert abs(a - b) <= 1e-9 * max(1.0, abs(a))
