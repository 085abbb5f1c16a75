import numpy as np
import pytest

from charcone.construction import BackgroundCache, ConeProblem, ConstField, FourierField, FreeData, integrate_wbar, matched_corner
from charcone.eos import Polytropic
from charcone.errors import MisalignedChart
from charcone.geometry import ExpandingSphere, PolynomialInTime, gradient
from charcone.jets import integrate_first_jets, integrate_frame_jets
from charcone.oracles import constant_state

gas = Polytropic(2.0)


@pytest.fixture(scope="module")
def constant_jets():
    run = integrate_wbar(constant_state(1.0).problem(shape=(8, 8), t_final=0.5, nt=50))
    return integrate_first_jets(run)


@pytest.fixture(scope="module")
def generic_jets():
    chart = ExpandingSphere(PolynomialInTime((1.0, 0.8)))
    free = FreeData(FourierField(1.0, 0.0, 0.05, rate=0.5), (FourierField(2.0, 0.0, 0.03), ConstField(0.0)))
    corner = matched_corner(gas, chart, free, (12, 10), 1.0, T_rho=0.2)
    run = integrate_wbar(ConeProblem(gas, chart, free, corner, shape=(12, 10), t_final=0.3, nt=30))
    return integrate_first_jets(run)


def test_constant_state_has_trivial_jets(constant_jets):
    f = constant_jets.fields
    assert constant_jets.status == "complete"
    assert np.max(np.abs(f["kappa"] - 1)) <= 1e-12
    for k in ("T_rho", "T_v", "T_s", "T2_s", "zeta", "eta"):
        assert np.max(np.abs(f[k])) <= 1e-12, k


def test_constraint_residual_vanishes_on_constant_state(constant_jets):
    assert np.max(np.abs(constant_jets.fields["cb_residual"])) <= 1e-12


def test_eta_is_zeta_plus_gradient_of_mu(generic_jets):
    f, run = generic_jets.fields, generic_jets.order0
    grid = run.problem.grid()
    for n in (0, len(generic_jets.times) - 1):
        mu = run.fields["c"][n] * f["kappa"][n]
        assert np.allclose(f["eta"][n] - f["zeta"][n], gradient(mu, grid), atol=1e-12)


def test_entropy_normal_derivative_from_transport(generic_jets):
    run = generic_jets.order0
    cache = BackgroundCache(run.problem)
    for n in (0, 10, 30):
        Ls = cache(run.times[n]).Ls
        assert np.allclose(generic_jets.fields["T_s"][n], -Ls / run.fields["c"][n], atol=1e-13)


def test_frame_jets_of_a_static_sphere_family(constant_jets):
    # inward derivative of r dn/dtheta is -dn/dtheta for every level
    Q = integrate_frame_jets(constant_jets)
    run = constant_jets.order0
    cache = BackgroundCache(run.problem)
    for n in (0, len(run.times) - 1):
        assert np.allclose(Q[n], cache(run.times[n]).frame.dT, atol=1e-10)


def test_frame_jets_need_aligned_chart(generic_jets):
    with pytest.raises(MisalignedChart):
        integrate_frame_jets(generic_jets)


def test_kappa_floor_truncates_before_collapse():
    p = constant_state(1.0).problem(shape=(8, 8), t_final=1.0, nt=200, T_rho=2.0)
    jr = integrate_first_jets(integrate_wbar(p))
    assert jr.status == "truncated" and jr.stop_label == "KappaFloor"
    assert jr.times[-1] <= jr.stop_time < 1.0
    assert np.all(jr.fields["kappa"] > 0)
    assert jr.order0.levels == len(jr.times)
