import numpy as np
import pytest

from charcone.eos import Polytropic, RiemannState, riemann_from_state, state_from_riemann
from charcone.oracles import (
    Profile,
    SphericalSetup,
    constant_state,
    cross_check,
    fd_jet,
    lattice_cb_residual,
    richardson_lattice,
    spherical_char_solve,
)

from conftest import slope

gas = Polytropic(2.0)
wavy = dict(R_minus=Profile(2.0, sin=((0.1, 2.0),)), R_plus=Profile(1.95, cos=((0.05, 3.0),)))
# a second, unrelated nonlinear profile set
other = SphericalSetup(R_minus=Profile(1.9, cos=((0.08, 2.5),)), R_plus=Profile(2.05, sin=((0.06, 1.5),)), N=512)


def solve(N):
    return spherical_char_solve(gas, wavy["R_minus"], wavy["R_plus"], N)


def test_constant_state_lattice_is_exact():
    st = spherical_char_solve(gas, Profile(2.0), Profile(2.0), 64)
    assert np.max(np.abs(st.Rp - 2.0)) == 0 and np.max(np.abs(st.Rm - 2.0)) == 0
    # outgoing lines move at the sound speed c = Phi0 / 2 = 1 for gamma = 2
    assert np.allclose(st.r[0], 2.0 + st.t[0], atol=1e-13)


def test_constant_state_has_zero_fd_jet():
    st = spherical_char_solve(gas, Profile(2.0), Profile(2.0), 64)
    jet = fd_jet(st, "rho", 2)
    assert np.nanmax(np.abs(jet)) == 0


def test_lattice_self_convergence_is_second_order():
    lat = {N: solve(N) for N in (64, 128, 256, 512)}
    diffs = [np.max(np.abs(lat[N].Rp - lat[2 * N].Rp[::2, ::2])) for N in (64, 128, 256)]
    assert slope(diffs) == pytest.approx([2, 2], abs=0.1)


def test_richardson_reduces_lattice_error():
    ref = richardson_lattice(solve(512), solve(256))
    plain = solve(64)
    extra = richardson_lattice(solve(128), solve(64))
    sl = (slice(None, None, 4), slice(None, None, 4))
    assert np.max(np.abs(extra.Rp - ref.Rp[sl])) < 0.1 * np.max(np.abs(plain.Rp - ref.Rp[sl]))


def test_riemann_convention_round_trip_on_lattice(spherical_exact):
    for st in (spherical_exact, other.exact()):
        rs = riemann_from_state(gas, st.rho, st.quantity("v_normal"), None, np.zeros(st.t.shape))
        assert np.allclose(rs.wbar, st.quantity("wbar"), atol=1e-13)
        assert np.allclose(rs.w, st.quantity("w"), atol=1e-13)
        rho, vn, _, _ = state_from_riemann(gas, RiemannState(rs.w, rs.wbar, None, np.zeros(st.t.shape)))
        assert np.allclose(rho, st.rho, rtol=1e-13) and np.allclose(vn, -st.v_r, atol=1e-13)


def test_cone_construction_follows_a_second_profile():
    ex = other.exact()
    i, j0 = other.line_nodes(ex)
    cc = cross_check(ex, i, j0, 0.4, 100)
    assert cc.wbar_error <= 1e-10 and cc.v_radial_error <= 1e-10


def test_constraint_residual_is_second_order_on_lattice():
    res = []
    for N in (64, 128, 256, 512):
        band = slice(N // 8, N // 2)
        res.append(np.nanmax(np.abs(lattice_cb_residual(solve(N), 1)[band, band])))
    assert slope(res) == pytest.approx([2, 2, 2], abs=0.1)


def test_constant_state_helper():
    cs = constant_state(1.0)
    assert cs.c == pytest.approx(1.0)
    rho, v, s = cs.fields(0.3, np.zeros((3, 4)))
    assert np.all(rho == 1) and np.all(v == 0) and np.all(s == 0)
