"""Pointwise acoustical geometry.

The acoustical metric of a flow with sound speed ``c`` and velocity ``v`` is
``g = -c^2 dt^2 + sum_i (dx^i - v^i dt)^2``.  This module evaluates the
metric and its inverse, the Christoffel symbols, the second fundamental form
of the constant-time slices, the null-condition residual, and the wave
operator in two forms (Cartesian and null frame) so they can be compared.

Index convention: component axes lead, sample axes trail.  Spacetime index
0 is time; ``dv[mu, i]`` is the derivative of ``v^i`` along ``x^mu``.
"""

from __future__ import annotations

import numpy as np

from .eos import EquationOfState
from .errors import MissingDerivative, NonPositiveSoundSpeed


def _metric_from(c, v):
    v = np.asarray(v, dtype=float)
    c = np.asarray(c, dtype=float)
    if np.any(~(c > 0)):
        raise NonPositiveSoundSpeed("sound speed must be positive")
    shape = np.broadcast_shapes(c.shape, v.shape[1:])
    v = np.broadcast_to(v, (3,) + shape)
    c = np.broadcast_to(c, shape)
    vv = np.sum(v**2, axis=0)
    g = np.zeros((4, 4) + shape)
    g[0, 0] = -(c**2) + vv
    g[0, 1:] = -v
    g[1:, 0] = -v
    for i in range(3):
        g[i + 1, i + 1] = 1.0
    ginv = np.zeros_like(g)
    b = np.concatenate([np.ones((1,) + shape), v])
    ginv[:] = -np.einsum("m...,n...->mn...", b, b) / c**2
    for i in range(3):
        ginv[i + 1, i + 1] += 1.0
    return g, ginv


def metric_at(rho, v, s, eos: EquationOfState):
    """Acoustical metric and its inverse, each of shape (4, 4, ...)."""
    c = eos.thermo(rho, s).c
    return _metric_from(c, v)


def metric_from_sound_speed(c, v):
    """Same as :func:`metric_at` when the sound speed is already known."""
    return _metric_from(c, v)


def christoffels_at(c, v, dc2, dv):
    """Christoffel symbols ``gamma[lam, mu, nu]`` of the acoustical metric.

    Parameters
    ----------
    c : sound speed.
    v : velocity, shape (3, ...).
    dc2 : derivatives of c**2 along (t, x1, x2, x3), shape (4, ...).
    dv : ``dv[mu, i]`` derivative of v^i along x^mu, shape (4, 3, ...).
    """
    if dc2 is None or dv is None:
        raise MissingDerivative("Christoffel symbols need all first derivatives of c**2 and v")
    c = np.asarray(c, dtype=float)
    v = np.asarray(v, dtype=float)
    dc2 = np.asarray(dc2, dtype=float)
    dv = np.asarray(dv, dtype=float)
    if np.any(~np.isfinite(dv)) or np.any(~np.isfinite(dc2)):
        raise MissingDerivative("a required derivative is not available")
    c2 = c**2
    # derivatives of F = -c^2 + |v|^2
    dF = -dc2 + 2 * np.einsum("k...,mk...->m...", v, dv)
    vF = np.einsum("k...,k...->...", v, dF[1:])
    head = (dc2[0] + vF) / (2 * c2)
    sym = dv[1:] + np.swapaxes(dv[1:], 0, 1)  # d_i v^j + d_j v^i
    rot = dv[1:] - np.swapaxes(dv[1:], 0, 1)  # [i, k] = d_i v^k - d_k v^i
    vrot = np.einsum("k...,ik...->i...", v, rot)

    gam = np.zeros((4, 4, 4) + c.shape)
    gam[0, 0, 0] = head
    gam[1:, 0, 0] = v * head - dv[0] - 0.5 * dF[1:]
    g0i0 = -dF[1:] / (2 * c2) + vrot / (2 * c2)
    gam[0, 1:, 0] = g0i0
    gam[0, 0, 1:] = g0i0
    # Gamma^j_{i0}
    gj = (
        -np.einsum("j...,i...->ji...", v, dF[1:]) / (2 * c2)
        + np.einsum("j...,i...->ji...", v, vrot) / (2 * c2)
        - 0.5 * np.swapaxes(rot, 0, 1)
    )
    gam[1:, 1:, 0] = gj
    gam[1:, 0, 1:] = gj
    gam[0, 1:, 1:] = sym / (2 * c2)
    gam[1:, 1:, 1:] = np.einsum("k...,ij...->kij...", v, sym) / (2 * c2)
    return gam


def metric_derivatives(c, v, dc2, dv):
    """``dg[lam, mu, nu]`` = derivative of g_{mu nu} along x^lam."""
    v = np.asarray(v, dtype=float)
    dF = -np.asarray(dc2) + 2 * np.einsum("k...,mk...->m...", v, dv)
    dg = np.zeros((4, 4, 4) + np.shape(c))
    dg[:, 0, 0] = dF
    dg[:, 0, 1:] = -dv
    dg[:, 1:, 0] = -dv
    return dg


def compatibility_residual(g, dg, gam):
    """Max over components of ``d_l g_mn - Gamma^a_lm g_an - Gamma^a_ln g_ma``."""
    r = dg - np.einsum("alm...,an...->lmn...", gam, g) - np.einsum("aln...,ma...->lmn...", gam, g)
    return float(np.max(np.abs(r)))


def christoffels_from_metric(ginv, dg):
    """Reference Christoffel symbols from the standard Levi-Civita formula."""
    t = dg + np.swapaxes(dg, 0, 1) - np.moveaxis(dg, 0, 2)
    # t[m, n, a] = d_m g_{n a} + d_n g_{m a} - d_a g_{m n}
    return 0.5 * np.einsum("la...,mna...->lmn...", ginv, t)


def sigma_second_form(c, dv_spatial):
    """``k_ij = (d_i v^j + d_j v^i) / (2 c)`` from ``dv_spatial[i, j] = d_i v^j``."""
    return (dv_spatial + np.swapaxes(dv_spatial, 0, 1)) / (2 * np.asarray(c))


def null_second_form(c, k_slashed, theta):
    """``chi_AB = c (k_AB - theta_AB)``."""
    return np.asarray(c) * (k_slashed - theta)


def null_generator(c, v, T):
    """Cartesian components (1, v - c T) of the outgoing generator."""
    v = np.asarray(v, dtype=float)
    return np.concatenate([np.ones((1,) + v.shape[1:]), v - np.asarray(c) * T])


def null_residual(rho, v_normal, s, speed, eos: EquationOfState):
    """Residual ``(-v_T + c) - V`` of the characteristic condition."""
    c = eos.thermo(rho, s).c
    return -np.asarray(v_normal) + c - speed


def null_determinant(c, v_normal, speed):
    """Adapted-frame determinant ``(v3 - V)^2 - c^2`` with ``v3 = -v_T``.

    It vanishes together with :func:`null_residual` on outgoing cones.
    """
    return (-np.asarray(v_normal) - speed) ** 2 - np.asarray(c) ** 2


def box_cartesian(c, Bc, grad_c, div_v, Bf, BBf, grad_f, lap_f):
    """Wave operator of the acoustical metric from Cartesian data.

    ``-B^2 f / c^2 + B(c) B f / c^3 + grad c . grad f / c + lap f - div(v) B f / c^2``
    with ``B = d_t + v . grad``.
    """
    c = np.asarray(c)
    return (
        -BBf / c**2
        + Bc * Bf / c**3
        + np.einsum("i...,i...->...", grad_c, grad_f) / c
        + lap_f
        - div_v * Bf / c**2
    )


def box_nullframe(
    c,
    kappa,
    Lc,
    Lkappa,
    tr_k,
    tr_theta,
    zeta_up,
    LTf,
    LLf,
    Lf,
    Tf,
    Xf,
    lap_slash_f,
):
    """Wave operator decomposed in the null frame ``(L, T, X_1, X_2)``.

    ``T = kappa * That`` and ``mu = c * kappa``; ``Tf`` is the unit-normal
    derivative ``That(f)``, ``LTf`` is ``L(T(f))``, ``zeta_up`` the
    contravariant torsion components and ``Xf`` the tangential derivatives.
    """
    for name, val in (("LTf", LTf), ("Tf", Tf), ("Lkappa", Lkappa)):
        if val is None:
            raise MissingDerivative(f"null-frame wave operator needs {name}")
    c = np.asarray(c)
    mu = c * kappa
    return (
        -2.0 / mu * LTf
        + lap_slash_f
        - LLf / c**2
        + Lc * Lf / c**3
        - Lkappa * Lf / (mu * c)
        - tr_k * Lf / c
        - (tr_k - tr_theta) * Tf
        - 2.0 / mu * np.einsum("a...,a...->...", zeta_up, Xf)
    )
