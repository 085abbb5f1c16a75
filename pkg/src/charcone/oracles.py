"""Reference solutions used to check the construction.

* :func:`constant_state` - the trivial Euler solution.
* :func:`spherical_char_solve` - spherically symmetric barotropic flow
  integrated on a double-null characteristic lattice.  It has its own code
  path and shares nothing with the cone transport equations.
* :func:`fd_jet` - normal derivatives on the lattice by centred differences
  across neighbouring characteristics.
* :class:`ManufacturedGeometry` - symbolic acoustical foliation used to check
  the two forms of the wave operator.

Conventions for the lattice.  ``R_plus = Phi0 + v_r`` and
``R_minus = Phi0 - v_r`` with ``v_r`` the radial velocity.  Along outgoing
characteristics (``dr/dt = v_r + c``) and ingoing ones (``dr/dt = v_r - c``)
both invariants obey ``dR/dt = -c (R_plus - R_minus) / r``.  Node ``(i, j)``
lies on outgoing line ``i`` and ingoing line ``j``; ``R_plus`` is prescribed
on the ingoing line ``j = 0`` (with ``t = i h``), ``R_minus`` on the outgoing
line ``i = 0`` (with ``t = j h``).

On an outgoing cone the cone invariants are ``wbar = R_plus / 2``,
``w = R_minus / 2`` and ``v_T = -v_r`` (the unit normal points inward).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .construction import ConeProblem, ConstField, CornerData, FreeData
from .eos import EquationOfState, Polytropic
from .errors import RadiusCollapse, SoundSpeedFloor
from .geometry import ExpandingSphere, PolynomialInTime, TabulatedInTime

# ---------------------------------------------------------------------------
# constant state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantState:
    rho: float
    s: float
    eos: EquationOfState

    @property
    def c(self) -> float:
        return float(self.eos.sound_speed(np.asarray(self.rho), np.asarray(self.s)))

    def fields(self, t, x):
        """``(rho, v, s)`` at Cartesian points ``x`` of shape (3, ...)."""
        shape = np.shape(x)[1:]
        return np.full(shape, self.rho), np.zeros((3,) + shape), np.full(shape, self.s)

    def cone_radius(self, r0: float = 1.0) -> PolynomialInTime:
        """Radius of the outgoing sound sphere through ``r0`` at ``t = 0``."""
        return PolynomialInTime((r0, self.c))

    def problem(self, r0: float = 1.0, **kw) -> ConeProblem:
        chart = ExpandingSphere(self.cone_radius(r0), kw.pop("cap", 0.3))
        corner = CornerData(rho=self.rho, s=self.s, v_normal=0.0, T_rho=kw.pop("T_rho", 0.0))
        return ConeProblem(self.eos, chart, FreeData(ConstField(self.s)), corner, **kw)


def constant_state(rho0: float, s0: float = 0.0, eos: EquationOfState | None = None) -> ConstantState:
    return ConstantState(float(rho0), float(s0), eos or Polytropic(2.0))


# ---------------------------------------------------------------------------
# spherical characteristic lattice
# ---------------------------------------------------------------------------


def barotropic_speed(eos: EquationOfState, s0: float = 0.0) -> Callable:
    """Sound speed as a function of ``Phi0`` at fixed entropy."""
    if isinstance(eos, Polytropic):
        g = eos.gamma
        return lambda phi0: 0.5 * (g - 1) * phi0

    def speed(phi0):
        rho = eos.density_from_phi0(phi0, np.full(np.shape(phi0), s0))
        return eos.sound_speed(rho, np.full(np.shape(phi0), s0))

    return speed


@dataclass
class SphericalState:
    """Lattice solution; arrays are indexed ``[i, j]``."""

    t: np.ndarray
    r: np.ndarray
    Rp: np.ndarray
    Rm: np.ndarray
    h: float
    speed: Callable
    eos: EquationOfState
    s0: float = 0.0

    @property
    def N(self) -> int:
        return self.t.shape[0] - 1

    @property
    def phi0(self):
        return 0.5 * (self.Rp + self.Rm)

    @property
    def v_r(self):
        return 0.5 * (self.Rp - self.Rm)

    @property
    def c(self):
        return self.speed(self.phi0)

    @property
    def rho(self):
        return self.eos.density_from_phi0(self.phi0, np.full(self.t.shape, self.s0))

    def quantity(self, name: str) -> np.ndarray:
        if name == "wbar":
            return 0.5 * self.Rp
        if name == "w":
            return 0.5 * self.Rm
        if name == "v_normal":
            return -self.v_r
        return getattr(self, name)

    def coarsen(self) -> "SphericalState":
        """Every second node (labels of the half-resolution lattice)."""
        sl = (slice(None, None, 2), slice(None, None, 2))
        return SphericalState(self.t[sl], self.r[sl], self.Rp[sl], self.Rm[sl], 2 * self.h, self.speed, self.eos, self.s0)


def _trapezoid_node(tW, rW, pW, mW, tS, rS, pS, mS, speed, iters: int = 4):
    """Node where an outgoing line through W meets an ingoing line through S."""
    cW = speed(0.5 * (pW + mW))
    cS = speed(0.5 * (pS + mS))
    vW, vS = 0.5 * (pW - mW), 0.5 * (pS - mS)
    fW = -cW * (pW - mW) / rW
    fS = -cS * (pS - mS) / rS
    aW, aS = vW + cW, vS - cS
    # first-order predictor with slopes frozen at W and S
    t = (rS - rW + aW * tW - aS * tS) / (aW - aS)
    r = rW + aW * (t - tW)
    p = pW + fW * (t - tW)
    m = mS + fS * (t - tS)
    for _ in range(iters):
        c = speed(0.5 * (p + m))
        v = 0.5 * (p - m)
        f = -c * (p - m) / r
        ao = 0.5 * (aW + v + c)
        ai = 0.5 * (aS + v - c)
        t = (rS - rW + ao * tW - ai * tS) / (ao - ai)
        r = rW + ao * (t - tW)
        p = pW + 0.5 * (fW + f) * (t - tW)
        m = mS + 0.5 * (fS + f) * (t - tS)
    return t, r, p, m


def _march_line(t, r, fixed, other, speed, sign, iters=4):
    """Integrate one boundary characteristic with prescribed times.

    ``fixed`` is the prescribed invariant; ``other`` (filled in place) is the
    transported one.  ``sign`` is +1 for outgoing and -1 for ingoing lines.
    """
    for k in range(1, len(t)):
        dt = t[k] - t[k - 1]

        def slopes(rr, p, m):
            c = speed(0.5 * (p + m))
            v = 0.5 * (p - m)
            return v + sign * c, -c * (p - m) / rr

        if sign > 0:
            p0, m0, m1 = other[k - 1], fixed[k - 1], fixed[k]
        else:
            p0, m0, p1 = fixed[k - 1], other[k - 1], fixed[k]
        a0, f0 = slopes(r[k - 1], p0, m0)
        rn = r[k - 1] + a0 * dt
        on = other[k - 1] + f0 * dt
        for _ in range(iters):
            a1, f1 = slopes(rn, on, m1) if sign > 0 else slopes(rn, p1, on)
            rn = r[k - 1] + 0.5 * (a0 + a1) * dt
            on = other[k - 1] + 0.5 * (f0 + f1) * dt
        r[k], other[k] = rn, on
        if rn <= 0:
            raise RadiusCollapse(f"radius reached zero at t={t[k]:.6g}")


def spherical_char_solve(
    eos: EquationOfState,
    R_minus_on_cone: Callable,
    R_plus_on_incoming: Callable,
    N: int,
    r0: float = 2.0,
    extent: float = 1.0,
    s0: float = 0.0,
    iters: int = 4,
    c_floor: float = 1e-8,
) -> SphericalState:
    """Second-order characteristic integration on an ``(N+1)^2`` lattice.

    ``R_minus_on_cone(t)`` gives the ingoing invariant along the outgoing
    line through ``(t=0, r=r0)``; ``R_plus_on_incoming(t)`` the outgoing
    invariant along the ingoing line through the same point.  Label spacing
    is ``h = extent / N`` on both boundary lines.
    """
    speed = barotropic_speed(eos, s0)
    h = extent / N
    lab = h * np.arange(N + 1)
    t = np.empty((N + 1, N + 1))
    r = np.empty_like(t)
    Rp = np.empty_like(t)
    Rm = np.empty_like(t)
    # outgoing boundary line i = 0
    t[0, :] = lab
    Rm[0, :] = R_minus_on_cone(lab)
    # ingoing boundary line j = 0
    t[:, 0] = lab
    Rp[:, 0] = R_plus_on_incoming(lab)
    Rp[0, 0] = R_plus_on_incoming(0.0)
    Rm[0, 0] = R_minus_on_cone(0.0)
    r[0, 0] = r0
    line_r, line_p = r[0, :].copy(), Rp[0, :].copy()
    line_p[0] = Rp[0, 0]
    line_r[0] = r0
    _march_line(t[0, :], line_r, Rm[0, :], line_p, speed, +1, iters)
    r[0, :], Rp[0, :] = line_r, line_p
    line_r, line_m = r[:, 0].copy(), Rm[:, 0].copy()
    line_r[0], line_m[0] = r0, Rm[0, 0]
    _march_line(t[:, 0], line_r, Rp[:, 0], line_m, speed, -1, iters)
    r[:, 0], Rm[:, 0] = line_r, line_m

    for d in range(2, 2 * N + 1):
        i = np.arange(max(1, d - N), min(N, d - 1) + 1)
        j = d - i
        tP, rP, pP, mP = _trapezoid_node(
            t[i, j - 1], r[i, j - 1], Rp[i, j - 1], Rm[i, j - 1],
            t[i - 1, j], r[i - 1, j], Rp[i - 1, j], Rm[i - 1, j],
            speed, iters,
        )
        if np.any(rP <= 0):
            raise RadiusCollapse("radius reached zero inside the lattice")
        if np.any(speed(0.5 * (pP + mP)) <= c_floor):
            raise SoundSpeedFloor("sound speed reached the floor inside the lattice", time=float(np.min(tP)))
        t[i, j], r[i, j], Rp[i, j], Rm[i, j] = tP, rP, pP, mP
    return SphericalState(t, r, Rp, Rm, h, speed, eos, s0)


def richardson_lattice(fine: SphericalState, coarse: SphericalState) -> SphericalState:
    """Extrapolate a second-order lattice pair on the coarse labels."""
    f = fine.coarsen()
    ex = lambda a, b: (4 * a - b) / 3  # noqa: E731
    return SphericalState(
        ex(f.t, coarse.t), ex(f.r, coarse.r), ex(f.Rp, coarse.Rp), ex(f.Rm, coarse.Rm),
        coarse.h, fine.speed, fine.eos, fine.s0,
    )


# ---------------------------------------------------------------------------
# finite-difference jets
# ---------------------------------------------------------------------------


def _label_derivative(q, t, axis, k):
    """Centred difference along label ``axis`` at offset ``k`` (NaN at edges)."""
    out = np.full(q.shape, np.nan)
    n = q.shape[axis]
    if 2 * k >= n:
        return out
    sl = lambda a, b: tuple(slice(a, b) if ax == axis else slice(None) for ax in range(q.ndim))  # noqa: E731
    num = q[sl(2 * k, n)] - q[sl(0, n - 2 * k)]
    den = t[sl(2 * k, n)] - t[sl(0, n - 2 * k)]
    out[sl(k, n - k)] = num / den
    return out


def fd_jet(state: SphericalState, quantity: str | np.ndarray, k: int, richardson: bool = True) -> np.ndarray:
    """Inward normal derivative of a lattice quantity at every node.

    The outgoing and ingoing directional derivatives ``D_out = d_t + (v+c) d_r``
    and ``D_in = d_t + (v-c) d_r`` are estimated by centred label differences
    at offset ``k``; then ``That q = -(D_out - D_in) q / (2 c)``.  With
    ``richardson`` the offsets ``k`` and ``2k`` are combined to cancel the
    leading error.  Nodes without a full stencil are NaN.
    """
    q = state.quantity(quantity) if isinstance(quantity, str) else quantity

    def at(kk):
        d_out = _label_derivative(q, state.t, 1, kk)
        d_in = _label_derivative(q, state.t, 0, kk)
        return -(d_out - d_in) / (2 * state.c)

    if not richardson:
        return at(k)
    return (4 * at(k) - at(2 * k)) / 3


def fd_along_outgoing(state: SphericalState, quantity, k: int) -> np.ndarray:
    """``D_out q`` (derivative in t along the outgoing lines)."""
    q = state.quantity(quantity) if isinstance(quantity, str) else quantity
    return _label_derivative(q, state.t, 1, k)


def fd_along_ingoing(state: SphericalState, quantity, k: int) -> np.ndarray:
    q = state.quantity(quantity) if isinstance(quantity, str) else quantity
    return _label_derivative(q, state.t, 0, k)


def lattice_cb_residual(state: SphericalState, k: int) -> np.ndarray:
    """Second Riemann transport equation evaluated with lattice differences.

    For spherical symmetry (no tangential velocity, constant entropy) the
    equation reads ``L w + 2 c That(w) + c tr(theta) v_T / 2 = 0`` with
    ``tr(theta) = -2 / r``, ``L = D_out`` and ``That = -(D_out - D_in)/(2c)``.
    """
    w = state.quantity("w")
    d_out = _label_derivative(w, state.t, 1, k)
    d_in = _label_derivative(w, state.t, 0, k)
    T_w = -(d_out - d_in) / (2 * state.c)
    return d_out + 2 * state.c * T_w + 0.5 * state.c * (-2 / state.r) * state.quantity("v_normal")


# ---------------------------------------------------------------------------
# matching a lattice line to the cone construction
# ---------------------------------------------------------------------------


@dataclass
class MatchedLine:
    """Outgoing lattice line ``i`` from node ``j0`` on, with times shifted to 0."""

    i: int
    j0: int
    t0: float
    t: np.ndarray
    r: np.ndarray
    state: SphericalState

    def values(self, q: np.ndarray) -> np.ndarray:
        return q[self.i, self.j0:]


def match_line(state: SphericalState, i: int, j0: int) -> MatchedLine:
    t = state.t[i, j0:]
    return MatchedLine(i, j0, float(t[0]), t - t[0], state.r[i, j0:], state)


def spherical_problem(line: MatchedLine, T_rho0: float, t_final: float, nt: int, shape=(8, 8), **kw) -> ConeProblem:
    """Cone problem on the sphere that follows a lattice line.

    The chart radius is a quintic spline through the lattice radii; corner
    density and normal velocity are read at the first node.
    """
    st = line.state
    chart = ExpandingSphere(TabulatedInTime(line.t, line.r), kw.pop("cap", 0.3))
    rho0 = float(line.values(st.rho)[0])
    vn0 = float(line.values(st.quantity("v_normal"))[0])
    corner = CornerData(rho=rho0, s=st.s0, v_normal=vn0, T_rho=float(T_rho0))
    kw.setdefault("corner_tol", 1e-5)
    return ConeProblem(st.eos, chart, FreeData(ConstField(st.s0)), corner, shape=shape, t_final=t_final, nt=nt, **kw)


# ---------------------------------------------------------------------------
# spherical setup and cross-check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Profile:
    """``mean + sum a sin(w t) + sum b cos(w t)`` with ``(a, w)`` pairs."""

    mean: float
    sin: tuple = ()
    cos: tuple = ()

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, float(self.mean))
        for a, w in self.sin:
            out = out + a * np.sin(w * t)
        for b, w in self.cos:
            out = out + b * np.cos(w * t)
        return out

    @classmethod
    def from_spec(cls, spec) -> "Profile":
        if isinstance(spec, (int, float)):
            return cls(float(spec))
        pairs = lambda key: tuple((float(a), float(w)) for a, w in spec.get(key, ()))  # noqa: E731
        return cls(float(spec.get("mean", 0.0)), pairs("sin"), pairs("cos"))


@dataclass(frozen=True)
class SphericalSetup:
    """Boundary data of a lattice run and the outgoing line followed by the cone.

    ``line`` gives the line index and the starting node as fractions of ``N``.
    """

    eos: EquationOfState = Polytropic(2.0)
    R_minus: Profile = Profile(2.0, sin=((0.1, 2.0),))
    R_plus: Profile = Profile(1.95, cos=((0.05, 3.0),))
    N: int = 2048
    r0: float = 2.0
    extent: float = 1.0
    s0: float = 0.0
    line: tuple = (0.125, 0.25)

    def exact(self) -> SphericalState:
        """Richardson-extrapolated lattice from ``N`` and ``N / 2``."""
        solve = lambda n: spherical_char_solve(  # noqa: E731
            self.eos, self.R_minus, self.R_plus, n, self.r0, self.extent, self.s0
        )
        return richardson_lattice(solve(self.N), solve(self.N // 2))

    def line_nodes(self, state: SphericalState) -> tuple:
        return round(self.line[0] * state.N), round(self.line[1] * state.N)


@dataclass
class CrossCheck:
    """Errors of the cone construction against a lattice line.

    ``wbar_error`` and ``v_radial_error`` are maxima over the stored levels,
    ``T_rho_error`` the maximum over lattice nodes inside the run (only with
    jets).  ``T_rho_oracle`` is the lattice estimate used for the corner.
    """

    line: MatchedLine
    run: object
    wbar_error: float
    v_radial_error: float
    T_rho_error: float | None = None
    T_rho_oracle: float | None = None
    jets: object = None


def cross_check(
    state: SphericalState,
    i: int,
    j0: int,
    t_final: float,
    nt: int,
    shape=(8, 8),
    jets: bool = False,
    fd_offset: int = 4,
    **kw,
) -> CrossCheck:
    """Run the cone construction on lattice line ``i`` and compare.

    Lattice values are interpolated to the run times with a quintic spline;
    the jet comparison is made at lattice node times with the run's own
    level interpolant, so neither side is resampled onto a coarser grid.
    """
    from scipy.interpolate import make_interp_spline

    from .construction import LevelHistory, integrate_wbar
    from .jets import integrate_first_jets

    line = match_line(state, i, j0)
    if t_final > line.t[-1]:
        raise ValueError(f"line {i} spans only t <= {line.t[-1]:.4g}")
    T_rho0 = float(fd_jet(state, "rho", fd_offset)[i, j0]) if jets else 0.0
    problem = spherical_problem(line, T_rho0, t_final, nt, shape=shape, **kw)
    run = integrate_wbar(problem)
    spline = lambda q: make_interp_spline(line.t, line.values(q), k=5)(run.times)  # noqa: E731
    wbar = spline(state.quantity("wbar"))
    v_r = spline(state.v_r)
    axes = tuple(range(1, run.fields["wbar"].ndim))
    err_w = float(np.max(np.abs(run.fields["wbar"] - np.expand_dims(wbar, axes))))
    err_v = float(np.max(np.abs(-run.fields["v_normal"] - np.expand_dims(v_r, axes))))
    out = CrossCheck(line, run, err_w, err_v, T_rho_oracle=T_rho0 if jets else None)
    if jets:
        jr = integrate_first_jets(run)
        hist = LevelHistory(jr.times, {"T_rho": jr.fields["T_rho"]})
        mask = line.t <= jr.times[-1] + 1e-12
        ref = line.values(fd_jet(state, "rho", fd_offset))[mask]
        num = np.array([hist.at("T_rho", t) for t in line.t[mask]])
        num = num.reshape(len(ref), -1)
        ok = np.isfinite(ref)
        out.T_rho_error = float(np.max(np.abs(num[ok] - ref[ok, None])))
        out.jets = jr
    return out


# ---------------------------------------------------------------------------
# manufactured acoustical foliation
# ---------------------------------------------------------------------------


class ManufacturedGeometry:
    """Acoustical foliation built from an arbitrary phase ``u`` and velocity ``v``.

    The sound speed is defined as ``c = B(u) / |grad u|`` so the level sets
    of ``u`` are characteristic; ``That = grad u / |grad u|`` and
    ``kappa = 1 / |grad u|``.  All null-frame inputs of the wave operator
    are produced symbolically for a test function ``f``; the Cartesian
    inputs as well.  ``X_A f`` and ``zeta^A`` are returned in Cartesian form
    (tangential gradient and the vector ``zeta^A X_A``), which contracts to
    the same scalar.
    """

    def __init__(self, u=None, v=None, f=None):
        import sympy as sp

        self.sp = sp
        t, x, y, z = self.symbols = sp.symbols("t x y z", real=True)
        X = (x, y, z)
        r = sp.sqrt(x**2 + y**2 + z**2)
        self.u = u if u is not None else 1 + t - r + sp.Rational(1, 10) * x * sp.sin(t) + z**2 / 20
        self.v = v if v is not None else [sp.sin(y) * t / 5, x * z / 7 + t**2 / 6, sp.cos(x + t) / 8]
        self.f = f if f is not None else sp.exp(x / 3) * sp.sin(y + t) + z**3 * t
        self._X = X
        self._build()

    def _build(self):
        sp = self.sp
        t = self.symbols[0]
        X, v, u, f = self._X, self.v, self.u, self.f
        grad = lambda h: [sp.diff(h, xi) for xi in X]  # noqa: E731
        B = lambda h: sp.diff(h, t) + sum(v[i] * sp.diff(h, X[i]) for i in range(3))  # noqa: E731
        gu = grad(u)
        nu = sp.sqrt(sum(g**2 for g in gu))
        c = B(u) / nu
        Th = [g / nu for g in gu]
        kap = 1 / nu
        L = lambda h: B(h) - c * sum(Th[i] * sp.diff(h, X[i]) for i in range(3))  # noqa: E731
        That = lambda h: sum(Th[i] * sp.diff(h, X[i]) for i in range(3))  # noqa: E731
        dv = [[sp.diff(v[j], X[i]) for j in range(3)] for i in range(3)]
        k = [[(dv[i][j] + dv[j][i]) / (2 * c) for j in range(3)] for i in range(3)]
        P = [[(1 if i == j else 0) - Th[i] * Th[j] for j in range(3)] for i in range(3)]
        gf, gc = grad(f), grad(c)
        H = [[sp.diff(f, X[i], X[j]) for j in range(3)] for i in range(3)]
        tr_th = sum(sp.diff(Th[i], X[i]) for i in range(3))
        Pgf = [sum(P[i][j] * gf[j] for j in range(3)) for i in range(3)]
        kT = [sum(k[i][j] * Th[j] for j in range(3)) for i in range(3)]
        zeta = [kap * sum(P[i][j] * (c * kT[j] - gc[j]) for j in range(3)) for i in range(3)]
        exprs = {
            # shared
            "c": c,
            # Cartesian form
            "Bc": B(c), "grad_c": gc, "div_v": sum(dv[i][i] for i in range(3)),
            "Bf": B(f), "BBf": B(B(f)), "grad_f": gf, "lap_f": sum(H[i][i] for i in range(3)),
            # null-frame form
            "kappa": kap, "Lc": L(c), "Lkappa": L(kap),
            "tr_k": sum(P[i][j] * k[i][j] for i in range(3) for j in range(3)),
            "tr_theta": tr_th, "zeta_up": zeta,
            "LTf": L(kap * That(f)), "LLf": L(L(f)), "Lf": L(f), "Tf": That(f), "Xf": Pgf,
            "lap_slash_f": sum(P[i][j] * H[i][j] for i in range(3) for j in range(3)) - tr_th * That(f),
        }
        self._funcs = {k: sp.lambdify(self.symbols, e, "numpy") for k, e in exprs.items()}
        self._exprs = exprs
        self._base = {
            "u": sp.lambdify(self.symbols, u, "numpy"),
            "v": sp.lambdify(self.symbols, v, "numpy"),
            "f": sp.lambdify(self.symbols, f, "numpy"),
        }

    def evaluate(self, name, pt):
        val = self._funcs[name](*pt)
        return np.asarray(val, dtype=float)

    def cartesian_inputs(self, pt) -> dict:
        keys = ("c", "Bc", "grad_c", "div_v", "Bf", "BBf", "grad_f", "lap_f")
        return {k: self.evaluate(k, pt) for k in keys}

    def null_inputs(self, pt) -> dict:
        keys = ("c", "kappa", "Lc", "Lkappa", "tr_k", "tr_theta", "zeta_up", "LTf", "LLf", "Lf", "Tf", "Xf", "lap_slash_f")
        return {k: self.evaluate(k, pt) for k in keys}

    def sampled_null_inputs(self, pt, h: float) -> dict:
        """Null-frame inputs with every derivative replaced by a centred difference.

        Only values of ``u``, ``v`` and ``f`` are sampled, so the inputs carry
        an ``O(h^2)`` error.
        """
        U, V, F = self._base["u"], self._base["v"], self._base["f"]
        pt = np.asarray(pt, dtype=float)

        def D(fun, mu):
            e = np.zeros(4)
            e[mu] = h
            return lambda p: (fun(p + e) - fun(p - e)) / (2 * h)

        u = lambda p: float(U(*p))  # noqa: E731
        vel = lambda p: np.asarray(V(*p), dtype=float)  # noqa: E731
        f = lambda p: float(F(*p))  # noqa: E731
        grad = lambda fun: (lambda p: np.array([D(fun, m)(p) for m in (1, 2, 3)]))  # noqa: E731

        def B(fun):
            return lambda p: D(fun, 0)(p) + vel(p) @ grad(fun)(p)

        def nu(p):
            return float(np.linalg.norm(grad(u)(p)))

        def c(p):
            return B(u)(p) / nu(p)

        def That_vec(p):
            return grad(u)(p) / nu(p)

        def That(fun):
            return lambda p: That_vec(p) @ grad(fun)(p)

        def L(fun):
            return lambda p: B(fun)(p) - c(p) * That(fun)(p)

        kappa = lambda p: 1.0 / nu(p)  # noqa: E731

        def dv(p):
            return np.array([[D(lambda q, jj=j: vel(q)[jj], i)(p) for j in range(3)] for i in (1, 2, 3)])

        def proj(p):
            Th = That_vec(p)
            return np.eye(3) - np.outer(Th, Th)

        def tr_theta(p):
            return sum(D(lambda q, ii=i: That_vec(q)[ii], i + 1)(p) for i in range(3))

        def hess_f(p):
            return np.array([[D(D(f, i), j)(p) for j in (1, 2, 3)] for i in (1, 2, 3)])

        p = pt
        cv, Th, P = c(p), That_vec(p), proj(p)
        M = dv(p)
        k = (M + M.T) / (2 * cv)
        gf = grad(f)(p)
        gc = grad(c)(p)
        trth = tr_theta(p)
        return {
            "c": cv,
            "kappa": kappa(p),
            "Lc": L(c)(p),
            "Lkappa": L(kappa)(p),
            "tr_k": float(np.sum(P * k)),
            "tr_theta": trth,
            "zeta_up": kappa(p) * P @ (cv * k @ Th - gc),
            "LTf": L(lambda q: kappa(q) * That(f)(q))(p),
            "LLf": L(L(f))(p),
            "Lf": L(f)(p),
            "Tf": That(f)(p),
            "Xf": P @ gf,
            "lap_slash_f": float(np.sum(P * hess_f(p))) - trth * That(f)(p),
        }

    # --- fields for the metric-compatibility check -------------------------

    def flow_derivatives(self, pt):
        """``c, v, d(c^2), dv`` and second derivatives at ``pt``.

        Returns a dict with ``c``, ``v`` (3,), ``dc2`` (4,), ``dv`` (4,3) plus
        the metric derivatives assembled from them.
        """
        sp = self.sp
        if not hasattr(self, "_flow"):
            c = self._exprs["c"]
            coords = self.symbols
            self._flow = {
                "c": sp.lambdify(coords, c, "numpy"),
                "v": sp.lambdify(coords, self.v, "numpy"),
                "dc2": sp.lambdify(coords, [sp.diff(c**2, q) for q in coords], "numpy"),
                "dv": sp.lambdify(coords, [[sp.diff(vi, q) for vi in self.v] for q in coords], "numpy"),
            }
        fl = self._flow
        return {
            "c": float(fl["c"](*pt)),
            "v": np.asarray(fl["v"](*pt), dtype=float),
            "dc2": np.asarray(fl["dc2"](*pt), dtype=float),
            "dv": np.asarray(fl["dv"](*pt), dtype=float),
        }
