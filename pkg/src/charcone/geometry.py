"""Geometry of the initial cone as a one-parameter family of embedded surfaces.

A chart is an embedding ``E(t, th1, th2) -> R^3`` with analytic partials up
to order two.  For every time the surface ``S_t = E(t, .)`` carries

* the tangent frame ``X_A = dE/dth_A`` and induced metric ``gs_AB``,
* the inward unit normal ``T`` (fixed by the chart orientation),
* the second fundamental form ``theta_AB = X_A . d_B T`` (a sphere of
  radius r has ``tr theta = -2 / r`` for the inward normal),
* the normal speed ``V = -dE/dt . T`` (positive when moving outward),
* the inverse frame matrix ``omega_prime`` expressing Cartesian
  derivatives through ``(X_1, X_2, T)``.

Sampled fields live on a structured ``(th1, th2)`` grid; tangential
derivatives are spectral in periodic directions and fourth-order finite
differences otherwise.

Array layout: component axes first, sample axes last.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.interpolate import make_interp_spline

from .errors import DegenerateChart, GridTooCoarse

# ---------------------------------------------------------------------------
# radius / height functions of time
# ---------------------------------------------------------------------------


class TimeFunction(ABC):
    """Scalar function of time with two derivatives."""

    @abstractmethod
    def __call__(self, t): ...

    @abstractmethod
    def d1(self, t): ...

    @abstractmethod
    def d2(self, t): ...


@dataclass(frozen=True)
class PolynomialInTime(TimeFunction):
    """sum_k coeffs[k] * t**k."""

    coeffs: tuple

    def __call__(self, t):
        return np.polynomial.polynomial.polyval(t, self.coeffs)

    def d1(self, t):
        return np.polynomial.polynomial.polyval(t, np.polynomial.polynomial.polyder(self.coeffs, 1))

    def d2(self, t):
        return np.polynomial.polynomial.polyval(t, np.polynomial.polynomial.polyder(self.coeffs, 2))


class TabulatedInTime(TimeFunction):
    """Interpolating spline through samples, e.g. a radius from a reference solver.

    ``degree`` 5 keeps the speed and its derivative smooth enough for a
    fourth-order integrator.
    """

    def __init__(self, t, values, t_shift: float = 0.0, degree: int = 5):
        self._spline = make_interp_spline(np.asarray(t, float) - t_shift, np.asarray(values, float), k=degree)

    def __call__(self, t):
        return self._spline(t)

    def d1(self, t):
        return self._spline(t, 1)

    def d2(self, t):
        return self._spline(t, 2)


def time_function_from_spec(spec, offset: float = 0.0) -> TimeFunction:
    """``{"linear": rate}``, ``{"polynomial": [a1, a2, ...]}`` or
    ``{"table": {"t": [...], "r": [...]}}``; ``offset`` is the value at t=0
    for the first two forms."""
    if isinstance(spec, (int, float)):
        return PolynomialInTime((offset, float(spec)))
    (kind, arg), = spec.items()
    if kind == "linear":
        return PolynomialInTime((offset, float(arg)))
    if kind == "polynomial":
        return PolynomialInTime((offset, *map(float, arg)))
    if kind == "table":
        return TabulatedInTime(arg["t"], arg["r"])
    raise ValueError(f"unknown time function {spec!r}")


# ---------------------------------------------------------------------------
# charts
# ---------------------------------------------------------------------------


@dataclass
class ChartJet:
    """Embedding and analytic partials at a batch of samples.

    ``E, E_t`` have shape (3, ...); ``E_A`` and ``E_tA`` (2, 3, ...);
    ``E_AB`` (2, 2, 3, ...).
    """

    E: np.ndarray
    E_t: np.ndarray
    E_A: np.ndarray
    E_AB: np.ndarray
    E_tA: np.ndarray


class ConeChart(ABC):
    """Embedding of the cone; subclasses provide analytic partials.

    ``normal_sign`` selects the inward normal as
    ``normal_sign * (X_1 x X_2) / |X_1 x X_2|``.
    """

    bounds: tuple = ((0.0, 1.0), (0.0, 1.0))
    periodic: tuple = (False, False)
    normal_sign: float = 1.0

    @abstractmethod
    def jet(self, t, th1, th2) -> ChartJet: ...

    def grid(self, n1: int, n2: int) -> "AngularGrid":
        return AngularGrid((n1, n2), self.bounds, self.periodic)

    def frame_on(self, t: float, th1, th2) -> "SurfaceFrame":
        """Frame at a single time on a sample set (charts may cache work)."""
        return frame_at(self, t, th1, th2)


class _ReferenceCache:
    """Keeps the frame of a reference surface for the last sample set used."""

    def __init__(self):
        self._key = None
        self._frame = None

    def get(self, build, th1, th2):
        key = self._key
        if key is None or key[0].shape != th1.shape or not (np.array_equal(key[0], th1) and np.array_equal(key[1], th2)):
            self._frame = build(th1, th2)
            self._key = (np.array(th1), np.array(th2))
        return self._frame


def _homothetic_frame(ref: "SurfaceFrame", sc: float, dsc: float) -> "SurfaceFrame":
    """Frame of ``sc * E0`` moving with ``d/dt = dsc * E0`` from the frame of ``E0``.

    ``ref.speed`` and ``ref.dspeed`` must hold ``-E0 . T`` and its tangential
    derivatives.
    """
    op = ref.omega_prime.copy()
    op[:, :2] /= sc
    return SurfaceFrame(
        position=sc * ref.position,
        E_t=dsc * ref.position,
        X=sc * ref.X,
        T=ref.T,
        gs=sc**2 * ref.gs,
        gs_inv=ref.gs_inv / sc**2,
        area=sc**2 * ref.area,
        theta=sc * ref.theta,
        tr_theta=ref.tr_theta / sc,
        omega_prime=op,
        christoffel=ref.christoffel,
        dT=ref.dT,
        speed=dsc * ref.speed,
        dspeed=dsc * ref.dspeed,
        E_AB=sc * ref.E_AB,
    )


def _reference_frame(chart: "ConeChart", th1, th2) -> "SurfaceFrame":
    # E(t) = s(t) E0 with s(0) normalised away: evaluate the unit-scale surface
    j = chart.unit_jet(th1, th2)
    j.E_t = j.E
    j.E_tA = j.E_A
    return frame_from_jet(chart, j)


def _stack(*parts):
    return np.stack(np.broadcast_arrays(*parts))


class ExpandingSphere(ConeChart):
    """Band chart of the sphere of radius R(t).

    ``th1`` is the azimuth (periodic), ``th2`` the polar angle restricted to
    ``[cap, pi - cap]`` so the poles are excluded.
    """

    periodic = (True, False)
    normal_sign = 1.0

    def __init__(self, radius: TimeFunction, cap: float = 0.3):
        self.radius = radius
        self.cap = float(cap)
        self.bounds = ((0.0, 2 * np.pi), (self.cap, np.pi - self.cap))

    def jet(self, t, th1, th2):
        t, th1, th2 = np.broadcast_arrays(*map(np.asarray, (t, th1, th2)))
        r, dr = self.radius(t), self.radius.d1(t)
        cp, sp, ct, st = np.cos(th1), np.sin(th1), np.cos(th2), np.sin(th2)
        z = np.zeros_like(cp)
        n = _stack(st * cp, st * sp, ct)
        n_p = _stack(-st * sp, st * cp, z)
        n_t = _stack(ct * cp, ct * sp, -st)
        n_pp = _stack(-st * cp, -st * sp, z)
        n_pt = _stack(-ct * sp, ct * cp, z)
        n_tt = -n
        return ChartJet(
            E=r * n,
            E_t=dr * n,
            E_A=np.stack([r * n_p, r * n_t]),
            E_AB=np.stack([np.stack([r * n_pp, r * n_pt]), np.stack([r * n_pt, r * n_tt])]),
            E_tA=np.stack([dr * n_p, dr * n_t]),
        )

    def unit_jet(self, th1, th2) -> ChartJet:
        return ExpandingSphere(PolynomialInTime((1.0,)), self.cap).jet(0.0, th1, th2)

    def frame_on(self, t, th1, th2):
        if not hasattr(self, "_ref"):
            self._ref = _ReferenceCache()
        ref = self._ref.get(lambda a, b: _reference_frame(self, a, b), th1, th2)
        return _homothetic_frame(ref, float(self.radius(t)), float(self.radius.d1(t)))


class Ellipsoid(ConeChart):
    """Scaled ellipsoid ``s(t) * (a sin th2 cos th1, b sin th2 sin th1, c cos th2)``."""

    periodic = (True, False)
    normal_sign = 1.0

    def __init__(self, a: float, b: float, c: float, scale: TimeFunction, cap: float = 0.3):
        self.axes = np.array([a, b, c], dtype=float)
        self.scale = scale
        self.cap = float(cap)
        self.bounds = ((0.0, 2 * np.pi), (self.cap, np.pi - self.cap))

    def jet(self, t, th1, th2):
        t, th1, th2 = np.broadcast_arrays(*map(np.asarray, (t, th1, th2)))
        base = ExpandingSphere(PolynomialInTime((1.0,)), self.cap).jet(t, th1, th2)
        k = self.axes.reshape((3,) + (1,) * t.ndim)
        sc, dsc = self.scale(t), self.scale.d1(t)
        return ChartJet(
            E=sc * k * base.E,
            E_t=dsc * k * base.E,
            E_A=sc * k * base.E_A,
            E_AB=sc * k * base.E_AB,
            E_tA=dsc * k * base.E_A,
        )

    def unit_jet(self, th1, th2) -> ChartJet:
        return Ellipsoid(*self.axes, PolynomialInTime((1.0,)), self.cap).jet(0.0, th1, th2)

    def frame_on(self, t, th1, th2):
        if not hasattr(self, "_ref"):
            self._ref = _ReferenceCache()
        ref = self._ref.get(lambda a, b: _reference_frame(self, a, b), th1, th2)
        return _homothetic_frame(ref, float(self.scale(t)), float(self.scale.d1(t)))


class PlaneFront(ConeChart):
    """Horizontal plane at height h(t) over a periodic box; inward is -x3."""

    periodic = (True, True)
    normal_sign = -1.0

    def __init__(self, height: TimeFunction, box: tuple = (2 * np.pi, 2 * np.pi)):
        self.height = height
        self.bounds = ((0.0, float(box[0])), (0.0, float(box[1])))

    def jet(self, t, th1, th2):
        t, th1, th2 = np.broadcast_arrays(*map(np.asarray, (t, th1, th2)))
        z, o = np.zeros_like(th1, dtype=float), np.ones_like(th1, dtype=float)
        h, dh = self.height(t), self.height.d1(t)
        zero3 = _stack(z, z, z)
        return ChartJet(
            E=_stack(th1, th2, h + z),
            E_t=_stack(z, z, dh + z),
            E_A=np.stack([_stack(o, z, z), _stack(z, o, z)]),
            E_AB=np.stack([np.stack([zero3, zero3]), np.stack([zero3, zero3])]),
            E_tA=np.stack([zero3, zero3]),
        )


class PolynomialChart(ConeChart):
    """``E^i = sum coeff * t**a * th1**b * th2**c`` over a rectangle.

    ``terms`` is a list of ``(i, a, b, c, coeff)`` with ``i`` in {0, 1, 2}.
    """

    def __init__(self, terms, bounds=((0.0, 1.0), (0.0, 1.0)), normal_sign: float = 1.0):
        self.terms = [(int(i), int(a), int(b), int(c), float(k)) for i, a, b, c, k in terms]
        self.bounds = tuple(tuple(map(float, b)) for b in bounds)
        self.periodic = (False, False)
        self.normal_sign = float(normal_sign)

    @staticmethod
    def _mono(x, p, d):
        # d-th derivative of x**p
        if d > p:
            return np.zeros_like(x)
        coef = 1.0
        for k in range(d):
            coef *= p - k
        return coef * x ** (p - d)

    def _eval(self, t, u, v, dt, du, dv):
        out = np.zeros((3,) + t.shape)
        for i, a, b, c, k in self.terms:
            out[i] += k * self._mono(t, a, dt) * self._mono(u, b, du) * self._mono(v, c, dv)
        return out

    def jet(self, t, th1, th2):
        t, u, v = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (t, th1, th2)))
        e = lambda dt, du, dv: self._eval(t, u, v, dt, du, dv)  # noqa: E731
        return ChartJet(
            E=e(0, 0, 0),
            E_t=e(1, 0, 0),
            E_A=np.stack([e(0, 1, 0), e(0, 0, 1)]),
            E_AB=np.stack([np.stack([e(0, 2, 0), e(0, 1, 1)]), np.stack([e(0, 1, 1), e(0, 0, 2)])]),
            E_tA=np.stack([e(1, 1, 0), e(1, 0, 1)]),
        )


def chart_from_spec(spec: dict) -> ConeChart:
    """Build a chart from a config mapping (see README for the keys)."""
    kind = spec.get("kind")
    cap = float(spec.get("cap", 0.3))
    if kind == "expanding_sphere":
        r0 = float(spec.get("r0", 1.0))
        return ExpandingSphere(time_function_from_spec(spec.get("rate", 1.0), r0), cap)
    if kind == "ellipsoid":
        a, b, c = (float(x) for x in spec.get("axes", (1.0, 1.0, 1.0)))
        return Ellipsoid(a, b, c, time_function_from_spec(spec.get("rate", 1.0), 1.0), cap)
    if kind == "plane_front":
        h0 = float(spec.get("h0", 1.0))
        box = tuple(spec.get("box", (2 * np.pi, 2 * np.pi)))
        return PlaneFront(time_function_from_spec(spec.get("rate", 1.0), h0), box)
    if kind == "polynomial":
        return PolynomialChart(spec["terms"], spec.get("bounds", ((0, 1), (0, 1))), spec.get("normal_sign", 1.0))
    raise ValueError(f"unknown chart kind {kind!r}")


# ---------------------------------------------------------------------------
# frames
# ---------------------------------------------------------------------------


@dataclass
class SurfaceFrame:
    """Per-sample geometry of ``S_t``.

    Shapes: ``X`` (2, 3, ...), ``T`` (3, ...), ``gs``/``gs_inv``/``theta``
    (2, 2, ...), ``omega_prime`` (3, 3, ...) with columns (X_1, X_2, T),
    ``christoffel`` (2, 2, 2, ...) indexed [C, A, B], ``dT`` (2, 3, ...)
    holding d_A T, ``dspeed`` (2, ...).
    """

    position: np.ndarray
    E_t: np.ndarray
    X: np.ndarray
    T: np.ndarray
    gs: np.ndarray
    gs_inv: np.ndarray
    area: np.ndarray
    theta: np.ndarray
    tr_theta: np.ndarray
    omega_prime: np.ndarray
    christoffel: np.ndarray
    dT: np.ndarray
    speed: np.ndarray
    dspeed: np.ndarray
    E_AB: np.ndarray


def _inv2(m):
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    return np.stack([np.stack([m[1, 1], -m[0, 1]]), np.stack([-m[1, 0], m[0, 0]])]) / det, det


def frame_from_jet(chart: ConeChart, j: ChartJet) -> SurfaceFrame:
    X = j.E_A
    cross = np.cross(X[0], X[1], axis=0)
    norm = np.sqrt(np.sum(cross**2, axis=0))
    scale = np.sqrt(np.sum(X[0] ** 2, axis=0) * np.sum(X[1] ** 2, axis=0))
    if np.any(norm <= 1e-10 * scale):
        raise DegenerateChart("tangent vectors are (nearly) parallel")
    T = chart.normal_sign * cross / norm
    gs = np.einsum("ai...,bi...->ab...", X, X)
    gs_inv, det = _inv2(gs)
    theta = -np.einsum("i...,abi...->ab...", T, j.E_AB)
    tr_theta = np.einsum("ab...,ab...->...", gs_inv, theta)
    dual = np.einsum("ab...,bi...->ai...", gs_inv, X)
    omega_prime = np.stack([dual[0], dual[1], T], axis=1)
    christoffel = np.einsum("cd...,di...,abi...->cab...", gs_inv, X, j.E_AB)
    # d_B T = gs^{CD} theta_{DB} X_C
    dT = np.einsum("cd...,db...,ci...->bi...", gs_inv, theta, X)
    speed = -np.einsum("i...,i...->...", j.E_t, T)
    dspeed = -np.einsum("ai...,i...->a...", j.E_tA, T) - np.einsum("i...,ai...->a...", j.E_t, dT)
    return SurfaceFrame(
        position=j.E,
        E_t=j.E_t,
        X=X,
        T=T,
        gs=gs,
        gs_inv=gs_inv,
        area=np.sqrt(det),
        theta=theta,
        tr_theta=tr_theta,
        omega_prime=omega_prime,
        christoffel=christoffel,
        dT=dT,
        speed=speed,
        dspeed=dspeed,
        E_AB=j.E_AB,
    )


def frame_at(chart: ConeChart, t, th1, th2) -> SurfaceFrame:
    """Tangent frame, inward normal, metrics and speed at the given samples."""
    return frame_from_jet(chart, chart.jet(t, th1, th2))


def second_form_at(chart: ConeChart, t, th1, th2):
    """Second fundamental form ``theta_AB`` and its trace."""
    f = frame_at(chart, t, th1, th2)
    return f.theta, f.tr_theta


def speed_at(chart: ConeChart, t, th1, th2):
    """Normal speed of the surface family; positive for outward motion."""
    return frame_at(chart, t, th1, th2).speed


# ---------------------------------------------------------------------------
# sampled fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AngularGrid:
    """Structured grid over the chart rectangle.

    Periodic directions use ``n`` equispaced points without the endpoint;
    other directions include both endpoints.
    """

    shape: tuple
    bounds: tuple
    periodic: tuple

    def axis(self, a: int) -> np.ndarray:
        lo, hi = self.bounds[a]
        n = self.shape[a]
        if self.periodic[a]:
            return lo + (hi - lo) * np.arange(n) / n
        return np.linspace(lo, hi, n)

    def spacing(self, a: int) -> float:
        lo, hi = self.bounds[a]
        n = self.shape[a]
        return (hi - lo) / (n if self.periodic[a] else n - 1)

    def mesh(self):
        return np.meshgrid(self.axis(0), self.axis(1), indexing="ij")


def _spectral_derivative(f, length, axis):
    n = f.shape[axis]
    k = 2 * np.pi * np.fft.rfftfreq(n, d=length / n)
    if n % 2 == 0:
        k[-1] = 0.0
    shape = [1] * f.ndim
    shape[axis] = k.size
    fh = np.fft.rfft(f, axis=axis) * (1j * k.reshape(shape))
    return np.fft.irfft(fh, n=n, axis=axis)


_EDGE = np.array([[-25.0, 48.0, -36.0, 16.0, -3.0], [-3.0, -10.0, 18.0, -6.0, 1.0]]) / 12.0


def _fd4_derivative(f, h, axis):
    n = f.shape[axis]

    def sl(a, b=None):
        idx = [slice(None)] * f.ndim
        idx[axis] = slice(a, b) if b is not None or a is None else a
        return tuple(idx)

    out = np.empty_like(f)
    out[sl(2, n - 2)] = (f[sl(0, n - 4)] - 8 * f[sl(1, n - 3)] + 8 * f[sl(3, n - 1)] - f[sl(4, n)]) / 12.0
    for row in range(2):
        w = _EDGE[row]
        out[sl(row)] = sum(w[k] * f[sl(k)] for k in range(5))
        out[sl(n - 1 - row)] = -sum(w[k] * f[sl(n - 1 - k)] for k in range(5))
    return out / h


@lru_cache(maxsize=32)
def _diff_matrix(n: int, length: float, periodic: bool) -> np.ndarray:
    # dense operator, built by applying the stencil to the identity
    eye = np.eye(n)
    if periodic:
        return _spectral_derivative(eye, length, 0)
    return _fd4_derivative(eye, length / (n - 1), 0)


def tangential_derivative(field: np.ndarray, grid: AngularGrid, direction: int) -> np.ndarray:
    """Derivative of a sampled field along chart direction 0 or 1.

    The two trailing axes of ``field`` are the grid axes.  Periodic
    directions are differentiated spectrally, others with fourth-order
    centred differences and one-sided fourth-order closures.
    """
    n = grid.shape[direction]
    if n < 8:
        raise GridTooCoarse(f"need at least 8 points along direction {direction}, got {n}")
    lo, hi = grid.bounds[direction]
    D = _diff_matrix(n, float(hi - lo), bool(grid.periodic[direction]))
    # removing one sample along the line makes constants differentiate to exactly zero
    if direction == 1:
        return (field - field[..., :1]) @ D.T
    return D @ (field - field[..., :1, :])


def gradient(field: np.ndarray, grid: AngularGrid) -> np.ndarray:
    """Stack of both tangential derivatives, shape (2, ...)."""
    return np.stack([tangential_derivative(field, grid, 0), tangential_derivative(field, grid, 1)])


def surface_divergence(frame: SurfaceFrame, components: np.ndarray, grid: AngularGrid) -> np.ndarray:
    """Divergence on S_t of the tangential field ``components^A X_A``."""
    d = tangential_derivative(components[0], grid, 0) + tangential_derivative(components[1], grid, 1)
    return d + np.einsum("aab...,b...->...", frame.christoffel, components)


def laplace_beltrami(frame: SurfaceFrame, f: np.ndarray, grid: AngularGrid, df=None) -> np.ndarray:
    """Surface Laplacian ``gs^{AB} (d_A d_B f - Gamma^C_AB d_C f)``."""
    if df is None:
        df = gradient(f, grid)
    hess = np.stack([gradient(df[0], grid), gradient(df[1], grid)])
    hess = 0.5 * (hess + np.swapaxes(hess, 0, 1))
    corr = np.einsum("cab...,c...->ab...", frame.christoffel, df)
    return np.einsum("ab...,ab...->...", frame.gs_inv, hess - corr)
