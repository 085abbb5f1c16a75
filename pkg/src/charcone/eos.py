"""Equations of state and Riemann-invariant algebra.

The state is described by density ``rho`` and entropy ``s``.  Two potentials
enter the characteristic transport system::

    phi0 = integral of c / rho  d rho
    psi0 = integral of (1 / rho) dc/ds  d rho  -  (dp/ds) / (c rho)

and the Riemann invariants along a surface with unit normal ``T`` are
``wbar = (phi0 - v_T) / 2`` and ``w = (phi0 + v_T) / 2``.

All functions accept scalars or numpy arrays and broadcast elementwise.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad_vec

from .errors import (
    NoRoot,
    NonConvergence,
    NonMonotone,
    NonPositiveDensity,
    NonPositiveSoundSpeed,
    OutOfRange,
)


def _out(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


# ---------------------------------------------------------------------------
# entropy factors A(s) for the polytropic law
# ---------------------------------------------------------------------------


class EntropyFactor(ABC):
    """Smooth positive function A(s) with its first two derivatives."""

    @abstractmethod
    def value(self, s): ...

    @abstractmethod
    def d1(self, s): ...

    @abstractmethod
    def d2(self, s): ...


@dataclass(frozen=True)
class ConstFactor(EntropyFactor):
    a: float = 1.0

    def value(self, s):
        return np.full_like(np.asarray(s, dtype=float), self.a)

    def d1(self, s):
        return np.zeros_like(np.asarray(s, dtype=float))

    def d2(self, s):
        return np.zeros_like(np.asarray(s, dtype=float))


@dataclass(frozen=True)
class ExpFactor(EntropyFactor):
    """A(s) = exp(s)."""

    def value(self, s):
        return np.exp(np.asarray(s, dtype=float))

    d1 = value
    d2 = value


@dataclass(frozen=True)
class AffineFactor(EntropyFactor):
    """A(s) = a + b s."""

    a: float = 1.0
    b: float = 0.0

    def value(self, s):
        return self.a + self.b * np.asarray(s, dtype=float)

    def d1(self, s):
        return np.full_like(np.asarray(s, dtype=float), self.b)

    def d2(self, s):
        return np.zeros_like(np.asarray(s, dtype=float))


def entropy_factor_from_spec(spec) -> EntropyFactor:
    """Build A(s) from a catalog entry.

    Accepted forms: a number (constant), ``"exp"``, ``{"const": a}``,
    ``{"exp": null}``, ``{"affine": [a, b]}``.
    """
    if spec is None:
        return ConstFactor(1.0)
    if isinstance(spec, (int, float)):
        return ConstFactor(float(spec))
    if isinstance(spec, str):
        if spec == "exp":
            return ExpFactor()
        if spec == "const":
            return ConstFactor(1.0)
        raise ValueError(f"unknown entropy factor {spec!r}")
    if isinstance(spec, dict) and len(spec) == 1:
        (kind, arg), = spec.items()
        if kind == "const":
            return ConstFactor(float(arg))
        if kind == "exp":
            return ExpFactor()
        if kind == "affine":
            a, b = arg
            return AffineFactor(float(a), float(b))
    raise ValueError(f"unknown entropy factor {spec!r}")


# ---------------------------------------------------------------------------
# thermodynamic bundle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Thermo:
    """Pressure, sound speed, potentials and partial derivatives at (rho, s).

    Attributes
    ----------
    p, c : pressure and sound speed.
    phi0, psi0 : the two transport potentials.
    phi0_s : partial of phi0 in s at fixed rho.
    p_s, p_ss, p_srho : pressure partials dp/ds, d2p/ds2, d2p/(ds drho).
    c_rho, c_s : sound-speed partials.
    """

    p: np.ndarray
    c: np.ndarray
    phi0: np.ndarray
    psi0: np.ndarray
    phi0_s: np.ndarray
    p_s: np.ndarray
    p_ss: np.ndarray
    p_srho: np.ndarray
    c_rho: np.ndarray
    c_s: np.ndarray


class EquationOfState(ABC):
    """Pressure law p(rho, s) with analytic partials."""

    @abstractmethod
    def _thermo(self, rho: np.ndarray, s: np.ndarray) -> Thermo: ...

    @abstractmethod
    def sound_speed(self, rho, s): ...

    @abstractmethod
    def phi0(self, rho, s): ...

    def thermo(self, rho, s) -> Thermo:
        rho = np.asarray(rho, dtype=float)
        s = np.asarray(s, dtype=float)
        _check_density(rho)
        out = self._thermo(rho, s)
        _check_sound_speed(out.c)
        return out

    def density_from_phi0(self, phi0, s):
        """Invert phi0(., s) at fixed entropy by safeguarded Newton in log rho."""
        phi0 = np.asarray(phi0, dtype=float)
        s = np.broadcast_to(np.asarray(s, dtype=float), phi0.shape)

        def fun(x):
            rho = np.exp(x)
            return self.phi0(rho, s) - phi0, self.sound_speed(rho, s)

        x = _solve_monotone(fun, np.zeros(phi0.shape), tol_f=1e-14 * np.maximum(1.0, np.abs(phi0)))
        return np.exp(x)

    def closure_density(self, wbar, speed, s):
        """Density for which -v_T + c equals ``speed`` given ``wbar``.

        With w = phi0 - wbar the constraint reads
        ``h(rho) = 2 wbar - phi0(rho) + c(rho) - speed = 0``.
        """
        wbar = np.asarray(wbar, dtype=float)
        shape = np.broadcast_shapes(wbar.shape, np.shape(speed), np.shape(s))
        wbar = np.broadcast_to(wbar, shape)
        speed = np.broadcast_to(np.asarray(speed, dtype=float), shape)
        s = np.broadcast_to(np.asarray(s, dtype=float), shape)

        def fun(x):
            rho = np.exp(x)
            th = self._thermo(rho, s)
            return 2 * wbar - th.phi0 + th.c - speed, th.c_rho * rho - th.c

        tol = 1e-12 * np.maximum(1.0, np.abs(speed))
        x = _solve_monotone(fun, np.zeros(shape), tol_f=tol)
        return np.exp(x)


def _check_density(rho):
    if np.any(~(rho > 0)):
        raise NonPositiveDensity(f"density must be positive (min {np.nanmin(rho):.3e})")


def _check_sound_speed(c):
    if np.any(~(c > 0)):
        raise NonPositiveSoundSpeed("sound speed squared is not positive")


class Polytropic(EquationOfState):
    """p = rho**gamma * A(s) / gamma, so c**2 = rho**(gamma - 1) * A(s).

    Uses the constant-free antiderivative phi0 = 2 c / (gamma - 1).
    """

    def __init__(self, gamma: float, factor: EntropyFactor | None = None):
        if not gamma > 1:
            raise ValueError("polytropic exponent must exceed 1")
        self.gamma = float(gamma)
        self.factor = factor if factor is not None else ConstFactor(1.0)

    def __repr__(self):
        return f"Polytropic(gamma={self.gamma}, factor={self.factor!r})"

    def sound_speed(self, rho, s):
        a = self.factor.value(s)
        return np.sqrt(np.asarray(rho, dtype=float) ** (self.gamma - 1) * a)

    def phi0(self, rho, s):
        return 2.0 * self.sound_speed(rho, s) / (self.gamma - 1)

    def _thermo(self, rho, s):
        g = self.gamma
        a, a1, a2 = self.factor.value(s), self.factor.d1(s), self.factor.d2(s)
        if np.any(~(a > 0)):
            raise NonPositiveSoundSpeed("entropy factor A(s) must be positive")
        rg = rho**g
        c = np.sqrt(rho ** (g - 1) * a)
        c_s = c * a1 / (2 * a)
        phi0_s = 2 * c_s / (g - 1)
        return Thermo(
            p=rg * a / g,
            c=c,
            phi0=2 * c / (g - 1),
            psi0=c * a1 / (a * g * (g - 1)),
            phi0_s=phi0_s,
            p_s=rg * a1 / g,
            p_ss=rg * a2 / g,
            p_srho=rho ** (g - 1) * a1,
            c_rho=(g - 1) * c / (2 * rho),
            c_s=c_s,
        )

    def density_from_phi0(self, phi0, s):
        phi0 = np.asarray(phi0, dtype=float)
        if np.any(~(phi0 > 0)):
            raise OutOfRange("w + wbar must be positive for a polytropic gas")
        c = 0.5 * (self.gamma - 1) * phi0
        return (c**2 / self.factor.value(s)) ** (1.0 / (self.gamma - 1))


class GeneralEOS(EquationOfState):
    """Equation of state given by user callables for p, c and their partials.

    The potentials are integrated numerically from ``rho_ref``: with
    ``x = log(rho)`` one has ``phi0 = int c dx`` and
    ``phi0_s = int c_s dx``.
    """

    def __init__(
        self,
        pressure: Callable,
        sound_speed: Callable,
        p_s: Callable,
        p_ss: Callable,
        p_srho: Callable,
        c_rho: Callable,
        c_s: Callable,
        rho_ref: float = 1.0,
    ):
        self._p = pressure
        self._c = sound_speed
        self._p_s = p_s
        self._p_ss = p_ss
        self._p_srho = p_srho
        self._c_rho = c_rho
        self._c_s = c_s
        self.rho_ref = float(rho_ref)

    def sound_speed(self, rho, s):
        return np.asarray(self._c(rho, s), dtype=float)

    def _integrate_log(self, integrand, rho, s):
        rho = np.asarray(rho, dtype=float)
        s = np.broadcast_to(np.asarray(s, dtype=float), rho.shape)
        a = math.log(self.rho_ref)
        span = np.log(rho) - a

        def f(tau):
            return np.asarray(integrand(np.exp(a + tau * span), s), dtype=float) * span

        val, _ = quad_vec(f, 0.0, 1.0, epsabs=1e-14, epsrel=1e-13, norm="max")
        return val

    def phi0(self, rho, s):
        return self._integrate_log(self._c, rho, s)

    def _thermo(self, rho, s):
        rho, s = np.broadcast_arrays(rho, s)
        c = self.sound_speed(rho, s)
        p_s = np.asarray(self._p_s(rho, s), dtype=float)
        phi0_s = self._integrate_log(self._c_s, rho, s)
        return Thermo(
            p=np.asarray(self._p(rho, s), dtype=float),
            c=c,
            phi0=self.phi0(rho, s),
            psi0=phi0_s - p_s / (c * rho),
            phi0_s=phi0_s,
            p_s=p_s,
            p_ss=np.asarray(self._p_ss(rho, s), dtype=float),
            p_srho=np.asarray(self._p_srho(rho, s), dtype=float),
            c_rho=np.asarray(self._c_rho(rho, s), dtype=float),
            c_s=np.asarray(self._c_s(rho, s), dtype=float),
        )


# ---------------------------------------------------------------------------
# scalar root finding
# ---------------------------------------------------------------------------


def _solve_monotone(fun, x0, tol_f, maxiter=200):
    """Vectorised safeguarded Newton for a strictly monotone ``fun``.

    ``fun(x)`` returns ``(f, df)``.  A bracket is grown geometrically around
    ``x0``; Newton steps leaving the bracket fall back to bisection.
    """
    x0 = np.asarray(x0, dtype=float)
    f0, df0 = fun(x0)
    sign = np.sign(df0)
    if np.any(sign == 0) or np.any(~np.isfinite(df0)):
        raise NonMonotone("constraint derivative vanishes at the initial guess")

    def g(x):
        f, df = fun(x)
        return sign * f, sign * df

    lo, hi = x0.copy(), x0.copy()
    glo = ghi = sign * f0
    step = np.ones_like(x0)
    for _ in range(80):
        need_lo, need_hi = glo > 0, ghi < 0
        if not (need_lo.any() or need_hi.any()):
            break
        lo = np.where(need_lo, lo - step, lo)
        hi = np.where(need_hi, hi + step, hi)
        step = 2 * step
        glo = np.where(need_lo, g(lo)[0], glo)
        ghi = np.where(need_hi, g(hi)[0], ghi)
    else:
        raise NoRoot("could not bracket a root")

    for end in (lo, hi):
        if np.any(g(end)[1] <= 0):
            raise NonMonotone("constraint is not monotone across the bracket")

    x = np.clip(x0, lo, hi)
    for _ in range(maxiter):
        gx, dg = g(x)
        done = np.abs(gx) <= tol_f
        lo = np.where(gx < 0, x, lo)
        hi = np.where(gx > 0, x, hi)
        step = gx / dg
        xn = x - step
        bad = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi)
        xn = np.where(bad, 0.5 * (lo + hi), xn)
        tiny = np.abs(xn - x) <= 4 * np.finfo(float).eps * (1 + np.abs(x))
        x = np.where(done, x, xn)
        if np.all(done | tiny):
            if np.any(dg <= 0):
                raise NonMonotone("constraint is not monotone at the root")
            return x
    raise NonConvergence("safeguarded Newton did not converge")


# ---------------------------------------------------------------------------
# Riemann invariants
# ---------------------------------------------------------------------------


@dataclass
class RiemannState:
    """Riemann-invariant description of a state on a surface.

    ``vslash`` holds chart components of the tangential velocity and is
    carried through unchanged (it may be ``None``).
    """

    w: np.ndarray
    wbar: np.ndarray
    vslash: np.ndarray | None
    s: np.ndarray


def eval_thermo(eos: EquationOfState, rho, s) -> Thermo:
    """Thermodynamic bundle at (rho, s); raises on non-physical states."""
    return eos.thermo(rho, s)


def riemann_from_state(eos: EquationOfState, rho, v_normal, vslash, s) -> RiemannState:
    """Map (rho, v_T, vslash, s) to the invariants (w, wbar, vslash, s)."""
    th = eos.thermo(rho, s)
    v_normal = np.asarray(v_normal, dtype=float)
    return RiemannState(
        w=_out(0.5 * (th.phi0 + v_normal)),
        wbar=_out(0.5 * (th.phi0 - v_normal)),
        vslash=vslash,
        s=_out(s),
    )


def state_from_riemann(eos: EquationOfState, state: RiemannState):
    """Inverse of :func:`riemann_from_state`: returns (rho, v_T, vslash, s)."""
    w = np.asarray(state.w, dtype=float)
    wbar = np.asarray(state.wbar, dtype=float)
    rho = eos.density_from_phi0(w + wbar, state.s)
    return _out(rho), _out(w - wbar), state.vslash, _out(state.s)


def solve_w_given_wbar(eos: EquationOfState, wbar, speed, s):
    """Solve (-v_T + c)(w, wbar, s) = speed for w.

    Polytropic gases use the linear closed form
    ``w = (2 speed - (gamma + 1) wbar) / (gamma - 3)``.
    """
    wbar = np.asarray(wbar, dtype=float)
    speed = np.asarray(speed, dtype=float)
    if isinstance(eos, Polytropic):
        g = eos.gamma
        if g == 3:
            raise NonMonotone("the closure is degenerate for gamma = 3")
        w = (2 * speed - (g + 1) * wbar) / (g - 3)
        if np.any(~((g - 1) * (w + wbar) > 0)):
            raise NoRoot("closure gives a non-positive sound speed")
        return _out(w)
    rho = eos.closure_density(wbar, speed, s)
    return _out(eos.phi0(rho, s) - wbar)


def closure_residual(eos: EquationOfState, w, wbar, speed, s):
    """(-v_T + c) - speed evaluated from invariants."""
    rho, vn, _, _ = state_from_riemann(eos, RiemannState(w, wbar, None, s))
    return _out(-np.asarray(vn) + eos.sound_speed(rho, s) - speed)


def eos_from_spec(spec: dict) -> EquationOfState:
    """Build an equation of state from a config mapping.

    ``{"kind": "polytropic", "gamma": 2, "entropy_factor": {"const": 1}}`` or
    ``{"kind": "user", "factory": "module:callable"}`` where the callable
    returns an :class:`EquationOfState`.
    """
    kind = spec.get("kind", "polytropic")
    if kind == "polytropic":
        return Polytropic(float(spec.get("gamma", 1.4)), entropy_factor_from_spec(spec.get("entropy_factor")))
    if kind == "user":
        import importlib

        mod, _, attr = str(spec["factory"]).partition(":")
        obj = getattr(importlib.import_module(mod), attr)
        eos = obj(**spec.get("args", {}))
        if not isinstance(eos, EquationOfState):
            raise TypeError("user factory must return an EquationOfState")
        return eos
    raise ValueError(f"unknown eos kind {kind!r}")
