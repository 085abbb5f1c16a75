"""Order-zero construction of characteristic data on the cone.

Pipeline: check the corner data against the characteristic condition,
integrate the transport equation for ``wbar`` along the generators, recover
``w`` from the speed constraint ``-v_T + c = V`` and assemble
``(rho, v, s)`` in Cartesian components.

Time stepping is classical RK4 on the fixed angular grid.  In chart
coordinates the generator is ``L = d_t + lam^A d_A``, so the advective term
``lam^A d_A wbar`` is subtracted from the transport right-hand side.
"""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
from scipy.special import lpmv

from .eos import EquationOfState, eval_thermo, solve_w_given_wbar
from .errors import (
    CharConeError,
    ClosureFailure,
    CornerIncompatible,
    NoRoot,
    NotTangent,
    SoundSpeedFloor,
    StepRejected,
)
from .geometry import AngularGrid, ConeChart, SurfaceFrame, frame_at, surface_divergence, tangential_derivative

log = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# free-data expression catalog
# ---------------------------------------------------------------------------


class FreeField(ABC):
    """Scalar field on the cone with analytic first partials.

    ``evaluate`` returns ``(value, d_t, d_1, d_2)``.
    """

    @abstractmethod
    def evaluate(self, t, th1, th2): ...

    def __add__(self, other):
        return SumField((self, other))


@dataclass(frozen=True)
class ConstField(FreeField):
    a: float = 0.0

    def evaluate(self, t, th1, th2):
        t, th1, th2 = np.broadcast_arrays(t, th1, th2)
        z = np.zeros(t.shape)
        return z + self.a, z, z, z


@dataclass(frozen=True)
class HarmonicField(FreeField):
    """``amplitude * (1 + rate t) * P_l^m(cos th2) * cos(m th1)`` on band charts."""

    l: int
    m: int
    amplitude: float
    rate: float = 0.0

    def evaluate(self, t, th1, th2):
        t, th1, th2 = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (t, th1, th2)))
        l, m = self.l, self.m
        x = np.cos(th2)
        p = lpmv(m, l, x)
        pm1 = lpmv(m, l - 1, x) if l - 1 >= m else np.zeros_like(x)
        # (x^2 - 1) dP/dx = l x P_l^m - (l + m) P_{l-1}^m
        dp_dx = (l * x * p - (l + m) * pm1) / (x**2 - 1)
        dp = -np.sin(th2) * dp_dx
        time = 1 + self.rate * t
        ang, dang = np.cos(m * th1), -m * np.sin(m * th1)
        a = self.amplitude
        return a * time * p * ang, a * self.rate * p * ang, a * time * p * dang, a * time * dp * ang


@dataclass(frozen=True)
class FourierField(FreeField):
    """``amplitude * (1 + rate t) * cos(k1 th1 + k2 th2 + phase)``."""

    k1: float
    k2: float
    amplitude: float
    phase: float = 0.0
    rate: float = 0.0

    def evaluate(self, t, th1, th2):
        t, th1, th2 = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (t, th1, th2)))
        arg = self.k1 * th1 + self.k2 * th2 + self.phase
        time = 1 + self.rate * t
        a = self.amplitude
        cs, sn = np.cos(arg), np.sin(arg)
        return a * time * cs, a * self.rate * cs, -a * time * self.k1 * sn, -a * time * self.k2 * sn


@dataclass(frozen=True)
class PolynomialField(FreeField):
    """``sum coeff * t**a * th1**b * th2**c`` with terms ``(a, b, c, coeff)``."""

    terms: tuple

    def evaluate(self, t, th1, th2):
        t, th1, th2 = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (t, th1, th2)))
        out = [np.zeros(t.shape) for _ in range(4)]
        for a, b, c, k in self.terms:
            a, b, c = int(a), int(b), int(c)
            ta, ub, vc = t**a, th1**b, th2**c
            out[0] += k * ta * ub * vc
            if a:
                out[1] += k * a * t ** (a - 1) * ub * vc
            if b:
                out[2] += k * b * ta * th1 ** (b - 1) * vc
            if c:
                out[3] += k * c * ta * ub * th2 ** (c - 1)
        return tuple(out)


@dataclass(frozen=True)
class SumField(FreeField):
    parts: tuple

    def evaluate(self, t, th1, th2):
        vals = [p.evaluate(t, th1, th2) for p in self.parts]
        return tuple(sum(v[i] for v in vals) for i in range(4))


def field_from_spec(spec) -> FreeField:
    """Build a free field from a catalog entry (or a list of them, summed)."""
    if spec is None:
        return ConstField(0.0)
    if isinstance(spec, (int, float)):
        return ConstField(float(spec))
    if isinstance(spec, list):
        return SumField(tuple(field_from_spec(s) for s in spec))
    (kind, arg), = spec.items()
    if kind == "const":
        return ConstField(float(arg))
    if kind == "harmonic":
        return HarmonicField(int(arg["l"]), int(arg["m"]), float(arg["amplitude"]), float(arg.get("rate", 0.0)))
    if kind == "fourier":
        return FourierField(
            float(arg.get("k1", 0)), float(arg.get("k2", 0)), float(arg["amplitude"]),
            float(arg.get("phase", 0.0)), float(arg.get("rate", 0.0)),
        )
    if kind == "polynomial":
        return PolynomialField(tuple(tuple(map(float, term)) for term in arg))
    raise ValueError(f"unknown free-data expression {spec!r}")


# ---------------------------------------------------------------------------
# problem description
# ---------------------------------------------------------------------------


@dataclass
class CornerData:
    """Data on the initial sphere, taken from the interior Cauchy data.

    ``v`` is the Cartesian velocity; if only ``v_normal`` is given the
    tangential part is assumed to agree with the free data.  ``T_rho`` is the
    inward normal derivative of the density and ``kappa`` the initial
    foliation density (1 for the signed-distance foliation).  ``L_s`` is an
    optional generator derivative of the entropy for first-order
    compatibility checks.
    """

    rho: float | np.ndarray
    s: float | np.ndarray = 0.0
    v_normal: float | np.ndarray | None = None
    v: np.ndarray | None = None
    T_rho: float | np.ndarray = 0.0
    kappa: float | np.ndarray = 1.0
    T_X: np.ndarray | None = None
    L_s: float | np.ndarray | None = None


def matched_corner(eos, chart, free: "FreeData", shape, rho, T_rho=0.0, kappa=1.0) -> CornerData:
    """Corner data whose normal velocity makes the initial sphere characteristic.

    Entropy is read from the free data at ``t = 0``; ``v_normal = c - V``.
    """
    grid = chart.grid(*shape)
    th1, th2 = grid.mesh()
    s = free.s.evaluate(0.0, th1, th2)[0]
    rho = np.broadcast_to(np.asarray(rho, dtype=float), s.shape)
    c = eval_thermo(eos, rho, s).c
    V = chart.frame_on(0.0, th1, th2).speed
    return CornerData(rho=np.array(rho), s=s, v_normal=c - V, T_rho=T_rho, kappa=kappa)


@dataclass
class FreeData:
    """Entropy and tangential velocity (chart components) on the cone."""

    s: FreeField
    vslash: tuple = (ConstField(0.0), ConstField(0.0))


@dataclass
class ConeProblem:
    eos: EquationOfState
    chart: ConeChart
    free: FreeData
    corner: CornerData
    shape: tuple = (32, 32)
    t_final: float = 1.0
    nt: int = 100
    corner_tol: float = 1e-6
    c_floor_factor: float = 1e-6
    kappa_floor_factor: float = 1e-6
    monitor_every: int = 0
    error_budget: float | None = None

    @property
    def dt(self) -> float:
        return self.t_final / self.nt

    def grid(self) -> AngularGrid:
        return self.chart.grid(*self.shape)


# ---------------------------------------------------------------------------
# per-time background: frame, free data, generator
# ---------------------------------------------------------------------------


@dataclass
class Background:
    """Everything known a priori at one time: geometry and free data."""

    t: float
    frame: SurfaceFrame
    s: np.ndarray
    s_t: np.ndarray
    ds: np.ndarray
    vs: np.ndarray  # (2, ...) chart components
    vs_t: np.ndarray
    dvs: np.ndarray  # [B, A] = d_B vs^A
    vs_cart: np.ndarray  # (3, ...)
    lam: np.ndarray  # (2, ...)
    Ls: np.ndarray
    aligned: bool


def generator_field(frame: SurfaceFrame, vs_cart: np.ndarray, tol: float = 1e-10):
    """Chart components ``lam`` of the generator's spatial part.

    Solves ``E_t + lam^A X_A = vslash - V T``.  The normal component of that
    equation holds identically when ``V`` is the normal speed; its defect is
    checked and reported as :class:`NotTangent`.
    """
    rel = vs_cart - frame.E_t
    lam = np.einsum("ab...,bi...,i...->a...", frame.gs_inv, frame.X, rel)
    resid = vs_cart - frame.speed * frame.T - frame.E_t - np.einsum("a...,ai...->i...", lam, frame.X)
    scale = 1.0 + np.max(np.abs(frame.E_t)) + np.max(np.abs(vs_cart))
    defect = float(np.max(np.abs(resid))) if resid.size else 0.0
    if defect > tol * scale:
        raise NotTangent(f"generator has a normal defect {defect:.3e}")
    return lam, defect


class BackgroundCache:
    """Memoises :class:`Background` by time (RK stages reuse the same times)."""

    def __init__(self, problem: ConeProblem, size: int = 6):
        self.p = problem
        self.grid = problem.grid()
        self.th1, self.th2 = self.grid.mesh()
        self._store: dict[float, Background] = {}
        self._order: list[float] = []
        self._size = size

    def __call__(self, t: float) -> Background:
        key = round(float(t), 12)
        hit = self._store.get(key)
        if hit is not None:
            return hit
        bg = self._build(key)
        self._store[key] = bg
        self._order.append(key)
        if len(self._order) > self._size:
            self._store.pop(self._order.pop(0), None)
        return bg

    def _build(self, t: float) -> Background:
        fr = self.p.chart.frame_on(t, self.th1, self.th2)
        s, s_t, s1, s2 = self.p.free.s.evaluate(t, self.th1, self.th2)
        comps = [f.evaluate(t, self.th1, self.th2) for f in self.p.free.vslash]
        vs = np.stack([c[0] for c in comps])
        vs_t = np.stack([c[1] for c in comps])
        dvs = np.stack([np.stack([c[2] for c in comps]), np.stack([c[3] for c in comps])])
        vs_cart = np.einsum("a...,ai...->i...", vs, fr.X)
        lam, _ = generator_field(fr, vs_cart)
        # analytic zeros come out at rounding level; snap them
        aligned = bool(np.max(np.abs(lam)) <= 1e-13 * (1.0 + np.max(np.abs(fr.E_t))))
        if aligned:
            lam = np.zeros_like(lam)
        ds = np.stack([s1, s2])
        Ls = s_t + np.einsum("a...,a...->...", lam, ds)
        return Background(t, fr, s, s_t, ds, vs, vs_t, dvs, vs_cart, lam, Ls, aligned)


def advect(field: np.ndarray, lam: np.ndarray, grid: AngularGrid, aligned: bool) -> np.ndarray:
    """``lam^A d_A field`` (zero without work when the chart is aligned)."""
    if aligned:
        return np.zeros_like(field)
    return lam[0] * tangential_derivative(field, grid, 0) + lam[1] * tangential_derivative(field, grid, 1)


# ---------------------------------------------------------------------------
# corner gate
# ---------------------------------------------------------------------------


@dataclass
class CornerReport:
    passed: bool
    null_residual: float
    null_location: tuple
    data_mismatch: float
    data_location: tuple
    jet_mismatch: float
    tol: float
    wbar0: np.ndarray = field(repr=False, default=None)
    v_normal0: np.ndarray = field(repr=False, default=None)

    @property
    def message(self) -> str:
        if self.passed:
            return "corner data compatible"
        if self.null_residual > self.tol:
            th = ", ".join(f"{x:.4f}" for x in self.null_location)
            return f"characteristic condition violated by {self.null_residual:.3e} at theta=({th})"
        if self.data_mismatch > self.tol:
            th = ", ".join(f"{x:.4f}" for x in self.data_location)
            return f"free data differ from corner values by {self.data_mismatch:.3e} at theta=({th}) (k=0)"
        return f"generator derivatives differ from corner values by {self.jet_mismatch:.3e} (k=1)"


def _argmax_location(err, th1, th2):
    k = np.unravel_index(np.argmax(err), err.shape)
    return float(th1[k]), float(th2[k])


def validate_corner(problem: ConeProblem, tol: float | None = None, raise_on_fail: bool = True) -> CornerReport:
    """Check ``-v_T + c = V`` and agreement of free data with the corner values.

    Raises :class:`CornerIncompatible` carrying the worst residual and its
    angular location unless ``raise_on_fail`` is false.
    """
    tol = problem.corner_tol if tol is None else tol
    bg = BackgroundCache(problem)(0.0)
    fr = bg.frame
    shape = fr.speed.shape
    corner = problem.corner
    rho = np.broadcast_to(np.asarray(corner.rho, dtype=float), shape)
    s0 = np.broadcast_to(np.asarray(corner.s, dtype=float), shape)
    data_err = np.abs(bg.s - s0)
    if corner.v is not None:
        v = np.asarray(corner.v, dtype=float)
        v = v.reshape((3,) + (1,) * len(shape)) if v.ndim == 1 else v
        v = np.broadcast_to(v, (3,) + shape)
        vn = np.einsum("i...,i...->...", v, fr.T)
        tang = v - vn * fr.T
        data_err = np.maximum(data_err, np.max(np.abs(tang - bg.vs_cart), axis=0))
    else:
        vn = np.broadcast_to(np.asarray(0.0 if corner.v_normal is None else corner.v_normal, dtype=float), shape)
    th = eval_thermo(problem.eos, rho, s0)
    null = np.abs(-vn + th.c - fr.speed)
    jet = 0.0
    if corner.L_s is not None:
        jet = float(np.max(np.abs(bg.Ls - np.asarray(corner.L_s, dtype=float))))
    g = BackgroundCache(problem)
    th1, th2 = g.th1, g.th2
    rep = CornerReport(
        passed=bool(null.max() <= tol and data_err.max() <= tol and jet <= tol),
        null_residual=float(null.max()),
        null_location=_argmax_location(null, th1, th2),
        data_mismatch=float(data_err.max()),
        data_location=_argmax_location(data_err, th1, th2),
        jet_mismatch=jet,
        tol=tol,
        wbar0=0.5 * (th.phi0 - vn),
        v_normal0=np.array(vn),
    )
    if not rep.passed and raise_on_fail:
        kind = "null" if rep.null_residual > tol else ("data" if rep.data_mismatch > tol else "jet")
        loc = rep.null_location if kind == "null" else rep.data_location
        raise CornerIncompatible(rep.message, residual=max(rep.null_residual, rep.data_mismatch, jet), location=loc, kind=kind)
    return rep


# ---------------------------------------------------------------------------
# order-zero transport
# ---------------------------------------------------------------------------


@dataclass
class OrderZero:
    """Closure output at one time level."""

    wbar: np.ndarray
    w: np.ndarray
    rho: np.ndarray
    v_normal: np.ndarray
    c: np.ndarray
    psi0: np.ndarray
    rhs: np.ndarray  # L(wbar)


def closure(problem: ConeProblem, bg: Background, wbar: np.ndarray) -> tuple:
    eos = problem.eos
    try:
        w = solve_w_given_wbar(eos, wbar, bg.frame.speed, bg.s)
        rho = eos.density_from_phi0(w + wbar, bg.s)
        th = eval_thermo(eos, rho, bg.s)
    except CharConeError as exc:
        raise ClosureFailure(f"closure failed at t={bg.t:.6g}: {exc}") from exc
    return np.asarray(w), np.asarray(rho), th


def transport_rhs(problem: ConeProblem, bg: Background, wbar: np.ndarray) -> OrderZero:
    """Right-hand side of ``L(wbar)`` with the closure applied."""
    fr = bg.frame
    w, rho, th = closure(problem, bg, wbar)
    c = th.c
    divv = np.einsum("aa...->...", bg.dvs) + np.einsum("aab...,b...->...", fr.christoffel, bg.vs)
    theta_vv = np.einsum("ab...,a...,b...->...", fr.theta, bg.vs, bg.vs)
    v_speed = np.einsum("a...,a...->...", bg.vs, fr.dspeed)
    V = fr.speed
    bracket = c * divv + fr.tr_theta * c**2 - c * fr.tr_theta * V + theta_vv + v_speed
    rhs = -0.5 * bracket + 0.5 * th.psi0 * bg.Ls
    return OrderZero(wbar, w, rho, w - wbar, c, th.psi0, rhs)


def rk4_step(f, t, y, dt, k1=None):
    if k1 is None:
        k1 = f(t, y)
    k2 = f(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass
class ConeRun:
    """Time levels of the construction on the angular grid.

    ``fields`` maps a name to an array whose leading axis is the time level.
    ``status`` is ``"complete"`` or ``"truncated"``; in the latter case
    ``stop_label`` names the floor and ``stop_time`` estimates the crossing.
    """

    problem: ConeProblem
    times: np.ndarray
    fields: dict
    status: str = "complete"
    stop_label: str | None = None
    stop_time: float | None = None
    step_error: float = 0.0
    corner: CornerReport | None = None
    notes: list = field(default_factory=list)

    @property
    def levels(self) -> int:
        return len(self.times)

    def truncate(self, n_levels: int):
        self.times = self.times[:n_levels]
        self.fields = {k: v[:n_levels] for k, v in self.fields.items()}


def integrate_wbar(problem: ConeProblem, corner: CornerReport | None = None, check_corner: bool = True) -> ConeRun:
    """Integrate the ``wbar`` transport equation over ``[0, t_final]``.

    Stores ``wbar, w, rho, v_normal, c`` and ``L_wbar`` on every level.  A
    sound-speed floor crossing truncates the run; the returned run then has
    ``status == "truncated"`` and contains only the accepted levels.
    """
    if corner is None:
        corner = validate_corner(problem, raise_on_fail=check_corner)
    grid = problem.grid()
    cache = BackgroundCache(problem)
    dt, nt = problem.dt, problem.nt
    wbar = np.array(corner.wbar0, dtype=float)
    c_floor = problem.c_floor_factor * float(np.min(eval_thermo(problem.eos, np.broadcast_to(
        np.asarray(problem.corner.rho, dtype=float), wbar.shape), np.broadcast_to(
        np.asarray(problem.corner.s, dtype=float), wbar.shape)).c))

    def f(t, y):
        bg = cache(t)
        out = transport_rhs(problem, bg, y)
        if np.any(~(out.c > c_floor)):
            raise SoundSpeedFloor(f"sound speed reached the floor near t={t:.6g}", time=t)
        return out.rhs - advect(y, bg.lam, grid, bg.aligned)

    names = ("wbar", "w", "rho", "v_normal", "c", "L_wbar", "s", "speed")
    store = {k: np.empty((nt + 1,) + wbar.shape) for k in names}
    for k in ("v", "vslash", "position", "T"):
        store[k] = np.empty((nt + 1, 3) + wbar.shape)
    store["lam"] = np.empty((nt + 1, 2) + wbar.shape)

    def record(n, y):
        bg = cache(n * dt)
        o = transport_rhs(problem, bg, y)
        for k, val in zip(names, (o.wbar, o.w, o.rho, o.v_normal, o.c, o.rhs, bg.s, bg.frame.speed)):
            store[k][n] = val
        store["v"][n] = o.v_normal * bg.frame.T + bg.vs_cart
        store["vslash"][n] = bg.vs_cart
        store["position"][n] = bg.frame.position
        store["T"][n] = bg.frame.T
        store["lam"][n] = bg.lam
        return o

    run = ConeRun(problem, dt * np.arange(nt + 1), store, corner=corner)
    o = record(0, wbar)
    history = [wbar]
    for n in range(nt):
        t = n * dt
        try:
            k1 = o.rhs - advect(wbar, cache(t).lam, grid, cache(t).aligned)
            new = rk4_step(f, t, wbar, dt, k1)
            o = record(n + 1, new)
            if np.any(~(o.c > c_floor)):
                raise SoundSpeedFloor(f"sound speed reached the floor near t={t + dt:.6g}", time=t + dt)
        except (SoundSpeedFloor, ClosureFailure) as exc:
            run.truncate(n + 1)
            run.status = "truncated"
            # a closure that only fails because c went non-positive is the floor
            floor_hit = isinstance(exc, SoundSpeedFloor) or isinstance(exc.__cause__, NoRoot)
            run.stop_label = SoundSpeedFloor.label if floor_hit else exc.label
            c_prev = store["c"][n]
            c_extrap = 2 * c_prev - store["c"][n - 1] if n > 0 else None
            run.stop_time = float(t + dt * _crossing_fraction(c_prev, c_extrap, c_floor))
            log.warning("order-zero run stopped: %s", exc)
            return run
        wbar = new
        history.append(wbar)
        if len(history) > 3:
            history.pop(0)
        if problem.monitor_every and (n + 1) % problem.monitor_every == 0 and n >= 1:
            est = _step_doubling(f, t - dt, history[-3], history[-1], dt)
            run.step_error = max(run.step_error, est)
            if problem.error_budget is not None and est > problem.error_budget:
                raise StepRejected(f"step-doubling estimate {est:.3e} exceeds budget {problem.error_budget:.3e}")
    return run


def _step_doubling(f, t0, y0, y_fine, dt):
    coarse = rk4_step(f, t0, y0, 2 * dt)
    return float(np.max(np.abs(coarse - y_fine))) / 15.0


def _crossing_fraction(prev, new, floor):
    """Fraction of a step at which ``prev`` reaches ``floor`` (linear model)."""
    if new is None or not np.all(np.isfinite(new)):
        return 1.0
    drop = prev - new
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(drop > 0, (prev - floor) / drop, np.inf)
    return float(np.clip(np.min(frac), 0.0, 1.0))


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def assemble_state(run: ConeRun) -> dict:
    """Cartesian fields on every stored level.

    Returns a mapping with ``position (K,3,..)``, ``rho``, ``v (K,3,..)``,
    ``s``, ``vslash (K,3,..)``, ``T (K,3,..)``, ``speed`` and
    ``null_residual``; ``v = v_T That + vslash``.
    """
    f = run.fields
    out = {k: f[k] for k in ("position", "rho", "v", "s", "vslash", "T", "speed")}
    out["null_residual"] = -f["v_normal"] + f["c"] - f["speed"]
    return out


# ---------------------------------------------------------------------------
# stored levels with high-order time interpolation
# ---------------------------------------------------------------------------


def fornberg_weights(x0: float, nodes: np.ndarray, order: int) -> np.ndarray:
    """Finite-difference weights for derivatives 0..order at ``x0``."""
    n = len(nodes)
    c = np.zeros((order + 1, n))
    c1, c4 = 1.0, nodes[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, order)
        c2, c5, c4 = 1.0, c4, nodes[i] - x0
        for j in range(i):
            c3 = nodes[i] - nodes[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


class LevelHistory:
    """Uniformly spaced time levels with local Lagrange interpolation.

    ``at(name, t, d)`` returns the ``d``-th time derivative (d <= 2) of the
    interpolant built on ``stencil`` nearest levels.
    """

    def __init__(self, times: np.ndarray, data: dict, stencil: int = 8):
        self.times = np.asarray(times, dtype=float)
        self.data = data
        self.stencil = min(stencil, len(self.times))
        self.t0 = self.times[0]
        self.dt = self.times[1] - self.times[0] if len(self.times) > 1 else 1.0
        self._wcache: dict[float, np.ndarray] = {}

    def _weights(self, t: float):
        n = len(self.times)
        m = self.stencil
        pos = (t - self.t0) / self.dt
        k = int(math.floor(pos + 1e-9))
        lo = min(max(k - m // 2 + 1, 0), n - m)
        idx = np.arange(lo, lo + m)
        # on uniform levels the weights only depend on the offset inside the stencil
        rel = round(pos - lo, 9)
        w = self._wcache.get(rel)
        if w is None:
            w = fornberg_weights(rel, np.arange(m, dtype=float), 2)
            w[1] /= self.dt
            w[2] /= self.dt**2
            if rel == round(rel):
                w[0] = 0.0
                w[0, int(rel)] = 1.0
            if len(self._wcache) > 64:
                self._wcache.clear()
            self._wcache[rel] = w
        return idx, w

    def at(self, name: str, t: float, d: int = 0) -> np.ndarray:
        idx, w = self._weights(float(t))
        arr = self.data[name]
        return np.tensordot(w[d], arr[idx[0]: idx[-1] + 1], axes=(0, 0))

    def with_field(self, name: str, values: np.ndarray) -> "LevelHistory":
        self.data[name] = values
        return self


def surface_divergence_of(frame: SurfaceFrame, comps: np.ndarray, grid: AngularGrid) -> np.ndarray:
    return surface_divergence(frame, comps, grid)
