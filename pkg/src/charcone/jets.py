"""First transversal jets on the cone.

The unknowns ``T_rho = That(rho)`` and ``kappa`` obey a closed transport
system along the generators.  Its right-hand side comes from writing the
wave operator applied to ``rho`` in two ways:

* the Euler-derived expression (quadratic in first derivatives plus an
  entropy Laplacian), and
* the null-frame decomposition, which contains ``L T(rho)`` linearly.

Equating the two isolates ``L T(rho)``.  The entropy Laplacian is eliminated
by computing the wave operator of ``s`` in the same two ways (``B(s) = 0``).
Cartesian derivatives are rebuilt from the frame ``(X_1, X_2, That)``; the
normal derivative of the velocity follows from the momentum equation
written with ``L = B - c That``.

Time derivatives of order-zero fields come from a high-order interpolant of
the stored order-zero levels (see :class:`LevelHistory`).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .acoustics import box_nullframe
from .construction import BackgroundCache, ConeRun, LevelHistory, rk4_step
from .eos import eval_thermo
from .errors import KappaFloor, MisalignedChart, MissingDerivative
from .geometry import AngularGrid, gradient, laplace_beltrami

log = logging.getLogger(__name__)


def _dot(a, b):
    return np.einsum("i...,i...->...", a, b)


def history_from_run(run: ConeRun, stencil: int = 8) -> LevelHistory:
    """Stored order-zero levels: ``rho, s, v, w, lam`` (Cartesian ``v``)."""
    f = run.fields
    data = {k: f[k] for k in ("rho", "s", "v", "w", "lam")}
    return LevelHistory(run.times, data, stencil=stencil)


# ---------------------------------------------------------------------------
# jet-independent data at one time
# ---------------------------------------------------------------------------


@dataclass
class JetBackground:
    t: float
    grid: AngularGrid
    frame: object
    aligned: bool
    lam: np.ndarray
    rho: np.ndarray
    s: np.ndarray
    v: np.ndarray
    drho: np.ndarray  # (2, ...)
    ds: np.ndarray
    dv: np.ndarray  # [A, i]
    Lrho: np.ndarray
    LLrho: np.ndarray
    Ls: np.ndarray
    LLs: np.ndarray
    Lv: np.ndarray  # (3, ...)
    lap_rho: np.ndarray
    lap_s: np.ndarray
    th: object
    dc: np.ndarray
    Lc: np.ndarray
    tr_k: np.ndarray
    T_s: np.ndarray
    w: np.ndarray
    Lw: np.ndarray


def _L_derivs(hist: LevelHistory, name: str, t: float, lam, lam_t, grid, aligned, second: bool, tangential=True):
    q = hist.at(name, t, 0)
    q_t = hist.at(name, t, 1)
    dq = gradient(q, grid) if tangential or not aligned else None
    if aligned:
        Lq = q_t
        LLq = hist.at(name, t, 2) if second else None
        return q, dq, Lq, LLq
    lam_b = lam.reshape(lam.shape[:1] + (1,) * (q.ndim - 2) + lam.shape[1:])
    Lq = q_t + np.sum(lam_b * dq, axis=0)
    LLq = None
    if second:
        q_tt = hist.at(name, t, 2)
        dq_t = gradient(q_t, grid)
        hess = np.stack([gradient(dq[0], grid), gradient(dq[1], grid)])
        dlam = gradient(lam, grid)  # [B, A]
        adv = lam_t + np.einsum("b...,ba...->a...", lam, dlam)
        LLq = (
            q_tt
            + 2 * np.einsum("a...,a...->...", lam, dq_t)
            + np.einsum("a...,b...,ab...->...", lam, lam, hess)
            + np.einsum("a...,a...->...", adv, dq)
        )
    return q, dq, Lq, LLq


def jet_background(problem, hist: LevelHistory, cache: BackgroundCache, t: float) -> JetBackground:
    grid = cache.grid
    bg = cache(t)
    fr = bg.frame
    aligned = bg.aligned
    lam = bg.lam
    lam_t = None if aligned else hist.at("lam", t, 1)
    rho, drho, Lrho, LLrho = _L_derivs(hist, "rho", t, lam, lam_t, grid, aligned, True)
    s, ds, Ls, LLs = _L_derivs(hist, "s", t, lam, lam_t, grid, aligned, True)
    v, dv, Lv, _ = _L_derivs(hist, "v", t, lam, lam_t, grid, aligned, False)
    w, _, Lw, _ = _L_derivs(hist, "w", t, lam, lam_t, grid, aligned, False, tangential=False)
    th = eval_thermo(problem.eos, rho, s)
    c = th.c
    dc = th.c_rho * drho + th.c_s * ds
    Lc = th.c_rho * Lrho + th.c_s * Ls
    # k(X_A, X_B) from tangential derivatives only
    XdV = np.einsum("bj...,aj...->ab...", fr.X, dv)  # [A, B] = X_B^j X_A(v^j)
    k_ab = (XdV + np.swapaxes(XdV, 0, 1)) / (2 * c)
    tr_k = np.einsum("ab...,ab...->...", fr.gs_inv, k_ab)
    return JetBackground(
        t=t, grid=grid, frame=fr, aligned=aligned, lam=lam,
        rho=rho, s=s, v=v, drho=drho, ds=ds, dv=dv,
        Lrho=Lrho, LLrho=LLrho, Ls=Ls, LLs=LLs, Lv=Lv,
        lap_rho=laplace_beltrami(fr, rho, grid, drho),
        lap_s=laplace_beltrami(fr, s, grid, ds),
        th=th, dc=dc, Lc=Lc, tr_k=tr_k, T_s=-Ls / c, w=w, Lw=Lw,
    )


# ---------------------------------------------------------------------------
# right-hand side
# ---------------------------------------------------------------------------


@dataclass
class JetTerms:
    """Quantities built from ``(T_rho, kappa)`` on top of the background."""

    T_rho: np.ndarray
    kappa: np.ndarray
    grad_rho: np.ndarray
    grad_s: np.ndarray
    T_v: np.ndarray
    T_c: np.ndarray
    L_kappa: np.ndarray
    zeta: np.ndarray  # lower index
    zeta_up: np.ndarray
    L_T_rho: np.ndarray
    LT_s: np.ndarray


def _cartesian(fr, d_tan, d_normal):
    """Cartesian gradient from chart derivatives and the normal derivative."""
    op = fr.omega_prime
    return op[:, 0] * d_tan[0] + op[:, 1] * d_tan[1] + op[:, 2] * d_normal


def first_jet_terms(jb: JetBackground, T_rho, kappa) -> JetTerms:
    """Evaluate the first-jet transport system at one time.

    Returns all intermediate jet quantities; ``L_T_rho`` and ``L_kappa`` are
    the generator derivatives of the unknowns.
    """
    if T_rho is None or kappa is None:
        raise MissingDerivative("first-jet right-hand side needs T_rho and kappa")
    fr, th = jb.frame, jb.th
    c, rho = th.c, jb.rho
    T = fr.T
    grad_rho = _cartesian(fr, jb.drho, T_rho)
    grad_s = _cartesian(fr, jb.ds, jb.T_s)
    # momentum equation: B v = -grad p / rho with B = L + c That
    T_v = (-(c / rho) * grad_rho - th.p_s / (c * rho) * grad_s - jb.Lv / c)
    # M[i, j] = d_i v^j
    op = fr.omega_prime
    M = (
        np.einsum("i...,j...->ij...", op[:, 0], jb.dv[0])
        + np.einsum("i...,j...->ij...", op[:, 1], jb.dv[1])
        + np.einsum("i...,j...->ij...", T, T_v)
    )
    div_v = np.einsum("ii...->...", M)
    tr_m2 = np.einsum("ij...,ji...->...", M, M)
    T_c = th.c_rho * T_rho + th.c_s * jb.T_s
    L_kappa = kappa * (-T_c + _dot(T, T_v))
    zeta = 0.5 * kappa * (
        np.einsum("aj...,j...->a...", jb.dv, T) + np.einsum("ai...,i...->a...", fr.X, T_v) - 2 * jb.dc
    )
    zeta_up = np.einsum("ab...,b...->a...", fr.gs_inv, zeta)

    B_rho = jb.Lrho + c * T_rho
    B_c = th.c_rho * B_rho  # B(s) = 0
    grad_c = th.c_rho * grad_rho + th.c_s * grad_s
    g_rr = -(B_rho**2) / c**2 + _dot(grad_rho, grad_rho)
    g_cr = -B_c * B_rho / c**2 + _dot(grad_c, grad_rho)

    # wave operator of s in the null frame, then the Euclidean Laplacian of s
    L_T_s = -jb.LLs / c + jb.Lc * jb.Ls / c**2
    LT_s = L_kappa * jb.T_s + kappa * L_T_s
    common = dict(c=c, kappa=kappa, Lc=jb.Lc, Lkappa=L_kappa, tr_k=jb.tr_k, tr_theta=fr.tr_theta, zeta_up=zeta_up)
    box_s = box_nullframe(LTf=LT_s, LLf=jb.LLs, Lf=jb.Ls, Tf=jb.T_s, Xf=jb.ds, lap_slash_f=jb.lap_s, **common)
    lap_s = box_s - _dot(grad_c, grad_s) / c

    euler_rhs = (
        rho / c**2 * (div_v**2 - tr_m2)
        + g_rr / rho
        - g_cr / c
        + ((th.p_s / rho - th.p_srho) * _dot(grad_rho, grad_s) - th.p_s * lap_s - th.p_ss * _dot(grad_s, grad_s)) / c**2
    )
    rest = box_nullframe(
        LTf=np.zeros_like(c), LLf=jb.LLrho, Lf=jb.Lrho, Tf=T_rho, Xf=jb.drho, lap_slash_f=jb.lap_rho, **common
    )
    mu = c * kappa
    LT_rho = 0.5 * mu * (rest - euler_rhs)
    L_T_rho = (LT_rho - L_kappa * T_rho) / kappa
    return JetTerms(T_rho, kappa, grad_rho, grad_s, T_v, T_c, L_kappa, zeta, zeta_up, L_T_rho, LT_s)


def first_jet_rhs(jb: JetBackground, T_rho, kappa, jt: JetTerms | None = None):
    """Chart-time derivatives ``(d_t T_rho, d_t kappa)`` on the grid."""
    jt = first_jet_terms(jb, T_rho, kappa) if jt is None else jt
    if jb.aligned:
        return jt.L_T_rho, jt.L_kappa
    adv = lambda f: jb.lam[0] * gradient(f, jb.grid)[0] + jb.lam[1] * gradient(f, jb.grid)[1]  # noqa: E731
    return jt.L_T_rho - adv(T_rho), jt.L_kappa - adv(kappa)


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------


@dataclass
class JetRun:
    """First jets on the accepted levels of an order-zero run."""

    order0: ConeRun
    times: np.ndarray
    fields: dict
    status: str = "complete"
    stop_label: str | None = None
    stop_time: float | None = None
    history: LevelHistory | None = field(default=None, repr=False)
    notes: list = field(default_factory=list)


def _corner_array(value, shape):
    return np.array(np.broadcast_to(np.asarray(value, dtype=float), shape))


class _BackgroundMemo:
    def __init__(self, problem, hist, size=4):
        self.problem, self.hist = problem, hist
        self.cache = BackgroundCache(problem, size=8)
        self.store: dict = {}
        self.order: list = []
        self.size = size

    def __call__(self, t):
        key = round(float(t), 12)
        if key not in self.store:
            self.store[key] = jet_background(self.problem, self.hist, self.cache, key)
            self.order.append(key)
            if len(self.order) > self.size:
                self.store.pop(self.order.pop(0))
        return self.store[key]


def integrate_first_jets(run: ConeRun, hist: LevelHistory | None = None) -> JetRun:
    """RK4 for ``(T_rho, kappa)`` on the order-zero levels, then derived jets.

    A ``kappa`` floor crossing truncates the run; the order-zero run is
    truncated to the same levels.
    """
    p = run.problem
    hist = hist or history_from_run(run)
    memo = _BackgroundMemo(p, hist)
    shape = run.fields["wbar"].shape[1:]
    P = _corner_array(p.corner.T_rho, shape)
    K = _corner_array(p.corner.kappa, shape)
    floor = p.kappa_floor_factor * float(np.min(K))
    dt = run.times[1] - run.times[0] if run.levels > 1 else 0.0
    n_levels = run.levels
    y = np.stack([P, K])

    def f(t, yy):
        d = first_jet_rhs(memo(t), yy[0], yy[1])
        return np.stack(d)

    levels = np.empty((n_levels, 2) + shape)
    levels[0] = y
    derived = []
    status, label, stop = "complete", None, None
    last = n_levels - 1
    for n in range(n_levels - 1):
        t = run.times[n]
        # the first RK stage and the derived jets of this level share one evaluation
        jb = memo(t)
        jt = first_jet_terms(jb, y[0], y[1])
        derived.append(derived_jets(jb, y[0], y[1], jt))
        with np.errstate(all="ignore"):
            k1 = np.stack(first_jet_rhs(jb, y[0], y[1], jt))
            new = rk4_step(f, t, y, dt, k1)
        # a step that loses more than half of kappa no longer resolves the collapse
        if not np.isfinite(new).all() or np.min(new[1]) <= max(floor, 0.0) or np.any(new[1] < 0.5 * y[1]):
            status, label = "truncated", KappaFloor.label
            # linear extrapolation of kappa to the floor from the last level
            rate = k1[1]
            with np.errstate(divide="ignore", invalid="ignore"):
                reach = np.where(rate < 0, (y[1] - floor) / -rate, np.inf)
            stop = float(t + min(float(np.min(reach)), run.times[-1] - t))
            last = n
            log.warning("kappa reached the floor near t=%.6g; run truncated", stop)
            break
        y = new
        levels[n + 1] = y
    if status == "complete":
        derived.append(derived_jets(memo(run.times[last]), *levels[last]))
    levels = levels[: last + 1]
    if status == "truncated":
        run.truncate(last + 1)
        run.status, run.stop_label, run.stop_time = status, label, stop
    fields = {"T_rho": levels[:, 0], "kappa": levels[:, 1]}
    for k in derived[0]:
        fields[k] = np.stack([d[k] for d in derived])
    return JetRun(run, run.times.copy(), fields, status, label, stop, hist)


def derived_jets(jb: JetBackground, T_rho, kappa, jt: JetTerms | None = None) -> dict:
    """``That v, That s, That^2 s, That(That), zeta, eta`` and the Cb residual."""
    jt = first_jet_terms(jb, T_rho, kappa) if jt is None else jt
    fr, th, grid = jb.frame, jb.th, jb.grid
    c = th.c
    mu = c * kappa
    dmu = gradient(mu, grid)
    eta = jt.zeta + dmu
    eta_up = np.einsum("ab...,b...->a...", fr.gs_inv, eta)
    dkappa = gradient(kappa, grid)
    T_That = -np.einsum("ab...,b...,ai...->i...", fr.gs_inv, dkappa, fr.X) / kappa
    T2_s = -(jt.LT_s + _dot(jt.zeta_up + eta_up, jb.ds) + kappa * jt.T_c * jb.T_s) / mu
    return {
        "T_v": jt.T_v,
        "T_s": jb.T_s,
        "T2_s": T2_s,
        "T_That": T_That,
        "zeta": jt.zeta,
        "eta": eta,
        "L_kappa": jt.L_kappa,
        "T_c": jt.T_c,
        "cb_residual": cb_residual(jb, jt, T_That, dkappa),
    }


def cb_residual(jb: JetBackground, jt: JetTerms, T_That, dkappa) -> np.ndarray:
    """Residual of the second Riemann transport equation (not used to build data).

    ``L w + 2 c That(w) + 1/2 [c div v/ + c tr theta v_T + 2 c v/(kappa)/kappa
    - v/(V) - theta(v/, v/)] - 1/2 Psi0 c That(s)``.
    """
    fr, th = jb.frame, jb.th
    c = th.c
    T = fr.T
    vn = _dot(jb.v, T)
    vs_cart = jb.v - vn * T
    vs = np.einsum("ab...,bi...,i...->a...", fr.gs_inv, fr.X, vs_cart)
    # tangential divergence of the tangential velocity field
    dvs = gradient(vs, jb.grid)  # [B, A]
    div_vs = np.einsum("aa...->...", dvs) + np.einsum("aab...,b...->...", fr.christoffel, vs)
    theta_vv = np.einsum("ab...,a...,b...->...", fr.theta, vs, vs)
    v_kappa = _dot(vs, dkappa)
    v_speed = _dot(vs, gradient(-vn + c, jb.grid))
    T_vn = _dot(T, jt.T_v) + _dot(jb.v, T_That)
    T_phi0 = c / jb.rho * jt.T_rho + th.phi0_s * jb.T_s
    T_w = 0.5 * (T_phi0 + T_vn)
    bracket = c * div_vs + c * fr.tr_theta * vn + 2 * c * v_kappa / jt.kappa - v_speed - theta_vv
    return jb.Lw + 2 * c * T_w + 0.5 * bracket - 0.5 * th.psi0 * c * jb.T_s


# ---------------------------------------------------------------------------
# frame jets
# ---------------------------------------------------------------------------


def default_frame_corner(run: ConeRun) -> np.ndarray:
    """``That(X_A)`` on the initial sphere for the distance foliation.

    With ``T = kappa That`` and ``[T, X_A] = 0`` off the cone at ``t = 0``,
    ``That(X_A^i) = X_A(That^i) + X_A(kappa) That^i / kappa``.
    """
    p = run.problem
    cache = BackgroundCache(p, size=1)
    fr = cache(0.0).frame
    shape = fr.speed.shape
    K = _corner_array(p.corner.kappa, shape)
    dK = gradient(K, cache.grid)
    return fr.dT + np.einsum("a...,i...->ai...", dK / K, fr.T)


def frame_jet_rhs(jb: JetBackground, jt: JetTerms, T_That, Q) -> np.ndarray:
    """``L That(X_A^i)`` for the aligned chart; ``Q[A, i] = That(X_A^i)``."""
    fr, c, grid = jb.frame, jb.th.c, jb.grid
    kappa = jt.kappa
    mu = c * kappa
    eta = jt.zeta + gradient(mu, grid)
    eta_up = np.einsum("ab...,b...->a...", fr.gs_inv, eta)
    zu = jt.zeta_up + eta_up
    # That(v^i - c That^i)
    Y = jt.T_v - np.einsum("...,i...->i...", jt.T_c, fr.T) - c * T_That
    dY = gradient(Y, grid)  # [A, i]
    # X_B(v^i - c That^i)
    dZ = jb.dv - np.einsum("b...,i...->bi...", jb.dc, fr.T) - c * fr.dT
    op = fr.omega_prime
    grad_Z = (
        np.einsum("j...,i...->ji...", op[:, 0], dZ[0])
        + np.einsum("j...,i...->ji...", op[:, 1], dZ[1])
        + np.einsum("j...,i...->ji...", op[:, 2], Y)
    )  # [j, i] = d_j Z^i
    rhs = (
        -np.einsum("b...,bai...->ai...", zu, fr.E_AB) / kappa
        + dY
        - jt.L_kappa / kappa * Q
        + np.einsum("aj...,ji...->ai...", Q - fr.dT, grad_Z)
    )
    return rhs


def integrate_frame_jets(jr: JetRun, corner: np.ndarray | None = None) -> np.ndarray:
    """Integrate the linear system for ``That(X_A^i)`` over the jet levels.

    Requires a chart whose time lines are the generators (``lam = 0``), since
    ``X_A`` are then the Lie-transported frame vectors.
    """
    run = jr.order0
    p = run.problem
    memo = _BackgroundMemo(p, jr.history)
    if not all(memo(t).aligned for t in (jr.times[0], jr.times[-1])):
        raise MisalignedChart("frame jets need a chart whose time lines are the generators")
    jets_hist = LevelHistory(jr.times, {"T_rho": jr.fields["T_rho"], "kappa": jr.fields["kappa"]}, jr.history.stencil)
    Q = default_frame_corner(run) if corner is None else np.array(corner, dtype=float)
    dt = jr.times[1] - jr.times[0] if len(jr.times) > 1 else 0.0

    def f(t, q):
        jb = memo(t)
        if not jb.aligned:
            raise MisalignedChart("frame jets need a chart whose time lines are the generators")
        P, K = jets_hist.at("T_rho", t), jets_hist.at("kappa", t)
        jt = first_jet_terms(jb, P, K)
        T_That = -np.einsum("ab...,b...,ai...->i...", jb.frame.gs_inv, gradient(K, jb.grid), jb.frame.X) / K
        return frame_jet_rhs(jb, jt, T_That, q)

    out = np.empty((len(jr.times),) + Q.shape)
    out[0] = Q
    for n in range(len(jr.times) - 1):
        Q = rk4_step(f, jr.times[n], Q, dt)
        out[n + 1] = Q
    jr.fields["T_X"] = out
    return out
