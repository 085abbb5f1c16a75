"""Run configuration: YAML grammar, validation and problem assembly.

A config is a YAML mapping with these keys (all optional unless noted)::

    eos:        {kind: polytropic, gamma: 2.0, entropy_factor: {const: 1.0}}
    chart:      {kind: expanding_sphere, r0: 1.0, rate: 1.0}        # required
    free_data:  {s: 0.0, vslash: [0.0, 0.0]}
    corner:     {rho: 1.0, v_normal: matched, T_rho: 0.0, kappa: 1.0}  # rho required
    grid:       {n1: 32, n2: 32, nt: 1000}
    t_final:    1.0
    order:      0
    tolerances: {corner: 1.0e-6, c_floor: 1.0e-6, kappa_floor: 1.0e-6}
    output:     {stride: auto, figures: true}
    spherical:  {...}   # only for `oracle spherical` and `cross-check`

``corner.v_normal`` is a number or ``matched`` (chosen so that the initial
sphere is characteristic); ``corner.v`` may give the Cartesian velocity
instead.  ``corner.s`` defaults to the free entropy at ``t = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .construction import ConeProblem, CornerData, FreeData, field_from_spec, matched_corner
from .eos import EquationOfState, eos_from_spec
from .errors import ConfigError
from .geometry import ConeChart, chart_from_spec
from .oracles import Profile, SphericalSetup

TOP_KEYS = {"eos", "chart", "free_data", "corner", "grid", "t_final", "order", "tolerances", "output", "spherical"}
MIN_PERIODIC = 8


@dataclass
class Tolerances:
    corner: float = 1e-6
    c_floor: float = 1e-6
    kappa_floor: float = 1e-6


@dataclass
class OutputOptions:
    stride: int | None = None  # None: about 50 levels plus the last
    figures: bool = True


@dataclass
class SphericalOptions:
    setup: SphericalSetup
    t_final: float = 0.5
    nt: int = 500
    fd_offset: int = 4
    shape: tuple = (8, 8)


@dataclass
class RunConfig:
    eos: EquationOfState
    chart: ConeChart
    free: FreeData
    corner: dict
    shape: tuple
    nt: int
    t_final: float
    order: int = 0
    tol: Tolerances = field(default_factory=Tolerances)
    output: OutputOptions = field(default_factory=OutputOptions)
    spherical: SphericalOptions | None = None
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def dt(self) -> float:
        return self.t_final / self.nt

    def problem(self) -> ConeProblem:
        return ConeProblem(
            self.eos, self.chart, self.free, self.corner_data(), shape=self.shape, t_final=self.t_final,
            nt=self.nt, corner_tol=self.tol.corner, c_floor_factor=self.tol.c_floor,
            kappa_floor_factor=self.tol.kappa_floor,
        )

    def corner_data(self) -> CornerData:
        c = self.corner
        T_rho, kappa = c.get("T_rho", 0.0), c.get("kappa", 1.0)
        if c.get("v_normal") == "matched":
            return matched_corner(self.eos, self.chart, self.free, self.shape, c["rho"], T_rho, kappa)
        s = c.get("s")
        if s is None:
            th1, th2 = self.chart.grid(*self.shape).mesh()
            s = self.free.s.evaluate(0.0, th1, th2)[0]
        v = None if c.get("v") is None else np.asarray(c["v"], dtype=float)
        return CornerData(rho=c["rho"], s=s, v_normal=c.get("v_normal", 0.0), v=v, T_rho=T_rho, kappa=kappa)

    def with_overrides(self, order=None, dt=None, grid=None, tol=None) -> "RunConfig":
        cfg = self
        if grid is not None:
            n1, n2, nt = grid
            _check_sizes((n1, n2), "--grid")
            _positive_int(nt, "--grid")
            cfg = replace(cfg, shape=(n1, n2), nt=nt)
        if dt is not None:
            if not dt > 0:
                raise ConfigError(f"--dt: must be positive, got {dt}")
            cfg = replace(cfg, nt=max(1, round(cfg.t_final / dt)))
        if order is not None:
            cfg = replace(cfg, order=_order(order, "--order"))
        if tol is not None:
            cfg = replace(cfg, tol=replace(cfg.tol, corner=float(tol)))
        return cfg


def parse_grid(text: str) -> tuple:
    """``"32x32x1000"`` to ``(32, 32, 1000)``."""
    try:
        n1, n2, nt = (int(p) for p in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"--grid: expected N1xN2xNT, got {text!r}") from None
    return n1, n2, nt


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    return config_from_dict(raw)


def config_from_dict(raw) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>: expected a mapping")
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown key")
    eos = _build("eos", eos_from_spec, raw.get("eos", {"kind": "polytropic", "gamma": 1.4}))
    chart = _build("chart", chart_from_spec, _required(raw, "chart"), mapping=True)

    fd = raw.get("free_data") or {}
    _mapping(fd, "free_data")
    s = _build("free_data.s", field_from_spec, fd.get("s", 0.0))
    vs = fd.get("vslash", [0.0, 0.0])
    if not isinstance(vs, list) or len(vs) != 2:
        raise ConfigError("free_data.vslash: expected a list of two field expressions")
    vslash = tuple(_build(f"free_data.vslash[{a}]", field_from_spec, e) for a, e in enumerate(vs))

    corner = _corner(raw.get("corner"))
    grid = raw.get("grid", {}) or {}
    _mapping(grid, "grid")
    shape = (grid.get("n1", 32), grid.get("n2", 32))
    _check_sizes(shape, "grid")
    nt = grid.get("nt", 100)
    _positive_int(nt, "grid.nt")
    t_final = _number(raw.get("t_final", 1.0), "t_final")
    if not t_final > 0:
        raise ConfigError(f"t_final: must be positive, got {t_final}")
    order = _order(raw.get("order", 0), "order")

    tl = raw.get("tolerances", {}) or {}
    _mapping(tl, "tolerances")
    for k in tl:
        if k not in ("corner", "c_floor", "kappa_floor"):
            raise ConfigError(f"tolerances.{k}: unknown key")
    tol = Tolerances(**{k: _number(v, f"tolerances.{k}") for k, v in tl.items()})

    out = raw.get("output", {}) or {}
    _mapping(out, "output")
    stride = out.get("stride", "auto")
    if stride != "auto":
        _positive_int(stride, "output.stride")
    output = OutputOptions(None if stride == "auto" else int(stride), bool(out.get("figures", True)))

    sph = _spherical(raw.get("spherical"), eos) if raw.get("spherical") is not None else None
    return RunConfig(eos, chart, FreeData(s, vslash), corner, tuple(shape), int(nt), t_final, order, tol, output, sph, raw)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _build(path, factory, spec, mapping=False):
    if mapping:
        _mapping(spec, path)
    try:
        return factory(spec)
    except ConfigError:
        raise
    except KeyError as exc:
        raise ConfigError(f"{path}: missing key {exc}") from None
    except (TypeError, ValueError, AttributeError, ImportError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _required(raw, key):
    if raw.get(key) is None:
        raise ConfigError(f"{key}: required")
    return raw[key]


def _mapping(x, path):
    if not isinstance(x, dict):
        raise ConfigError(f"{path}: expected a mapping")


def _number(x, path) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {x!r}")
    return float(x)


def _positive_int(x, path):
    if isinstance(x, bool) or not isinstance(x, int) or x < 1:
        raise ConfigError(f"{path}: expected a positive integer, got {x!r}")


def _order(x, path) -> int:
    if x not in (0, 1) or isinstance(x, bool):
        raise ConfigError(f"{path}: jet order must be 0 or 1, got {x!r}")
    return int(x)


def _check_sizes(shape, path):
    for a, n in zip(("n1", "n2"), shape):
        if isinstance(n, bool) or not isinstance(n, int) or n < MIN_PERIODIC:
            raise ConfigError(f"{path}.{a}: angular sizes must be integers >= {MIN_PERIODIC}, got {n!r}")


def _corner(c) -> dict:
    if c is None:
        raise ConfigError("corner: required")
    _mapping(c, "corner")
    known = {"rho", "s", "v_normal", "v", "T_rho", "kappa"}
    for k in c:
        if k not in known:
            raise ConfigError(f"corner.{k}: unknown key")
    out = {"rho": _number(_required_in(c, "rho", "corner"), "corner.rho")}
    if not out["rho"] > 0:
        raise ConfigError(f"corner.rho: must be positive, got {out['rho']}")
    vn = c.get("v_normal", 0.0)
    if vn != "matched":
        vn = _number(vn, "corner.v_normal")
    out["v_normal"] = vn
    if "v" in c:
        v = c["v"]
        if not isinstance(v, list) or len(v) != 3:
            raise ConfigError("corner.v: expected three numbers")
        out["v"] = [_number(x, f"corner.v[{i}]") for i, x in enumerate(v)]
    for k in ("s", "T_rho", "kappa"):
        if k in c:
            out[k] = _number(c[k], f"corner.{k}")
    if "kappa" in out and not out["kappa"] > 0:
        raise ConfigError(f"corner.kappa: must be positive, got {out['kappa']}")
    return out


def _required_in(m, key, path):
    if key not in m:
        raise ConfigError(f"{path}.{key}: required")
    return m[key]


def _spherical(spec, eos) -> SphericalOptions:
    _mapping(spec, "spherical")
    known = {"R_minus", "R_plus", "N", "r0", "extent", "s0", "line", "t_final", "nt", "fd_offset", "shape"}
    for k in spec:
        if k not in known:
            raise ConfigError(f"spherical.{k}: unknown key")
    base = SphericalSetup(eos=eos)
    kw = {}
    for k in ("R_minus", "R_plus"):
        if k in spec:
            kw[k] = _build(f"spherical.{k}", Profile.from_spec, spec[k])
    if "N" in spec:
        _positive_int(spec["N"], "spherical.N")
        if spec["N"] % 2 or spec["N"] < 16:
            raise ConfigError(f"spherical.N: must be an even integer >= 16, got {spec['N']}")
        kw["N"] = spec["N"]
    for k in ("r0", "extent", "s0"):
        if k in spec:
            kw[k] = _number(spec[k], f"spherical.{k}")
    if "line" in spec:
        ln = spec["line"]
        if not isinstance(ln, list) or len(ln) != 2 or not all(0 <= _number(x, "spherical.line") < 1 for x in ln):
            raise ConfigError("spherical.line: expected two fractions in [0, 1)")
        kw["line"] = tuple(float(x) for x in ln)
    opts = SphericalOptions(replace(base, **kw))
    if "t_final" in spec:
        opts.t_final = _number(spec["t_final"], "spherical.t_final")
    if "nt" in spec:
        _positive_int(spec["nt"], "spherical.nt")
        opts.nt = spec["nt"]
    if "fd_offset" in spec:
        _positive_int(spec["fd_offset"], "spherical.fd_offset")
        opts.fd_offset = spec["fd_offset"]
    if "shape" in spec:
        sh = spec["shape"]
        if not isinstance(sh, list) or len(sh) != 2:
            raise ConfigError("spherical.shape: expected [n1, n2]")
        _check_sizes(tuple(sh), "spherical.shape")
        opts.shape = tuple(sh)
    return opts
