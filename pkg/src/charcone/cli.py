"""Command line entry point.

Exit status: 0 on success, 1 on validation failure (bad config, incompatible
corner data, failed check), 2 when a floor truncated the run early.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import report
from .config import RunConfig, load_config, parse_grid
from .construction import ConeRun, integrate_wbar, validate_corner
from .errors import CharConeError, ConfigError, CornerIncompatible
from .oracles import SphericalSetup, constant_state, cross_check
from .schematic import determination_check

EXIT_OK, EXIT_INVALID, EXIT_TRUNCATED = 0, 1, 2
log = logging.getLogger("charcone")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="charcone", description="Characteristic initial data on a sound cone.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", type=Path, required=config_required, help="YAML run configuration")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        sp.add_argument("--json-report", action="store_true", help="also print the JSON report to stdout")

    def numerics(sp):
        sp.add_argument("--order", type=int, choices=(0, 1), help="jet order (overrides the config)")
        sp.add_argument("--dt", type=float, help="time step (overrides grid.nt)")
        sp.add_argument("--grid", type=parse_grid, help="N1xN2xNT (overrides the config)")
        sp.add_argument("--tol", type=float, help="corner tolerance (run) or pass threshold (cross-check)")

    run = sub.add_parser("run", help="validate, construct and export the cone data")
    common(run)
    numerics(run)

    sch = sub.add_parser("check-schematic", help="check the determination order of the jet recursion")
    sch.add_argument("--n", type=int, default=3, help="maximal order (<= 8)")
    sch.add_argument("--K", type=int, default=2, help="maximal T-order (<= 6)")
    sch.add_argument("--ledger", type=Path, help="alternative ledger JSON")
    sch.add_argument("--out", type=Path, default=Path("out"))
    sch.add_argument("--json-report", action="store_true")

    orc = sub.add_parser("oracle", help="export a reference solution")
    orc.add_argument("kind", choices=("spherical", "constant"))
    common(orc, config_required=False)
    numerics(orc)

    cc = sub.add_parser("cross-check", help="cone construction against the spherical lattice")
    common(cc, config_required=False)
    numerics(cc)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"ConfigError: {exc}", file=sys.stderr)
        return EXIT_INVALID
    handler = {"run": cmd_run, "check-schematic": cmd_check_schematic, "oracle": cmd_oracle, "cross-check": cmd_cross_check}
    try:
        return handler[args.command](args)
    except CharConeError as exc:
        print(f"{exc.label}: {exc}", file=sys.stderr)
        return EXIT_INVALID


@contextmanager
def run_log(out: Path):
    """Mirror package logging into ``out/run.log`` (no timestamps, so logs are reproducible)."""
    out.mkdir(parents=True, exist_ok=True)
    fh = logging.FileHandler(out / "run.log", mode="w")
    fh.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("charcone")
    old = root.level
    root.setLevel(logging.INFO)
    root.addHandler(fh)
    try:
        yield
    finally:
        root.removeHandler(fh)
        root.setLevel(old)
        fh.close()


def _finish(args, out: Path, name: str, summary: dict, code: int) -> int:
    summary["exit_code"] = code
    report.write_json(out / name, summary)
    if args.json_report:
        print(json.dumps(summary, indent=2, sort_keys=True))
    return code


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(order=args.order, dt=args.dt, grid=args.grid, tol=args.tol)


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"ConfigError: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out = args.out
    with run_log(out):
        log.info("config %s: grid %dx%d, nt=%d, t_final=%g, order=%d", args.config, *cfg.shape, cfg.nt, cfg.t_final, cfg.order)
        problem = cfg.problem()
        corner = validate_corner(problem, raise_on_fail=False)
        log.info("corner gate: %s", corner.message)
        if not corner.passed:
            try:
                validate_corner(problem)
            except CornerIncompatible as exc:
                print(f"{exc.label}: {exc}", file=sys.stderr)
                log.error("%s: %s", exc.label, exc)
            summary = {"status": "rejected", "corner": report.corner_summary(corner)}
            return _finish(args, out, "residuals.json", summary, EXIT_INVALID)

        run = integrate_wbar(problem, corner=corner)
        jets = None
        if cfg.order == 1 and run.status == "complete":
            from .jets import integrate_first_jets

            jets = integrate_first_jets(run)
        summary = _export(cfg, run, jets, out)
        code = EXIT_OK
        if run.status == "truncated":
            code = EXIT_TRUNCATED
            msg = f"{run.stop_label}: run truncated near t={run.stop_time:.6g} after {run.levels} levels"
            print(msg, file=sys.stderr)
            log.warning(msg)
        log.info("finished with status %s", summary["status"])
        return _finish(args, out, "residuals.json", summary, code)


def _export(cfg: RunConfig, run: ConeRun, jets, out: Path) -> dict:
    levels = report.export_levels(run.levels, cfg.output.stride)
    names, table = report.field_table(run, jets, levels)
    report.write_csv(out / "fields.csv", names, table)
    summary = report.residual_summary(run, jets, exported=levels)
    summary["status"] = run.status
    summary["exported_levels"] = [int(i) for i in levels]
    summary["grid"] = {"n1": cfg.shape[0], "n2": cfg.shape[1], "nt": cfg.nt, "dt": cfg.dt, "t_final": cfg.t_final}
    summary["order"] = cfg.order
    if run.status == "truncated":
        summary["truncation"] = {"label": run.stop_label, "time": run.stop_time, "levels": run.levels}
    log.info("wrote %d rows of fields.csv (%d levels)", table.shape[0], len(levels))
    if cfg.output.figures:
        for p in report.render_figures(out, run, jets):
            log.info("wrote %s", p.name)
    return summary


# ---------------------------------------------------------------------------
# schematic checker
# ---------------------------------------------------------------------------


def cmd_check_schematic(args) -> int:
    if not (0 <= args.n <= 8 and 0 <= args.K <= 6):
        print(f"ConfigError: --n must be in [0, 8] and --K in [0, 6], got n={args.n}, K={args.K}", file=sys.stderr)
        return EXIT_INVALID
    ledger = None
    if args.ledger is not None:
        try:
            ledger = json.loads(args.ledger.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"ConfigError: --ledger: {exc}", file=sys.stderr)
            return EXIT_INVALID
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    try:
        rep = determination_check(args.n, args.K, ledger, raise_on_fail=False)
    except (KeyError, TypeError, ValueError) as exc:
        print(f"ConfigError: malformed ledger ({exc!r})", file=sys.stderr)
        return EXIT_INVALID
    (out / "schematic_trace.txt").write_text(rep.text() + "\n")
    code = EXIT_OK if rep.passed else EXIT_INVALID
    if not rep.passed:
        print(f"CyclicDependency: {rep.problems[0]}", file=sys.stderr)
    return _finish(args, out, "schematic_graph.json", rep.graph(), code)


# ---------------------------------------------------------------------------
# oracles and cross-check
# ---------------------------------------------------------------------------


def _spherical_options(args):
    from .config import SphericalOptions, config_from_dict

    if args.config is None:
        return SphericalOptions(SphericalSetup())
    import yaml

    raw = yaml.safe_load(args.config.read_text()) or {}
    if not isinstance(raw, dict):
        raise ConfigError("<root>: expected a mapping")
    sub = {k: raw[k] for k in ("eos", "spherical") if k in raw}
    sub.setdefault("spherical", {})
    sub["chart"] = {"kind": "expanding_sphere"}
    sub["corner"] = {"rho": 1.0}
    return config_from_dict(sub).spherical


def cmd_oracle(args) -> int:
    out = args.out
    with run_log(out):
        if args.kind == "constant":
            return _constant_oracle(args, out)
        opts = _spherical_options(args)
        st = opts.setup.exact()
        i, j0 = opts.setup.line_nodes(st)
        # at most about 257 x 257 lattice nodes are written
        step = max(1, st.N // 256)
        idx = np.arange(0, st.N + 1, step)
        ii, jj = np.meshgrid(idx, idx, indexing="ij")
        cols = [ii, jj] + [q[ii, jj] for q in (st.t, st.r, st.Rp, st.Rm, st.rho, st.v_r, st.c)]
        table = np.stack([np.asarray(c, dtype=float).ravel() for c in cols], axis=1)
        report.write_csv(out / "lattice.csv", ["i", "j", "t", "r", "R_plus", "R_minus", "rho", "v_r", "c"], table)
        report.write_csv(out / "fields.csv", list(report.BASE_COLUMNS), _line_table(st, i, j0))
        log.info("spherical lattice N=%d, line i=%d from node j=%d", st.N, i, j0)
        summary = {"kind": "spherical", "N": opts.setup.N, "labels": st.N, "line": [i, j0], "t_span": float(st.t[i, -1] - st.t[i, j0])}
        return _finish(args, out, "oracle.json", summary, EXIT_OK)


def _line_table(st, i, j0) -> np.ndarray:
    """Outgoing lattice line in the cone schema (theta = 0, position on the x axis)."""
    sl = (i, slice(j0, None))
    t, r = st.t[sl] - st.t[i, j0], st.r[sl]
    z = np.zeros_like(t)
    v_r, c = st.v_r[sl], st.c[sl]
    V = v_r + c
    cols = [t, z, z, r, z, z, st.rho[sl], v_r, z, z, np.full_like(t, st.s0), c, 0.5 * st.Rm[sl], 0.5 * st.Rp[sl],
            z, z, z, -v_r, V, v_r + c - V]
    return np.stack(cols, axis=1)


def _constant_oracle(args, out: Path) -> int:
    """Exact constant state on the sound sphere of the config's chart radius."""
    cfg = _load(args)
    r0 = float(cfg.raw.get("chart", {}).get("r0", 1.0))
    cs = constant_state(cfg.corner["rho"], cfg.corner.get("s", 0.0), cfg.eos)
    problem = cs.problem(r0, shape=cfg.shape, t_final=cfg.t_final, nt=cfg.nt)
    th1, th2 = problem.grid().mesh()
    times = problem.dt * np.arange(problem.nt + 1)
    levels = report.export_levels(len(times), cfg.output.stride)
    shape = (len(times),) + th1.shape
    fields = {k: np.zeros(shape) for k in ("wbar", "w", "rho", "v_normal", "c", "s", "speed")}
    for k in ("v", "vslash", "position", "T"):
        fields[k] = np.zeros((len(times), 3) + th1.shape)
    phi0 = float(cfg.eos.phi0(np.asarray(cs.rho), np.asarray(cs.s)))
    fields["rho"][:], fields["s"][:], fields["c"][:], fields["speed"][:] = cs.rho, cs.s, cs.c, cs.c
    fields["w"][:] = fields["wbar"][:] = 0.5 * phi0
    for n in levels:
        fr = problem.chart.frame_on(times[n], th1, th2)
        fields["position"][n], fields["T"][n] = fr.position, fr.T
    run = ConeRun(problem, times, fields)
    jets = None
    if cfg.order == 1:
        zeros = lambda *k: np.zeros((len(times),) + k + th1.shape)  # noqa: E731
        jets = type("Jets", (), {})()
        jets.fields = {"kappa": np.ones(shape), "T_rho": zeros(), "T_v": zeros(3), "T_s": zeros(), "T2_s": zeros(),
                       "zeta": zeros(2), "eta": zeros(2)}
    names, table = report.field_table(run, jets, levels)
    report.write_csv(out / "fields.csv", names, table)
    summary = {"kind": "constant", "rho": cs.rho, "s": cs.s, "c": cs.c, "r0": r0}
    return _finish(args, out, "oracle.json", summary, EXIT_OK)


def cmd_cross_check(args) -> int:
    out = args.out
    with run_log(out):
        opts = _spherical_options(args)
        nt, shape, t_final = opts.nt, opts.shape, opts.t_final
        if args.grid is not None:
            shape, nt = args.grid[:2], args.grid[2]
        if args.dt is not None:
            nt = max(1, round(t_final / args.dt))
        jets = args.order == 1
        tol = 1e-6 if args.tol is None else args.tol
        st = opts.setup.exact()
        i, j0 = opts.setup.line_nodes(st)
        res = cross_check(st, i, j0, t_final, nt, shape=shape, jets=jets, fd_offset=opts.fd_offset)
        summary = {
            "line": [i, j0],
            "N": opts.setup.N,
            "labels": st.N,
            "nt": nt,
            "dt": t_final / nt,
            "t_final": t_final,
            "wbar_error": res.wbar_error,
            "v_radial_error": res.v_radial_error,
            "T_rho_error": res.T_rho_error,
            "T_rho_corner": res.T_rho_oracle,
            "tol": tol,
        }
        errors = [res.wbar_error, res.v_radial_error] + ([res.T_rho_error] if jets else [])
        passed = all(e <= tol for e in errors)
        summary["passed"] = passed
        log.info("cross-check line %d: wbar error %.3e, v_r error %.3e", i, res.wbar_error, res.v_radial_error)
        if not passed:
            print(f"CrossCheckFailed: max error {max(errors):.3e} exceeds {tol:.1e}", file=sys.stderr)
        return _finish(args, out, "cross_check.json", summary, EXIT_OK if passed else EXIT_INVALID)


if __name__ == "__main__":
    sys.exit(main())
