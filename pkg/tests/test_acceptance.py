"""Acceptance criteria C1 to C11, each at its stated tolerance.

Every test records one ``Cn PASS`` or ``Cn FAIL`` line; the lines are printed
as they happen and repeated in the terminal summary.
"""

import copy
import json
import time
from pathlib import Path

import numpy as np
import pytest
import sympy as sp

from charcone.acoustics import (
    box_cartesian,
    box_nullframe,
    christoffels_at,
    compatibility_residual,
    metric_derivatives,
    metric_from_sound_speed,
)
from charcone.cli import main
from charcone.config import load_config
from charcone.construction import LevelHistory, integrate_wbar
from charcone.eos import closure_residual
from charcone.errors import CyclicDependency
from charcone.jets import integrate_first_jets
from charcone.oracles import ManufacturedGeometry, cross_check, fd_jet, lattice_cb_residual, spherical_char_solve
from charcone.schematic import determination_check, lemma_violations, load_ledger

from conftest import slope

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
RESULTS: list = []


def record(name: str, ok: bool, detail: str):
    line = f"{name} {'PASS' if ok else 'FAIL'}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def fmt(xs):
    return "[" + ", ".join(f"{x:.3g}" for x in xs) + "]"


@pytest.fixture(scope="module")
def spherical_line(spherical_setup, spherical_exact):
    i, j0 = spherical_setup.line_nodes(spherical_exact)
    return spherical_exact, i, j0


def test_c1_constant_state_reproduction():
    cfg = load_config(CONFIGS / "constant.yaml")
    start = time.perf_counter()
    run = integrate_wbar(cfg.problem())
    jets = integrate_first_jets(run)
    elapsed = time.perf_counter() - start
    f = run.fields
    dev = max(np.max(np.abs(f["rho"] - 1)), np.max(np.abs(f["v"])), np.max(np.abs(f["s"])))
    null = np.max(np.abs(-f["v_normal"] + f["c"] - f["speed"]))
    kap = np.max(np.abs(jets.fields["kappa"] - 1))
    ok = run.levels == 1001 and dev <= 1e-10 and null <= 1e-12 and kap <= 1e-10 and elapsed <= 10
    record("C1", ok, f"deviation {dev:.2e}, null residual {null:.2e}, |kappa-1| {kap:.2e}, {elapsed:.1f} s")


def test_c2_null_condition_enforcement(spherical_line):
    runs = []
    cfg = load_config(CONFIGS / "ellipsoid.yaml")
    runs.append(integrate_wbar(cfg.problem()))
    st, i, j0 = spherical_line
    runs.append(cross_check(st, i, j0, 0.5, 50).run)
    worst = 0.0
    for run in runs:
        f = run.fields
        res = np.abs(closure_residual(run.problem.eos, f["w"], f["wbar"], f["speed"], f["s"]))
        worst = max(worst, float(np.max(res / np.maximum(1.0, np.abs(f["speed"])))))
    record("C2", worst <= 1e-10, f"max relative closure residual {worst:.2e} over {len(runs)} generic runs")


def test_c3_spherical_cross_check(spherical_setup):
    start = time.perf_counter()
    st = spherical_setup.exact()
    i, j0 = spherical_setup.line_nodes(st)
    nts = (5, 10, 20, 40, 80)
    errs = [cross_check(st, i, j0, 0.5, nt).wbar_error for nt in nts]
    final = cross_check(st, i, j0, 0.5, 500)
    elapsed = time.perf_counter() - start
    s = slope(errs)
    ok = np.all(np.abs(s - 4) <= 0.3) and final.wbar_error <= 1e-6 and elapsed <= 60
    record("C3", ok, f"slopes {fmt(s)}, error at dt=1e-3 {final.wbar_error:.2e}, {elapsed:.1f} s including the lattice")


def test_c4_rk4_self_convergence():
    cfg = load_config(CONFIGS / "ellipsoid.yaml")
    final = {}
    for nt in (10, 20, 40, 80):
        run = integrate_wbar(cfg.with_overrides(grid=(24, 24, nt)).problem())
        jets = integrate_first_jets(run)
        final[nt] = {"wbar": run.fields["wbar"][-1], "kappa": jets.fields["kappa"][-1], "T_rho": jets.fields["T_rho"][-1]}
    slopes = {}
    for q in ("wbar", "kappa", "T_rho"):
        diffs = [np.max(np.abs(final[n][q] - final[2 * n][q])) for n in (10, 20, 40)]
        slopes[q] = slope(diffs)
    ok = all(np.all(np.abs(s - 4) <= 0.2) for s in slopes.values())
    record("C4", ok, ", ".join(f"{q} {fmt(s)}" for q, s in slopes.items()))


def test_c5_first_jet_oracle(spherical_line):
    st, i, j0 = spherical_line
    cc = cross_check(st, i, j0, 0.5, 500, jets=True)
    jr, line = cc.jets, cc.line
    hist = LevelHistory(jr.times, {"T_rho": jr.fields["T_rho"]})
    errs = []
    for k in (16, 8, 4, 2):  # offset h halves each step
        raw = line.values(fd_jet(st, "rho", k, richardson=False))
        m = (line.t <= jr.times[-1] + 1e-12) & np.isfinite(raw)
        num = np.array([hist.at("T_rho", t) for t in line.t[m]]).reshape(m.sum(), -1)
        errs.append(np.max(np.abs(num - raw[m, None])))
    s = slope(errs)
    ok = np.all(np.abs(s - 2) <= 0.3) and cc.T_rho_error <= 1e-6
    record("C5", ok, f"raw offset slopes {fmt(s)}, Richardson agreement {cc.T_rho_error:.2e}")


def test_c6_wave_operator_identity():
    pts = [(0.1, 0.8, 0.3, -0.2), (0.4, -0.6, 1.0, 0.5), (0.25, 0.3, -0.9, 0.7)]
    t, x, y, z = sp.symbols("t x y z", real=True)
    flat = ManufacturedGeometry(u=1 + t - sp.sqrt(x**2 + y**2 + z**2), v=[0, 0, 0])
    analytic = max(
        abs(box_cartesian(**flat.cartesian_inputs(p)) - box_nullframe(**flat.null_inputs(p))) for p in pts
    )
    geo = ManufacturedGeometry()
    p = pts[0]
    exact = box_cartesian(**geo.cartesian_inputs(p))
    hs = (0.04, 0.02, 0.01, 0.005)
    sampled = [abs(box_nullframe(**geo.sampled_null_inputs(p, h)) - exact) for h in hs]
    s = slope(sampled)
    ok = analytic <= 1e-9 and np.all(np.abs(s - 2) <= 0.3)
    record("C6", ok, f"constant background {analytic:.2e}, sampled errors {fmt(sampled)} slopes {fmt(s)}")


def test_c7_christoffel_compatibility():
    geo = ManufacturedGeometry()
    worst = 0.0
    for p in [(0.1, 0.8, 0.3, -0.2), (0.4, -0.6, 1.0, 0.5), (0.7, 0.2, -0.4, 1.1)]:
        d = geo.flow_derivatives(p)
        g, _ = metric_from_sound_speed(d["c"], d["v"])
        dg = metric_derivatives(d["c"], d["v"], d["dc2"], d["dv"])
        gam = christoffels_at(d["c"], d["v"], d["dc2"], d["dv"])
        worst = max(worst, float(np.max(np.abs(compatibility_residual(g, dg, gam)))))
    record("C7", worst <= 1e-8, f"max compatibility residual {worst:.2e}")


def test_c8_unused_constraint(spherical_setup):
    su = spherical_setup
    res = []
    for N in (128, 256, 512, 1024):
        st = spherical_char_solve(su.eos, su.R_minus, su.R_plus, N, su.r0, su.extent, su.s0)
        band = slice(N // 8, N // 2)
        res.append(float(np.nanmax(np.abs(lattice_cb_residual(st, 1)[band, band]))))
    s = slope(res)
    record("C8", bool(np.all(np.abs(s - 2) <= 0.3)), f"residuals {fmt(res)}, slopes {fmt(s)}")


def test_c9_schematic_lemma_and_determination():
    start = time.perf_counter()
    violations = lemma_violations(6)
    failed = [(n, K) for n in range(7) for K in range(5) if not determination_check(n, K).passed]
    ledger = copy.deepcopy(load_ledger())
    for e in ledger["stages"]:
        if e["id"] == "velocity-normal":
            e["refs"].append({"q": "kappa", "dk": 1})
    try:
        determination_check(3, 2, ledger)
        cycle_caught = False
    except CyclicDependency:
        cycle_caught = True
    elapsed = time.perf_counter() - start
    ok = not violations and not failed and cycle_caught and elapsed <= 5
    record("C9", ok, f"{len(violations)} lemma violations, failing (n, K) {failed}, cycle caught {cycle_caught}, {elapsed:.2f} s")


def test_c10_corner_gate(tmp_path, capsys):
    bad = main(["run", "--config", str(CONFIGS / "incompatible.yaml"), "--out", str(tmp_path / "bad")])
    err = capsys.readouterr().err
    good = main(["run", "--config", str(CONFIGS / "constant.yaml"), "--grid", "8x8x20", "--out", str(tmp_path / "ok")])
    ok = bad == 1 and "CornerIncompatible" in err and "1.000e-01" in err and good == 0
    record("C10", ok, f"incompatible exit {bad}, compatible exit {good}")


def test_c11_kappa_floor_truncation(tmp_path):
    times = []
    codes = []
    for nt in (200, 400):
        out = tmp_path / str(nt)
        codes.append(main(["run", "--config", str(CONFIGS / "compressive.yaml"), "--grid", f"8x8x{nt}", "--out", str(out)]))
        summary = json.loads((out / "residuals.json").read_text())
        times.append(summary["truncation"]["time"] if summary["truncation"] else float("nan"))
    shift = abs(times[1] - times[0]) / times[1]
    ok = codes == [2, 2] and shift < 0.02
    record("C11", ok, f"exit codes {codes}, stop times {fmt(times)}, relative shift {shift:.2e}")
