"""Acceptance suite: one criterion per test, one pass/fail line each.

Run with `pytest -s tests/test_acceptance.py` to see the per-criterion lines.
"""
import json
import os
import time

import numpy as np
import pytest

from delayopt.adjoint import apply_advanced, apply_delayed, solve_adjoint, solve_tangent
from delayopt.cli import cmd_optimize, parse_config_text
from delayopt.configs import EXAMPLES
from delayopt.discretization import SpaceMesh, TimeGrid, assemble, build_coupling
from delayopt.forward import solve_state, solve_state_ode_mode
from delayopt.model import ControlVector, HistorySpec, ProblemSpec, ReactionSpec
from delayopt.objective import (assemble_gradient, evaluate_objective,
                                stationarity_check, tracking_source)
from delayopt.optimizer import OptimizerSettings, multistart, optimize
from delayopt.oracle import convergence_study, fd_gradient

from conftest import (TABLE1_CONTROL, TABLE2_CONTROL, TABLE3_CONTROL,
                      desk_control, desk_spec, pde_example_spec)

WORKERS = max(1, min(int(os.environ.get("DELAYOPT_THREADS", "2")), os.cpu_count() or 1))


def _report(name: str, ok: bool, detail: str):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def test_gradient_exactness(desk_mesh, desk_grid):
    t0 = time.perf_counter()
    worst = 0.0
    for variant in ("direct_delay", "pyragas"):
        for objective in ("tracking", "shifted"):
            spec = desk_spec(variant=variant, objective=objective)
            u = desk_control(objective)
            st = solve_state(spec, u, desk_mesh, desk_grid)
            g = assemble_gradient(spec, u, st, solve_adjoint(spec, u, st))
            fd = fd_gradient(spec, u, desk_mesh, desk_grid, step_scale=1e-4)
            rel = np.abs(g.as_array() - fd.as_array()) / np.abs(fd.as_array())
            worst = max(worst, float(rel.max()))
    elapsed = time.perf_counter() - t0
    _report("gradient exactness",
            worst <= 1e-6 and elapsed < 10.0,
            f"worst relative error {worst:.2e} (tol 1e-6), runtime {elapsed:.1f}s (< 10s)")


def test_tangent_adjoint_duality(desk_mesh, desk_grid):
    worst_dual = 0.0
    for variant in ("direct_delay", "pyragas"):
        spec = desk_spec(variant=variant)
        u = desk_control()
        st = solve_state(spec, u, desk_mesh, desk_grid)
        g = assemble_gradient(spec, u, st, solve_adjoint(spec, u, st))
        G = tracking_source(spec, u, st)
        for i in range(2):
            Z = solve_tangent(spec, u, st, ("delay", i))
            dd = float(np.sum(G * Z))
            worst_dual = max(worst_dual, abs(dd - g.d_delays[i]) / max(abs(g.d_delays[i]), 1e-14))
            Z = solve_tangent(spec, u, st, ("weight", i))
            dd = float(np.sum(G * Z)) + spec.nu * u.weights[i]
            worst_dual = max(worst_dual, abs(dd - g.d_weights[i]) / max(abs(g.d_weights[i]), 1e-14))

    fem = assemble(desk_mesh)
    hist = HistorySpec("0.5 + 0.3*cos(pi*x/2)*(1 + t/4)")
    rng = np.random.default_rng(99)
    worst_tr = 0.0
    for s in (0.0, 0.13, 0.35, 0.9, 1.97):
        coupling = build_coupling(desk_grid, s, hist, desk_mesh)
        for _ in range(4):  # 5 delays x 4 pairs = 20 random pairs
            Z = rng.standard_normal((desk_grid.n_slabs + 1, desk_mesh.n_nodes))
            Phi = rng.standard_normal((desk_grid.n_slabs, desk_mesh.n_nodes))
            prod = Phi * apply_delayed(coupling, fem, Z)
            lhs = float(np.sum(apply_advanced(coupling, fem, Phi) * Z))
            rhs = float(np.sum(prod))
            scale = float(np.sum(np.abs(prod)))  # cancellation-aware pairing scale
            worst_tr = max(worst_tr, abs(lhs - rhs) / max(scale, 1e-14))
    _report("tangent-adjoint duality",
            worst_dual <= 1e-8 and worst_tr <= 1e-13,
            f"directional derivatives {worst_dual:.2e} (tol 1e-8), "
            f"transpose identity {worst_tr:.2e} (tol 1e-13)")


def test_example1_reproduction(tmp_path):
    t0 = time.perf_counter()
    config = parse_config_text(EXAMPLES["example1"])
    rc = cmd_optimize(config, tmp_path)
    elapsed = time.perf_counter() - t0
    assert rc == 0
    control = json.loads((tmp_path / "control.json").read_text())
    s, kappa, J = control["s"][0], control["kappa"][0], control["J"]
    report = json.loads((tmp_path / "stationarity.json").read_text())
    pn = report["projected_norm"]
    ok = (abs(s - 1.2409) <= 0.02 and abs(kappa - (-1.7668)) <= 0.02
          and abs(J - 1.8701) <= 0.02 * 1.8701 and pn <= 1e-4 and elapsed < 120.0)
    _report("example 1 reproduction", ok,
            f"s={s:.4f} (1.2409±0.02), kappa={kappa:.4f} (-1.7668±0.02), "
            f"J={J:.4f} (1.8701±2%), projected_norm={pn:.2e} (<=1e-4), "
            f"runtime {elapsed:.0f}s (< 120s)")


def test_example2_objective_value():
    spec = pde_example_spec(6)
    mesh = SpaceMesh.uniform(-20.0, 20.0, 2 ** 7)
    grid = TimeGrid.uniform(80.0, 2 ** 7)
    st = solve_state(spec, TABLE1_CONTROL, mesh, grid)
    J = evaluate_objective(spec, TABLE1_CONTROL, st)
    g = assemble_gradient(spec, TABLE1_CONTROL, st, solve_adjoint(spec, TABLE1_CONTROL, st))
    report = stationarity_check(spec, TABLE1_CONTROL, g, tolerance=1e-3)
    s1_status = report.statuses[0]
    active_ok = s1_status.status == "active-lower-consistent" and g.d_delays[0] > 0
    value_ok = abs(J - 4209.3) <= 0.05 * 4209.3
    _report("example 2 objective value", value_ok and active_ok,
            f"J={J:.1f} (4209.3±5% -> [{0.95 * 4209.3:.1f}, {1.05 * 4209.3:.1f}]), "
            f"d_s1={g.d_delays[0]:.1f} > 0 at active lower bound: {active_ok}")


def test_example3_shifted_multistart(tmp_path):
    t0 = time.perf_counter()
    spec = pde_example_spec(2, objective="shifted")
    mesh = SpaceMesh.uniform(-20.0, 20.0, 2 ** 7)
    grid = TimeGrid.uniform(80.0, 2 ** 7)

    st = solve_state(spec, TABLE2_CONTROL, mesh, grid)
    J_table = evaluate_objective(spec, TABLE2_CONTROL, st)
    table_ok = abs(J_table - 2114.5) <= 0.05 * 2114.5

    config = parse_config_text(EXAMPLES["example3"])
    from delayopt.cli import make_starts
    starts = make_starts(config)
    settings = OptimizerSettings(
        max_iterations=config.optimizer.max_iterations,
        tolerance=config.optimizer.tolerance, workers=WORKERS)
    ranked = multistart(spec, mesh, grid, starts, settings)
    u_best, rec = ranked[0]
    J_best = rec.final_objective
    pn = rec.final["projected_norm"]
    elapsed = time.perf_counter() - t0
    search_ok = J_best <= 2200.0 and pn <= 1e-3 and elapsed < 1800.0
    _report("example 3 shifted multistart", table_ok and search_ok,
            f"multistart best J={J_best:.1f} (<=2200), projected_norm={pn:.2e} (<=1e-3), "
            f"J(Table-2 + shift 2.3775)={J_table:.1f} (2114.5±5% -> "
            f"[{0.95 * 2114.5:.1f}, {1.05 * 2114.5:.1f}]), runtime {elapsed:.0f}s (< 1800s)")


def test_example4_pyragas():
    spec = pde_example_spec(4, variant="pyragas", objective="shifted")
    mesh = SpaceMesh.uniform(-20.0, 20.0, 2 ** 7)
    grid = TimeGrid.uniform(80.0, 2 ** 7)
    st = solve_state(spec, TABLE3_CONTROL, mesh, grid)
    J_table = evaluate_objective(spec, TABLE3_CONTROL, st)
    value_ok = abs(J_table - 3763.4) <= 0.10 * 3763.4

    settings = OptimizerSettings(max_iterations=400, tolerance=5e-4)
    u_polished, rec = optimize(spec, mesh, grid, TABLE3_CONTROL, settings)
    st2 = solve_state(spec, u_polished, mesh, grid)
    g = assemble_gradient(spec, u_polished, st2, solve_adjoint(spec, u_polished, st2))
    report = stationarity_check(spec, u_polished, g, tolerance=1e-3)
    _report("example 4 pyragas", value_ok and report.ok,
            f"J(Table-3 + shift -2.5013)={J_table:.1f} (3763.4±10% -> "
            f"[{0.9 * 3763.4:.1f}, {1.1 * 3763.4:.1f}]), polished J={rec.final_objective:.1f}, "
            f"stationarity at 1e-3 after polish: {report.ok} "
            f"(projected_norm={report.projected_norm:.2e})")


def test_scheme_orders():
    t0 = time.perf_counter()
    rows_t = convergence_study("ode_decay", [16, 32, 64, 128, 256])
    temporal = [r["order"] for r in rows_t[1:]]
    rows_x = convergence_study("heat_neumann", [8, 16, 32, 64])
    spatial = [r["order"] for r in rows_x[1:]]
    elapsed = time.perf_counter() - t0
    ok = (all(abs(o - 2.0) <= 0.2 for o in temporal)
          and all(abs(o - 2.0) <= 0.3 for o in spatial) and elapsed < 60.0)
    _report("scheme orders", ok,
            f"temporal orders {[f'{o:.2f}' for o in temporal]} (2.0±0.2), "
            f"spatial orders {[f'{o:.2f}' for o in spatial]} (2.0±0.3), "
            f"runtime {elapsed:.0f}s (< 60s)")


def test_trivial_invariants(desk_mesh, desk_grid):
    # zero weights: delay gradient exactly zero
    spec = desk_spec()
    u = ControlVector.of([0.35, 0.9], [0.0, 0.0])
    st = solve_state(spec, u, desk_mesh, desk_grid)
    g = assemble_gradient(spec, u, st, solve_adjoint(spec, u, st))
    zeros_ok = g.d_delays == (0.0, 0.0)

    # equilibrium data: objective vanishes
    eq = ProblemSpec.build(
        space_interval=(0.0, 2.0), horizon=2.0, num_delays=1,
        delay_bounds=(0.0, 2.0), weight_bounds=(-5.0, 5.0), nu=0.0,
        reaction=ReactionSpec.cubic_default(), history="1", target="1")
    ueq = ControlVector.of([0.5], [0.0])
    J_eq = evaluate_objective(eq, ueq, solve_state(eq, ueq, desk_mesh, desk_grid))
    eq_ok = abs(J_eq) <= 1e-12

    # Pyragas with a zero delay: the feedback cancels, weight gradient is zero
    pyr = desk_spec(variant="pyragas", nu=0.0)
    upyr = ControlVector.of([0.0, 0.9], [0.8, -0.6])
    stp = solve_state(pyr, upyr, desk_mesh, desk_grid)
    gp = assemble_gradient(pyr, upyr, stp, solve_adjoint(pyr, upyr, stp))
    pyragas_ok = gp.d_weights[0] == 0.0

    # shipped example data integrity
    wsum = sum(TABLE1_CONTROL.weights[1:])
    sum_ok = abs(wsum - (-1.0127)) <= 5e-4

    _report("trivial invariants", zeros_ok and eq_ok and pyragas_ok and sum_ok,
            f"kappa=0 delay gradient {g.d_delays} (exact zeros), equilibrium J={J_eq:.2e} "
            f"(<=1e-12), pyragas s=0 weight gradient {gp.d_weights[0]} (exact zero), "
            f"table-1 weight sum {wsum:.4f} (-1.0127±5e-4)")
