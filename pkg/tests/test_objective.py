import json

import numpy as np
import pytest

from delayopt.adjoint import solve_adjoint
from delayopt.discretization import SpaceMesh, TimeGrid
from delayopt.forward import solve_state, solve_state_ode_mode
from delayopt.model import ControlVector, ProblemSpec, ReactionSpec
from delayopt.objective import (GradientVector, assemble_gradient, evaluate_objective,
                                projected_norm_of, stationarity_check, tracking_source,
                                window_slab_range)
from delayopt.oracle import fd_gradient

from conftest import TABLE1_CONTROL, desk_control, desk_spec


def _solve_all(spec, u, mesh, grid):
    st = solve_state(spec, u, mesh, grid)
    adj = solve_adjoint(spec, u, st)
    return st, adj, assemble_gradient(spec, u, st, adj)


def test_equilibrium_objective_is_zero(desk_mesh, desk_grid):
    spec = ProblemSpec.build(
        space_interval=(0.0, 2.0), horizon=2.0, num_delays=1,
        delay_bounds=(0.0, 2.0), weight_bounds=(-5.0, 5.0), nu=0.0,
        reaction=ReactionSpec.cubic_default(), history="1", target="1")
    u = ControlVector.of([0.5], [0.0])
    st = solve_state(spec, u, desk_mesh, desk_grid)
    assert abs(evaluate_objective(spec, u, st)) <= 1e-12


def test_zero_weights_give_exactly_zero_delay_gradient(desk_mesh, desk_grid):
    spec = desk_spec()
    u = ControlVector.of([0.35, 0.9], [0.0, 0.0])
    _, _, g = _solve_all(spec, u, desk_mesh, desk_grid)
    assert g.d_delays == (0.0, 0.0)  # exact zeros, factor -kappa_i


def test_pyragas_zero_delay_weight_gradient_vanishes(desk_mesh, desk_grid):
    # s_i = 0 makes the Pyragas feedback term cancel identically
    spec = desk_spec(variant="pyragas", nu=0.0)
    u = ControlVector.of([0.0, 0.9], [0.8, -0.6])
    _, _, g = _solve_all(spec, u, desk_mesh, desk_grid)
    assert g.d_weights[0] == 0.0
    assert abs(g.d_weights[1]) > 1e-8


def test_gradient_matches_fd_all_variants(desk_mesh, desk_grid):
    for variant in ("direct_delay", "pyragas"):
        for objective in ("tracking", "shifted"):
            spec = desk_spec(variant=variant, objective=objective)
            u = desk_control(objective)
            _, _, g = _solve_all(spec, u, desk_mesh, desk_grid)
            fd = fd_gradient(spec, u, desk_mesh, desk_grid)
            ga, fa = g.as_array(), fd.as_array()
            assert np.all(np.abs(fa) > 1e-10)  # instance chosen generically
            rel = np.abs(ga - fa) / np.abs(fa)
            assert rel.max() <= 1e-6, (variant, objective, rel)


def test_gradient_matches_fd_with_windowed_objective(desk_mesh, desk_grid):
    spec = ProblemSpec.build(
        space_interval=(0.0, 2.0), horizon=2.0, num_delays=2,
        delay_bounds=(0.0, 2.0), weight_bounds=(-5.0, 5.0), nu=0.01,
        reaction=ReactionSpec.cubic_default(),
        history="0.5 + 0.3*cos(pi*x/2)*(1 + t/4)",
        target="0.2 + 0.1*sin(2*t)*cos(pi*x/2)", window=(1.0, 2.0))
    u = desk_control()
    _, _, g = _solve_all(spec, u, desk_mesh, desk_grid)
    fd = fd_gradient(spec, u, desk_mesh, desk_grid)
    rel = np.abs(g.as_array() - fd.as_array()) / np.abs(fd.as_array())
    assert rel.max() <= 1e-6


def test_gradient_matches_fd_scalar_mode():
    spec = ProblemSpec.build(
        horizon=4.0, num_delays=2, delay_bounds=(0.0, 4.0),
        weight_bounds=(-5.0, 5.0), nu=0.02, reaction=ReactionSpec.cubic_default(),
        history="0.8 + 0.1*t", target="0.5 + 0.3*sin(2*t)")
    u = ControlVector.of([0.45, 1.3], [0.7, -0.5])
    grid = TimeGrid.uniform(4.0, 32)
    st = solve_state_ode_mode(spec, u, grid)
    g = assemble_gradient(spec, u, st, solve_adjoint(spec, u, st))
    fd = fd_gradient(spec, u, None, grid)
    rel = np.abs(g.as_array() - fd.as_array()) / np.abs(fd.as_array())
    assert rel.max() <= 1e-6


def test_shifted_objective_periodicity(desk_mesh, desk_grid):
    # a 2*pi-periodic target makes J invariant under shifting by one period
    spec = desk_spec(objective="shifted")
    spec = ProblemSpec.build(
        space_interval=(0.0, 2.0), horizon=2.0, num_delays=2,
        delay_bounds=(0.0, 2.0), weight_bounds=(-5.0, 5.0), nu=0.0,
        reaction=ReactionSpec.cubic_default(),
        history="0.5 + 0.3*cos(pi*x/2)*(1 + t/4)",
        target="0.2 + 0.1*sin(t)*cos(pi*x/2)", objective="shifted")
    u0 = ControlVector.of([0.35, 0.9], [0.8, -0.6], 0.4)
    u1 = ControlVector.of([0.35, 0.9], [0.8, -0.6], 0.4 + 2 * np.pi)
    st = solve_state(spec, u0, desk_mesh, desk_grid)
    J0 = evaluate_objective(spec, u0, st)
    J1 = evaluate_objective(spec, u1, st)
    assert abs(J1 - J0) <= 1e-3 * abs(J0)


def test_tikhonov_term():
    spec = ProblemSpec.build(
        horizon=2.0, num_delays=1, delay_bounds=(0.0, 2.0),
        weight_bounds=(-5.0, 5.0), nu=0.5, reaction=ReactionSpec.cubic_default(),
        history="1", target="1")
    u = ControlVector.of([0.5], [0.0])
    grid = TimeGrid.uniform(2.0, 8)
    st = solve_state_ode_mode(spec, u, grid)
    assert evaluate_objective(spec, u, st) == pytest.approx(0.0, abs=1e-12)
    u2 = ControlVector.of([0.5], [2.0])
    st2 = solve_state_ode_mode(spec, u2, grid)
    J2 = evaluate_objective(spec, u2, st2)
    assert J2 >= 0.5 * 0.5 * 4.0  # at least the quadratic penalty


def test_window_must_align_with_time_nodes():
    grid = TimeGrid.uniform(2.0, 16)
    assert window_slab_range(grid, (0.0, 2.0)) == (0, 16)
    assert window_slab_range(grid, (1.0, 2.0)) == (8, 16)
    with pytest.raises(ValueError, match="align"):
        window_slab_range(grid, (0.3, 2.0))


def test_table1_weight_sum_data_check():
    # shipped example data: the trailing weights nearly cancel the first one
    assert sum(TABLE1_CONTROL.weights[1:]) == pytest.approx(-1.0127, abs=5e-4)


def test_stationarity_classification():
    spec = ProblemSpec.build(
        horizon=2.0, num_delays=2, delay_bounds=(0.0, 2.0),
        weight_bounds=(-5.0, 5.0), nu=0.0, reaction=ReactionSpec.cubic_default(),
        history="1", target="1")
    u = ControlVector.of([0.0, 2.0], [1.0, -5.0])
    g = np.array([0.5, -0.2, 1e-5, -0.3])
    rep = stationarity_check(spec, u, g, tolerance=1e-3)
    statuses = {s.name: s.status for s in rep.statuses}
    assert statuses["s_0"] == "active-lower-consistent"   # at 0 with g >= 0
    assert statuses["s_1"] == "active-upper-consistent"   # at 2 with g <= 0
    assert statuses["kappa_0"] == "interior-stationary"
    assert statuses["kappa_1"] == "violated"              # at lower bound, g < 0
    assert not rep.ok
    assert rep.projected_norm == pytest.approx(0.3)


def test_stationarity_zero_gradient_all_interior():
    spec = desk_spec()
    u = desk_control()
    g = GradientVector((0.0, 0.0), (0.0, 0.0), None, 0.0)
    rep = stationarity_check(spec, u, g, tolerance=1e-3)
    assert all(s.status == "interior-stationary" for s in rep.statuses)
    assert rep.projected_norm == 0.0
    assert rep.ok


def test_projected_norm_respects_bounds():
    spec = ProblemSpec.build(
        horizon=2.0, num_delays=1, delay_bounds=(0.0, 2.0),
        weight_bounds=(-5.0, 5.0), nu=0.0, reaction=ReactionSpec.cubic_default(),
        history="1", target="1")
    u = ControlVector.of([0.0], [1.0])
    # positive delay gradient at the lower bound does not count
    assert projected_norm_of(spec, u, np.array([10.0, 1e-9])) == pytest.approx(1e-9)
    assert projected_norm_of(spec, u, np.array([-0.5, 0.0])) == pytest.approx(0.5)


def test_gradient_json_serialization():
    g = GradientVector((1.0, 2.0), (-0.5, 0.25), 0.125, 3.0)
    data = json.loads(g.to_json())
    assert data["d_s"] == [1.0, 2.0]
    assert data["d_kappa"] == [-0.5, 0.25]
    assert data["d_shift"] == 0.125
    assert data["projected_norm"] == 3.0


def test_shift_gradient_present_iff_shifted(desk_mesh, desk_grid):
    spec = desk_spec(objective="shifted")
    u = desk_control("shifted")
    _, _, g = _solve_all(spec, u, desk_mesh, desk_grid)
    assert g.d_shift is not None
    spec2 = desk_spec()
    u2 = desk_control()
    _, _, g2 = _solve_all(spec2, u2, desk_mesh, desk_grid)
    assert g2.d_shift is None
