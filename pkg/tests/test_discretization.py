import numpy as np
import pytest

from delayopt.discretization import (AdjointTrajectory, SpaceMesh, StateTrajectory,
                                     TimeGrid, assemble, breakpoints, build_coupling,
                                     delayed_field, merge_weighted, project_l2,
                                     read_trajectory_csv, write_trajectory_csv)
from delayopt.model import HistorySpec


def test_single_element_matrices():
    fem = assemble(SpaceMesh(np.array([0.0, 1.0])))
    np.testing.assert_allclose(fem.mass_dense(), [[1 / 3, 1 / 6], [1 / 6, 1 / 3]], rtol=1e-15)
    np.testing.assert_allclose(fem.stiff_dense(), [[1.0, -1.0], [-1.0, 1.0]], rtol=1e-15)


def test_stiffness_kernel_contains_constants():
    mesh = SpaceMesh(np.array([0.0, 0.3, 0.45, 1.2, 2.0]))
    fem = assemble(mesh)
    np.testing.assert_allclose(fem.stiff_matvec(np.ones(5)), 0.0, atol=1e-14)


def test_mass_total_equals_domain_measure():
    mesh = SpaceMesh.uniform(-20.0, 20.0, 2 ** 7)
    fem = assemble(mesh)
    total = np.sum(fem.mass_dense())
    assert total == pytest.approx(np.sum(mesh.widths), rel=1e-14)
    assert total == pytest.approx(40.0, rel=1e-14)


def test_degenerate_element_rejected():
    with pytest.raises(ValueError):
        SpaceMesh(np.array([0.0, 0.0, 1.0]))


def test_l2_projection_reproduces_p1_functions():
    mesh = SpaceMesh.uniform(0.0, 1.0, 7)
    coeffs = project_l2(mesh, lambda x: 2.0 * x - 0.25)
    np.testing.assert_allclose(coeffs, 2.0 * mesh.nodes - 0.25, rtol=1e-12, atol=1e-13)


# ---------------------------------------------------------------------------
# trajectories

def _state(grid, values, history="1", mesh=None):
    return StateTrajectory(grid=grid, values=values, history=HistorySpec(history), mesh=mesh)


def test_delayed_field_constant_history():
    mesh = SpaceMesh.uniform(0.0, 1.0, 4)
    grid = TimeGrid.uniform(1.0, 4)
    traj = _state(grid, np.zeros((5, 5)), history="1", mesh=mesh)
    np.testing.assert_allclose(delayed_field(traj, 0.3, 0.9), np.ones(5))


def test_delayed_field_at_node_returns_stored_vector():
    mesh = SpaceMesh.uniform(0.0, 1.0, 2)
    grid = TimeGrid.uniform(1.0, 4)
    values = np.arange(15, dtype=float).reshape(5, 3)
    traj = _state(grid, values, mesh=mesh)
    np.testing.assert_allclose(delayed_field(traj, 0.75, 0.25), values[2])


def test_delayed_field_midway_is_mean():
    mesh = SpaceMesh.uniform(0.0, 1.0, 2)
    grid = TimeGrid.uniform(1.0, 4)
    values = np.arange(15, dtype=float).reshape(5, 3)
    traj = _state(grid, values, mesh=mesh)
    np.testing.assert_allclose(delayed_field(traj, 0.875, 0.5),
                               0.5 * (values[1] + values[2]), rtol=1e-14)


def test_delayed_field_beyond_horizon_rejected():
    grid = TimeGrid.uniform(1.0, 4)
    traj = _state(grid, np.zeros(5))
    with pytest.raises(ValueError, match="beyond"):
        delayed_field(traj, 2.0, 0.5)


def test_delayed_field_linear_in_coefficients():
    mesh = SpaceMesh.uniform(0.0, 1.0, 3)
    grid = TimeGrid.uniform(1.0, 5)
    rng = np.random.default_rng(5)
    A = rng.standard_normal((6, 4))
    B = rng.standard_normal((6, 4))
    t, s = 0.77, 0.31
    fa = delayed_field(_state(grid, A, mesh=mesh), t, s)
    fb = delayed_field(_state(grid, B, mesh=mesh), t, s)
    fab = delayed_field(_state(grid, 2.0 * A - 0.5 * B, mesh=mesh), t, s)
    np.testing.assert_allclose(fab, 2.0 * fa - 0.5 * fb, rtol=1e-12, atol=1e-14)


def test_adjoint_zero_beyond_horizon():
    grid = TimeGrid.uniform(1.0, 4)
    adj = AdjointTrajectory(grid=grid, values=np.ones((4, 3)), mesh=SpaceMesh.uniform(0, 1, 2))
    np.testing.assert_allclose(adj.at_time(1.5), np.zeros(3))
    np.testing.assert_allclose(adj.at_time(0.9), np.ones(3))


# ---------------------------------------------------------------------------
# breakpoints

def test_breakpoints_zero_delay_has_no_interior_points():
    grid = TimeGrid.uniform(1.0, 4)
    assert breakpoints(grid, 2, (0.0,)).size == 0


def test_breakpoints_fractional_delay():
    # uniform tau, s = 1.5*tau: crossing t - s = t_{k-2} sits mid-slab
    grid = TimeGrid.uniform(4.0, 8)  # tau = 0.5
    tau = 0.5
    pts = breakpoints(grid, 4, (1.5 * tau,))
    np.testing.assert_allclose(pts, [grid.nodes[4] + 0.5 * tau])


def test_breakpoints_history_switch():
    # the crossing t - s = 0 falls inside the slab containing t = s
    grid = TimeGrid.uniform(4.0, 8)
    s = 1.3
    k = grid.slab_of(s)
    pts = breakpoints(grid, k, (s,))
    assert np.any(np.isclose(pts, s))


def test_breakpoint_subintervals_partition_slab():
    grid = TimeGrid.uniform(3.0, 7)
    delays = (0.0, 0.37, 1.11, 2.9)
    for k in range(grid.n_slabs):
        cuts = breakpoints(grid, k, delays)
        edges = np.concatenate(([grid.nodes[k]], cuts, [grid.nodes[k + 1]]))
        assert np.all(np.diff(edges) > 0)
        assert edges[0] == grid.nodes[k] and edges[-1] == grid.nodes[k + 1]


# ---------------------------------------------------------------------------
# couplings

def test_coupling_weights_sum_to_slab_length():
    grid = TimeGrid.uniform(2.0, 9)
    hist = HistorySpec("1")
    for s in (0.0, 0.123, 0.5, 1.7):
        c = build_coupling(grid, s, hist, None)
        for k in range(grid.n_slabs):
            ls, aw, bw = c.entries_of_slab(k)
            state_len = np.sum(aw) + np.sum(bw)
            hist_len = c.hist_nodal[k]  # constant history of value 1
            assert state_len + hist_len == pytest.approx(grid.widths[k], rel=1e-12)


def test_coupling_zero_delay_matches_trapezoid():
    grid = TimeGrid.uniform(2.0, 4)
    c = build_coupling(grid, 0.0, HistorySpec("1"), None)
    values = np.array([1.0, 3.0, -2.0, 4.0, 0.5])
    for k in range(4):
        expected = grid.widths[k] * 0.5 * (values[k] + values[k + 1])
        assert c.delayed_nodal(k, values) == pytest.approx(expected, rel=1e-14)


def test_merge_weighted_equals_channel_sum():
    grid = TimeGrid.uniform(2.0, 8)
    hist = HistorySpec("1 + t/3")
    c1 = build_coupling(grid, 0.4, hist, None)
    c2 = build_coupling(grid, 1.1, hist, None)
    merged = merge_weighted([(2.0, c1), (-0.5, c2)])
    values = np.linspace(-1, 1, 9) ** 2
    for k in range(8):
        want = 2.0 * c1.delayed_nodal(k, values) - 0.5 * c2.delayed_nodal(k, values)
        assert merged.delayed_nodal(k, values) == pytest.approx(want, rel=1e-13)
        want_sw = 2.0 * c1.self_weight(k) - 0.5 * c2.self_weight(k)
        assert merged.self_w[k] == pytest.approx(want_sw, abs=1e-15)


# ---------------------------------------------------------------------------
# CSV

def test_csv_roundtrip(tmp_path):
    times = np.array([0.0, 0.5, 1.0])
    values = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, -1.0 / 3.0]])
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, times, values)
    text = path.read_text()
    assert text.splitlines()[0] == "t,x_0,x_1"
    assert "\r" not in text
    t2, v2 = read_trajectory_csv(path)
    np.testing.assert_allclose(t2, times, rtol=1e-16)
    np.testing.assert_allclose(v2, values, rtol=1e-16)
