"""Reference computations kept independent of the main solver path.

Three tools: a method-of-steps integrator for the linear scalar delay
equation y'(t) = -a y(t-d) (doubles as the factory for the oscillatory
reference target), central finite differences of the tracking objective,
and manufactured-solution convergence studies for the time-marching scheme.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["DenseDdeSolution", "solve_linear_dde", "fd_gradient", "convergence_study"]


@dataclass(frozen=True)
class DenseDdeSolution:
    """Dense output of y'(t) = -a y(t-d) with constant history.

    Nodal values and derivatives on a uniform grid; evaluation between nodes
    uses the cubic Hermite interpolant, which keeps the dense output C^1 and
    globally consistent with the stored derivatives.
    """

    a: float
    d: float
    history: float
    step: float
    times: np.ndarray
    values: np.ndarray
    derivs: np.ndarray

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def eval(self, t):
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        if np.any(t > self.t_end + 1e-9 * max(1.0, self.t_end)):
            raise ValueError(f"evaluation beyond computed horizon {self.t_end}")
        out = np.full(t.shape, self.history, dtype=float)
        pos = t > 0.0
        if np.any(pos):
            tp = np.minimum(t[pos], self.t_end)
            idx = np.minimum((tp / self.step).astype(int), len(self.times) - 2)
            h = self.step
            theta = (tp - self.times[idx]) / h
            th2 = theta * theta
            th3 = th2 * theta
            h00 = 2 * th3 - 3 * th2 + 1
            h10 = th3 - 2 * th2 + theta
            h01 = -2 * th3 + 3 * th2
            h11 = th3 - th2
            out[pos] = (h00 * self.values[idx] + h * h10 * self.derivs[idx]
                        + h01 * self.values[idx + 1] + h * h11 * self.derivs[idx + 1])
        return float(out[0]) if scalar else out

    def deriv(self, t):
        """Exact derivative through the equation itself: y'(t) = -a y(t-d)."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        out = np.where(t > 0.0, -self.a * self.eval(np.maximum(t - self.d, -self.d)), 0.0)
        return float(out[0]) if scalar else out

    def to_csv(self, path, times=None):
        """Export in the shared trajectory CSV layout (header t,x_0)."""
        from .discretization import write_trajectory_csv
        times = self.times if times is None else np.asarray(times, dtype=float)
        write_trajectory_csv(path, times, self.eval(times)[:, None])


def solve_linear_dde(a: float, d: float, history: float, T: float, step: float) -> DenseDdeSolution:
    """Integrate y'(t) = -a y(t-d), y = history on (-inf, 0], up to at least T.

    Classic 4-stage Runge-Kutta; because the step divides the delay, every
    delayed evaluation falls on an already-computed node or mid-step point of
    the dense interpolant of the previous delay interval.
    """
    if d <= 0:
        raise ValueError("delay must be positive")
    if step <= 0:
        raise ValueError("step must be positive")
    n_per = round(d / step)
    if n_per < 1 or abs(n_per * step - d) > 1e-9 * d:
        raise ValueError(f"step {step} does not divide the delay {d}")
    n_steps = int(np.ceil(T / step - 1e-12))
    n_steps = max(n_steps, 1)

    times = step * np.arange(n_steps + 1)
    values = np.empty(n_steps + 1)
    derivs = np.empty(n_steps + 1)
    values[0] = history
    derivs[0] = -a * history

    sol = DenseDdeSolution(a=a, d=d, history=history, step=step,
                           times=times, values=values, derivs=derivs)

    # delayed stage values from the stored grid: node points directly, the
    # half-step point through the cubic Hermite interpolant at theta = 1/2
    def delayed_node(i):
        j = i - n_per
        return history if j < 0 else values[j]

    def delayed_mid(i):
        j = i - n_per
        if j < 0:
            return history
        return 0.5 * (values[j] + values[j + 1]) + (step / 8.0) * (derivs[j] - derivs[j + 1])

    h = step
    for i in range(n_steps):
        # rhs depends on the delayed value only, so the stages reduce cleanly
        k1 = -a * delayed_node(i)
        k2 = -a * delayed_mid(i)
        k4 = -a * delayed_node(i + 1)
        values[i + 1] = values[i] + (h / 6.0) * (k1 + 4 * k2 + k4)
        derivs[i + 1] = k4
    return sol


# ---------------------------------------------------------------------------
# finite-difference gradient of the tracking objective

def fd_gradient(spec, u, mesh, grid, step_scale: float = 1e-4, settings=None):
    """Central differences of the objective, re-solving the state per probe.

    Coordinates touching their bound fall back to one-sided differences; the
    affected coordinate names are recorded in the result's `one_sided` field.
    Pass mesh=None for the scalar (spatially constant) mode.
    """
    from .forward import solve_state, solve_state_ode_mode
    from .objective import GradientVector, projected_norm_of
    from .model import ControlVector, bounds_arrays

    m = u.m
    with_shift = u.shift is not None
    x0 = u.as_array()
    lo, hi = bounds_arrays(spec, with_shift)

    def J_at(x):
        uu = ControlVector.from_array(x, m, with_shift)
        if mesh is None:
            state = solve_state_ode_mode(spec, uu, grid, settings)
        else:
            state = solve_state(spec, uu, mesh, grid, settings)
        from .objective import evaluate_objective
        return evaluate_objective(spec, uu, state)

    g = np.zeros_like(x0)
    one_sided = []
    names = ([f"s_{i}" for i in range(m)] + [f"kappa_{i}" for i in range(m)]
             + (["shift"] if with_shift else []))
    for j in range(len(x0)):
        h = step_scale * (1.0 + abs(x0[j]))  # sign of h cancels in the central formula
        habs = abs(h)
        can_minus = x0[j] - habs >= lo[j]
        can_plus = x0[j] + habs <= hi[j]
        xp, xm = x0.copy(), x0.copy()
        if can_minus and can_plus:
            xp[j] += h
            xm[j] -= h
            g[j] = (J_at(xp) - J_at(xm)) / (2 * h)
        elif can_plus:
            xp[j] += habs
            g[j] = (J_at(xp) - J_at(x0)) / habs
            one_sided.append(names[j])
        else:
            xm[j] -= habs
            g[j] = (J_at(x0) - J_at(xm)) / habs
            one_sided.append(names[j])

    d_shift = float(g[2 * m]) if with_shift else None
    pn = projected_norm_of(spec, u, g)
    return GradientVector(tuple(g[:m]), tuple(g[m:2 * m]), d_shift, pn,
                          one_sided=tuple(one_sided))


# ---------------------------------------------------------------------------
# convergence studies

def _l2_error_ode(state, exact, grid):
    # 4-point Gauss per slab of (y_sigma - exact)^2
    from .discretization import gauss_rule
    pts, wts = gauss_rule(4)
    nodes = grid.nodes
    tau = np.diff(nodes)
    tq = nodes[:-1, None] + tau[:, None] * pts[None, :]
    lam = pts[None, :]
    y = state.values
    yq = y[:-1, None] * (1 - lam) + y[1:, None] * lam
    err2 = (yq - exact(tq)) ** 2
    return float(np.sqrt(np.sum(err2 * (tau[:, None] * wts[None, :]))))


def _l2_error_pde(state, exact, mesh, grid):
    from .discretization import gauss_rule
    pts, wts = gauss_rule(4)
    nodes = grid.nodes
    tau = np.diff(nodes)
    xq = mesh.nodes[:-1, None] + mesh.widths[:, None] * pts[None, :]  # (ne, 4)
    total = 0.0
    for k in range(len(tau)):
        tq = nodes[k] + tau[k] * pts
        for q in range(len(pts)):
            c = state.values[k] * (1 - pts[q]) + state.values[k + 1] * pts[q]
            yh = c[:-1, None] * (1 - pts[None, :]) + c[1:, None] * pts[None, :]
            diff2 = (yh - exact(xq, tq[q])) ** 2
            space = np.sum(diff2 * wts[None, :] * mesh.widths[:, None])
            total += tau[k] * wts[q] * space
    return float(np.sqrt(total))


def convergence_study(case: str, levels) -> list:
    """Manufactured-solution errors and observed orders.

    case 'ode_decay':   y' = -y, y(0) = 1 on (0, 2], temporal refinement.
    case 'heat_neumann': heat equation with the first Neumann cosine mode on
                         (-20, 20), simultaneous space-time refinement.
    case 'constant':    zero right-hand side with constant data; the scheme
                        reproduces the constant, so errors vanish.
    Returns one dict per level with keys level, error, order (order is None
    on the first level).
    """
    from .discretization import SpaceMesh, TimeGrid
    from .forward import solve_state, solve_state_ode_mode
    from .model import ControlVector, HistorySpec, ProblemSpec, ReactionSpec, TargetSpec

    rows = []
    if case == "ode_decay":
        spec = ProblemSpec.build(
            horizon=2.0, num_delays=1, delay_bounds=(0.0, 2.0),
            weight_bounds=(-1.0, 1.0), nu=0.0,
            reaction=ReactionSpec.polynomial((0.0, 1.0)),
            history=HistorySpec("1"), target=TargetSpec.expression("0"))
        u = ControlVector.of([1.0], [0.0])
        for lev in levels:
            grid = TimeGrid.uniform(spec.horizon, int(lev))
            state = solve_state_ode_mode(spec, u, grid)
            err = _l2_error_ode(state, lambda t: np.exp(-t), grid)
            rows.append({"level": int(lev), "error": err})
    elif case == "heat_neumann":
        lam = (np.pi / 40.0) ** 2
        spec = ProblemSpec.build(
            space_interval=(-20.0, 20.0), horizon=40.0, num_delays=1,
            delay_bounds=(0.0, 40.0), weight_bounds=(-1.0, 1.0), nu=0.0,
            reaction=ReactionSpec.zero(),
            history=HistorySpec("cos(pi/40*(x+20))"),
            target=TargetSpec.expression("0"))
        u = ControlVector.of([1.0], [0.0])

        def exact(x, t):
            return np.cos(np.pi / 40.0 * (x + 20.0)) * np.exp(-lam * t)

        for lev in levels:
            mesh = SpaceMesh.uniform(-20.0, 20.0, int(lev))
            grid = TimeGrid.uniform(spec.horizon, int(lev))
            state = solve_state(spec, u, mesh, grid)
            err = _l2_error_pde(state, exact, mesh, grid)
            rows.append({"level": int(lev), "error": err})
    elif case == "constant":
        spec = ProblemSpec.build(
            horizon=2.0, num_delays=1, delay_bounds=(0.0, 2.0),
            weight_bounds=(-1.0, 1.0), nu=0.0, reaction=ReactionSpec.zero(),
            history="1", target=TargetSpec.expression("1"))
        u = ControlVector.of([0.5], [0.0])
        for lev in levels:
            grid = TimeGrid.uniform(spec.horizon, int(lev))
            state = solve_state_ode_mode(spec, u, grid)
            err = _l2_error_ode(state, lambda t: np.ones_like(t), grid)
            rows.append({"level": int(lev), "error": err})
    else:
        raise ValueError(f"unknown study case {case!r}")

    for i, row in enumerate(rows):
        if i == 0 or rows[i - 1]["error"] == 0.0:
            row["order"] = None
        else:
            row["order"] = float(np.log2(rows[i - 1]["error"] / row["error"]))
    return rows
