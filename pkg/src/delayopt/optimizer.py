"""Box-constrained first-order optimizer with limited-memory quasi-Newton
scaling, Armijo backtracking along the projected arc, and multi-start.

The core `minimize_box` works on plain callables so it can be exercised on
synthetic objectives; `optimize` wires it to the delay/weight problem through
the forward and adjoint solvers.
"""
from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .model import ControlVector, ProblemSpec, bounds_arrays, project_to_admissible

__all__ = ["OptimizerSettings", "RunRecord", "minimize_box", "optimize",
           "multistart", "latin_hypercube", "OptimizerError"]


class OptimizerError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerSettings:
    max_iterations: int = 500
    tolerance: float = 1e-6          # absolute bound on the projected gradient
    armijo: float = 1e-4
    backtrack: float = 0.5
    initial_step: float = 1.0
    memory: int = 10
    max_halvings: int = 40
    multistart_count: int = 1
    seed: int = 0
    workers: Optional[int] = None

    def __post_init__(self):
        if min(self.max_iterations, self.memory, self.max_halvings) <= 0:
            raise ValueError("iteration counts must be positive")
        if not (0 < self.tolerance < 1):
            raise ValueError("tolerance must lie in (0, 1)")
        if min(self.armijo, self.backtrack, self.initial_step) <= 0:
            raise ValueError("line-search constants must be positive")


@dataclass
class RunRecord:
    iterates: list = field(default_factory=list)
    termination: str = ""
    wall_time: float = 0.0
    start_index: int = 0

    @property
    def final(self) -> dict:
        return self.iterates[-1]

    @property
    def final_objective(self) -> float:
        return self.final["J"]

    def to_json_lines(self, path):
        # wall_time is deliberately not serialized: file outputs stay
        # byte-deterministic for a given config and seed
        with open(path, "w", newline="\n") as fh:
            for it in self.iterates:
                fh.write(json.dumps(it) + "\n")
            fh.write(json.dumps({"termination": self.termination,
                                 "start_index": self.start_index}) + "\n")


def _bound_masks(x, lo, hi):
    lo_f = np.where(np.isfinite(lo), lo, 0.0)
    hi_f = np.where(np.isfinite(hi), hi, 0.0)
    at_lo = np.isfinite(lo) & (x <= lo_f + 1e-9 * (1.0 + np.abs(lo_f)))
    at_hi = np.isfinite(hi) & (x >= hi_f - 1e-9 * (1.0 + np.abs(hi_f)))
    return at_lo, at_hi


def _projected_norm(x, g, lo, hi):
    at_lo, at_hi = _bound_masks(x, lo, hi)
    vals = np.abs(g).copy()
    vals[at_lo] = np.abs(np.minimum(0.0, g[at_lo]))
    vals[at_hi] = np.abs(np.maximum(0.0, g[at_hi]))
    vals[at_lo & at_hi] = 0.0
    return float(np.max(vals)) if len(vals) else 0.0


def _active_set(x, lo, hi):
    at_lo, at_hi = _bound_masks(x, lo, hi)
    return tuple(np.where(at_lo, -1, np.where(at_hi, 1, 0)))


def _lbfgs_direction(g, pairs):
    q = -g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * np.dot(s, q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= np.dot(s, y) / np.dot(y, y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return q


def minimize_box(value: Callable, value_and_grad: Callable, x0, lo, hi,
                 settings: OptimizerSettings, record_extra: Optional[Callable] = None):
    """Projected quasi-Newton descent on a box.

    `value(x)` returns J (may raise to signal an infeasible trial point, which
    rejects the step); `value_and_grad(x)` returns (J, g).  Returns the final
    point and a RunRecord whose accepted iterates have non-increasing J.
    """
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    J, g = value_and_grad(x)
    record = RunRecord()
    pairs = []
    bb_scale = None  # curvature estimate s.s/s.y of the most recent pair
    active = _active_set(x, lo, hi)

    def log(xv, Jv, pn):
        entry = {"x": [float(v) for v in xv], "J": float(Jv), "projected_norm": float(pn)}
        if record_extra is not None:
            entry.update(record_extra(xv))
        record.iterates.append(entry)

    t0 = time.perf_counter()
    pn = _projected_norm(x, g, lo, hi)
    log(x, J, pn)
    for _ in range(settings.max_iterations):
        if pn <= settings.tolerance:
            record.termination = "converged"
            break

        def fallback_direction():
            if bb_scale is not None:
                return -bb_scale * g  # Barzilai-Borwein curvature scaling
            # no curvature seen yet: unit steps move O(1) per coordinate
            return -g / max(1.0, float(np.max(np.abs(g))))

        use_quasi_newton = bool(pairs)
        if use_quasi_newton:
            d = _lbfgs_direction(g, pairs)
            if np.dot(g, d) >= 0:
                pairs.clear()
                use_quasi_newton = False
        if not use_quasi_newton:
            d = fallback_direction()

        accepted = False
        while True:
            alpha = settings.initial_step
            for _ in range(settings.max_halvings):
                x_new = np.clip(x + alpha * d, lo, hi)
                dx = x_new - x
                decrease = float(np.dot(g, dx))
                if decrease >= 0:
                    alpha *= settings.backtrack
                    continue
                try:
                    J_new = value(x_new)
                except Exception:
                    alpha *= settings.backtrack
                    continue
                if np.isfinite(J_new) and J_new <= J + settings.armijo * decrease:
                    accepted = True
                    break
                alpha *= settings.backtrack
            if accepted or not use_quasi_newton:
                break
            # quasi-Newton direction failed; retry along the scaled gradient
            # (memory is kept: one noisy rejection must not discard curvature)
            d = fallback_direction()
            use_quasi_newton = False
        if not accepted:
            record.termination = "line_search_failure"
            break

        J_new, g_new = value_and_grad(x_new)
        s = x_new - x
        y = g_new - g
        sy = float(np.dot(s, y))
        new_active = _active_set(x_new, lo, hi)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y) + 1e-300):
            bb_scale = float(np.dot(s, s)) / sy
        if new_active != active:
            pairs.clear()  # curvature pairs are invalid across active-set changes
        elif sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y) + 1e-300):
            pairs.append((s, y, 1.0 / sy))
            if len(pairs) > settings.memory:
                pairs.pop(0)
        active = new_active
        x, J, g = x_new, J_new, g_new
        pn = _projected_norm(x, g, lo, hi)
        log(x, J, pn)
    else:
        record.termination = "max_iterations"
    record.wall_time = time.perf_counter() - t0
    return x, record


# ---------------------------------------------------------------------------
# problem-level wrappers

def _solver_closures(spec: ProblemSpec, mesh, grid, settings=None):
    from .forward import SolverError, solve_state, solve_state_ode_mode
    from .objective import assemble_gradient, evaluate_objective
    from .adjoint import solve_adjoint

    with_shift = spec.shifted
    m = spec.num_delays
    cache = {}

    def solve(x):
        key = x.tobytes()
        hit = cache.get(key)
        if hit is not None:
            return hit
        u = ControlVector.from_array(x, m, with_shift)
        if mesh is None:
            state = solve_state_ode_mode(spec, u, grid, settings)
        else:
            state = solve_state(spec, u, mesh, grid, settings)
        J = evaluate_objective(spec, u, state)
        cache.clear()  # only the most recent point is ever revisited
        cache[key] = (u, state, J)
        return u, state, J

    def value(x):
        return solve(x)[2]

    def value_and_grad(x):
        u, state, J = solve(x)
        adj = solve_adjoint(spec, u, state)
        g = assemble_gradient(spec, u, state, adj)
        return J, g.as_array()

    return value, value_and_grad


def optimize(spec: ProblemSpec, mesh, grid, u0: ControlVector,
             settings: Optional[OptimizerSettings] = None,
             newton_settings=None):
    """Minimize the tracking objective from one start; mesh=None runs the
    scalar mode.  Returns (u_final, RunRecord)."""
    settings = settings or OptimizerSettings()
    u0 = project_to_admissible(u0, spec)
    if spec.shifted and u0.shift is None:
        u0 = ControlVector(u0.delays, u0.weights, 0.0)
    lo, hi = bounds_arrays(spec, spec.shifted)
    value, value_and_grad = _solver_closures(spec, mesh, grid, newton_settings)
    x, record = minimize_box(value, value_and_grad, u0.as_array(), lo, hi, settings)
    return ControlVector.from_array(x, spec.num_delays, spec.shifted), record


def _run_start(args):
    spec, mesh, grid, u0, settings, index = args
    try:
        u, record = optimize(spec, mesh, grid, u0, settings)
        record.start_index = index
        return index, u, record, None
    except Exception as e:  # surfaced in the aggregate error
        return index, None, None, repr(e)


def multistart(spec: ProblemSpec, mesh, grid, starts: Sequence[ControlVector],
               settings: Optional[OptimizerSettings] = None):
    """Independent optimize runs, ranked by final objective.

    Runs execute in parallel worker processes when `settings.workers` (or the
    DELAYOPT_THREADS environment variable) allows it; results are
    deterministic given the start list.
    """
    if not starts:
        raise OptimizerError("multistart requires at least one start")
    settings = settings or OptimizerSettings()
    workers = settings.workers
    if workers is None:
        workers = int(os.environ.get("DELAYOPT_THREADS", "1"))
    workers = max(1, min(workers, len(starts)))

    jobs = [(spec, mesh, grid, u0, settings, i) for i, u0 in enumerate(starts)]
    if workers == 1:
        results = [_run_start(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_start, jobs))

    ok = [(i, u, rec) for i, u, rec, err in results if rec is not None]
    errors = [(i, err) for i, _, _, err in results if err is not None]
    if not ok:
        raise OptimizerError(f"all multistart runs failed: {errors}")
    ranked = sorted(ok, key=lambda item: (item[2].final_objective, item[0]))
    return [(u, rec) for _, u, rec in ranked]


def latin_hypercube(ranges: Sequence, count: int, seed: int) -> np.ndarray:
    """Stratified samples, one column per dimension, inside the given ranges."""
    rng = np.random.default_rng(seed)
    dims = len(ranges)
    out = np.empty((count, dims))
    for j, (lo, hi) in enumerate(ranges):
        strata = (rng.permutation(count) + rng.random(count)) / count
        out[:, j] = lo + (hi - lo) * strata
    return out
