"""Slab-wise Newton solver for the delayed semilinear state equation.

Testing the continuous piecewise-linear trial space against slab indicators
yields one nonlinear system per slab for the end value Y[k+1]:

    M (Y[k+1] - Y[k]) + int_k K y dt + int_k R-load(y) dt
        = sum_i kappa_i * int_k delayed-load dt,

with all time integrals evaluated exactly over the breakpoint sub-partition
(a Crank-Nicolson-type marching).  When a delayed argument falls inside the
current slab the delayed value depends on the unknown end value and enters
the Newton matrix, so a zero delay degenerates gracefully to an implicit
undelayed term.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded

from .discretization import (SpaceMesh, TimeGrid, StateTrajectory, assemble,
                             build_coupling, gauss_rule, merge_weighted, project_l2)
from .model import PYRAGAS, ControlVector, ProblemSpec

__all__ = ["NewtonSettings", "SolverError", "solve_state", "solve_state_ode_mode",
           "build_channels", "ReactionOps"]


@dataclass(frozen=True)
class NewtonSettings:
    tolerance: float = 1e-12      # absolute, Euclidean norm of the slab residual
    max_iterations: int = 30
    damping: float = 0.5
    max_halvings: int = 20

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("Newton tolerance must be positive")


class SolverError(RuntimeError):
    def __init__(self, message: str, slab: Optional[int] = None, residual: Optional[float] = None):
        super().__init__(message)
        self.slab = slab
        self.residual = residual


def _quad_orders(reaction):
    """Time/space Gauss orders that integrate the reaction terms exactly for
    polynomial R (composition with the linear-in-(x,t) state), fixed 4-point
    rules otherwise."""
    if reaction.is_polynomial:
        deg = max(len(reaction.coefficients) - 1, 1)
        n_time = max(2, math.ceil((deg + 1) / 2))
        n_space = max(2, math.ceil((deg + 2) / 2))
        return n_time, n_space
    return 4, 4


class ReactionOps:
    """Vectorized spatial assembly of the reaction load and its Jacobian."""

    def __init__(self, mesh: SpaceMesh, reaction):
        self.reaction = reaction
        self.n_time_q, n_space_q = _quad_orders(reaction)
        pts, wts = gauss_rule(n_space_q)
        self.pts = pts
        self.xq = mesh.nodes[:-1, None] + mesh.widths[:, None] * pts[None, :]
        self.wh = mesh.widths[:, None] * wts[None, :]  # (ne, nq), absolute weights
        self.n_nodes = mesh.n_nodes

    def load_slab(self, yk, v, lam, wq, tq):
        """Time-quadrature sum of the reaction load over one slab.

        Evaluates all time Gauss points in one vectorized pass; the state at
        a point is the hat-function blend of the slab end values yk and v.
        """
        yq = yk[None, :] * (1.0 - lam[:, None]) + v[None, :] * lam[:, None]  # (nq_t, n)
        vals = self._at_quad_stack(yq)                                        # (nq_t, ne, nq_x)
        r = self.reaction.value(vals, x=self.xq[None], t=tq[:, None, None]) * self.wh[None]
        r = np.tensordot(wq, r, axes=(0, 0))
        out = np.zeros(self.n_nodes)
        out[:-1] += r @ (1.0 - self.pts)
        out[1:] += r @ self.pts
        return out

    def _at_quad_stack(self, yq_nodes):
        return yq_nodes[:, :-1, None] * (1.0 - self.pts[None, None, :]) \
            + yq_nodes[:, 1:, None] * self.pts[None, None, :]

    def weighted_mass_slab(self, yk, v, lam, wq, tq, lam_weight):
        """Reaction part of the slab Jacobian: sum_q wq*lam_q*W(y(t_q))."""
        yq = yk[None, :] * (1.0 - lam[:, None]) + v[None, :] * lam[:, None]
        vals = self._at_quad_stack(yq)
        w = self.reaction.deriv(vals, x=self.xq[None], t=tq[:, None, None]) * self.wh[None]
        w = np.tensordot(wq * lam_weight, w, axes=(0, 0))
        diag = np.zeros(self.n_nodes)
        diag[:-1] += w @ (1.0 - self.pts) ** 2
        diag[1:] += w @ self.pts ** 2
        off = w @ (self.pts * (1.0 - self.pts))
        return diag, off


def build_channels(spec: ProblemSpec, u: ControlVector, grid: TimeGrid,
                   mesh: Optional[SpaceMesh]):
    """Delayed-feedback channels as (weight, coupling) pairs.

    The Pyragas variant subtracts the instantaneous state; it is realized as
    one extra zero-delay channel with weight -sum(kappa), which makes the
    cancellation at s_i = 0 exact by construction.
    """
    couplings = [build_coupling(grid, s, spec.history, mesh) for s in u.delays]
    channels = [(k, c) for k, c in zip(u.weights, couplings)]
    zero_coupling = None
    if spec.variant == PYRAGAS:
        zero_coupling = build_coupling(grid, 0.0, spec.history, mesh)
        channels.append((-sum(u.weights), zero_coupling))
    return channels, couplings, zero_coupling


def solve_state(spec: ProblemSpec, u: ControlVector, mesh: SpaceMesh,
                grid: TimeGrid, settings: Optional[NewtonSettings] = None,
                diagnostics=None) -> StateTrajectory:
    """March the discrete state equation over all slabs."""
    settings = settings or NewtonSettings()
    for s in u.delays:
        if not s >= 0:
            raise SolverError(f"invalid delay {s}")
    fem = assemble(mesh)
    rops = ReactionOps(mesh, spec.reaction)
    lam, wt = gauss_rule(rops.n_time_q)
    channels, _, _ = build_channels(spec, u, grid, mesh)
    merged = merge_weighted(channels)

    nodes = grid.nodes
    tau = grid.widths
    n = mesh.n_nodes
    N = grid.n_slabs
    Y = np.zeros((N + 1, n))
    Y[0] = project_l2(mesh, lambda x: spec.history.value(x, 0.0))

    ab = np.zeros((3, n))
    for k in range(N):
        tk = tau[k]
        tq = nodes[k] + tk * lam
        wq = tk * wt
        yk = Y[k]
        self_w = merged.self_w[k]
        # delayed contributions from already-computed rows (Y[k+1] is still 0)
        known = merged.delayed_nodal(k, Y)
        const = (tk / 2.0) * fem.stiff_matvec(yk) - fem.mass_matvec(yk) \
            - fem.mass_matvec(known)

        def residual(v):
            out = (1.0 - self_w) * fem.mass_matvec(v) + (tk / 2.0) * fem.stiff_matvec(v)
            out += const
            out += rops.load_slab(yk, v, lam, wq, tq)
            return out

        v = 2.0 * yk - Y[k - 1] if k else yk.copy()  # linear predictor
        F = residual(v)
        norm = math.sqrt(float(F @ F))
        if not math.isfinite(norm):
            v = yk.copy()
            F = residual(v)
            norm = math.sqrt(float(F @ F))
        iters = 0
        while not norm <= settings.tolerance:  # NaN residual must not pass
            if iters >= settings.max_iterations:
                raise SolverError(
                    f"Newton did not converge in slab {k}: residual {norm:.3e}",
                    slab=k, residual=norm)
            wd, wo = rops.weighted_mass_slab(yk, v, lam, wq, tq, lam)
            ab[0, 1:] = fem.mass_off * (1.0 - self_w) + fem.stiff_off * (tk / 2.0) + wo
            ab[1, :] = fem.mass_diag * (1.0 - self_w) + fem.stiff_diag * (tk / 2.0) + wd
            ab[2, :-1] = ab[0, 1:]
            step = solve_banded((1, 1), ab, -F, check_finite=False)

            alpha = 1.0
            accepted = False
            for _ in range(settings.max_halvings + 1):
                v_new = v + alpha * step
                F_new = residual(v_new)
                norm_new = math.sqrt(float(F_new @ F_new))
                if math.isfinite(norm_new) and norm_new <= (1.0 - 1e-4 * alpha) * norm:
                    accepted = True
                    break
                alpha *= settings.damping
            if not accepted:
                raise SolverError(
                    f"Newton line search stalled in slab {k}: residual {norm:.3e}",
                    slab=k, residual=norm)
            v, F, norm = v_new, F_new, norm_new
            iters += 1
        Y[k + 1] = v
        if diagnostics is not None:
            diagnostics.write(f"slab {k}: newton_iterations={iters} residual={norm:.3e}\n")
    return StateTrajectory(grid=grid, values=Y, history=spec.history, mesh=mesh)


def solve_state_ode_mode(spec: ProblemSpec, u: ControlVector, grid: TimeGrid,
                         settings: Optional[NewtonSettings] = None,
                         diagnostics=None) -> StateTrajectory:
    """Spatially constant reduction: one scalar unknown per time node.

    Same slab equations with the spatial operator collapsed (unit mass, no
    diffusion); matches solve_state on a single-element mesh up to roundoff.
    """
    settings = settings or NewtonSettings()
    for s in u.delays:
        if not s >= 0:
            raise SolverError(f"invalid delay {s}")
    if spec.history.depends_on_space or spec.reaction.depends_on_space:
        raise SolverError("scalar mode requires space-independent history and reaction")

    reaction = spec.reaction
    n_time_q, _ = _quad_orders(reaction)
    lam, wt = gauss_rule(n_time_q)
    lam_l = lam.tolist()
    wt_l = wt.tolist()
    channels, _, _ = build_channels(spec, u, grid, mesh=None)
    merged = merge_weighted(channels)
    # per-slab python structures keep the inner loop allocation-free
    entries = [[] for _ in range(grid.n_slabs)]
    for e in range(len(merged.k_idx)):
        k_e, l_e = int(merged.k_idx[e]), int(merged.l_idx[e])
        if l_e != k_e:
            entries[k_e].append((l_e, float(merged.a_w[e]), float(merged.b_w[e])))
        else:  # the unknown part goes to the Newton matrix
            entries[k_e].append((l_e, float(merged.a_w[e]), 0.0))
    hist_loads = merged.hist_nodal.tolist()
    self_ws = merged.self_w.tolist()

    poly = reaction.is_polynomial
    if poly:
        coeffs = list(reaction.coefficients)[::-1]
        dcoeffs = list(reaction.derivative_coefficients)[::-1]

    nodes = grid.nodes
    tau = grid.widths.tolist()
    N = grid.n_slabs
    Y = [0.0] * (N + 1)
    Y[0] = float(spec.history.value(None, 0.0))

    for k in range(N):
        tk = tau[k]
        yk = Y[k]
        tqs = [nodes[k] + tk * l for l in lam_l]
        self_w = self_ws[k]
        known = hist_loads[k]
        for l, a, b in entries[k]:
            known += a * Y[l] + b * Y[l + 1]

        def residual(vv):
            out = (1.0 - self_w) * vv - yk - known
            for q in range(n_time_q):
                yq = (1.0 - lam_l[q]) * yk + lam_l[q] * vv
                if poly:
                    r = 0.0
                    for cc in coeffs:
                        r = r * yq + cc
                else:
                    r = float(reaction.value(yq, x=None, t=tqs[q]))
                out += tk * wt_l[q] * r
            return out

        v = 2.0 * yk - Y[k - 1] if k else yk

        F = residual(v)
        norm = abs(F)
        if not math.isfinite(norm):
            v = yk
            F = residual(v)
            norm = abs(F)
        iters = 0
        while not norm <= settings.tolerance:  # NaN residual must not pass
            if iters >= settings.max_iterations:
                raise SolverError(
                    f"Newton did not converge in slab {k}: residual {norm:.3e}",
                    slab=k, residual=norm)
            jac = 1.0 - self_w
            for q in range(n_time_q):
                yq = (1.0 - lam_l[q]) * yk + lam_l[q] * v
                if poly:
                    dr = 0.0
                    for cc in dcoeffs:
                        dr = dr * yq + cc
                else:
                    dr = float(reaction.deriv(yq, x=None, t=tqs[q]))
                jac += tk * wt_l[q] * lam_l[q] * dr
            step = -F / jac
            alpha = 1.0
            accepted = False
            for _ in range(settings.max_halvings + 1):
                v_new = v + alpha * step
                F_new = residual(v_new)
                norm_new = abs(F_new)
                if math.isfinite(norm_new) and norm_new <= (1.0 - 1e-4 * alpha) * norm:
                    accepted = True
                    break
                alpha *= settings.damping
            if not accepted:
                raise SolverError(
                    f"Newton line search stalled in slab {k}: residual {norm:.3e}",
                    slab=k, residual=norm)
            v, F, norm = v_new, F_new, norm_new
            iters += 1
        Y[k + 1] = v
        if diagnostics is not None:
            diagnostics.write(f"slab {k}: newton_iterations={iters} residual={norm:.3e}\n")
    return StateTrajectory(grid=grid, values=np.asarray(Y), history=spec.history, mesh=None)
