"""Backward solve of the advanced-argument adjoint system and the tangent
(linearized) forward solves used to verify it.

The adjoint is assembled as the exact transpose of the linearized discrete
forward operator: every delayed-coupling weight computed for the state march
is reused on the adjoint side, which makes the discrete pairing identity
<A_s phi, z> = <phi, D_s z> hold to machine precision and the assembled
gradient the exact derivative of the discrete objective.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.linalg import solve_banded

from .discretization import (AdjointTrajectory, StateTrajectory, assemble,
                             build_coupling, gauss_rule, merge_weighted)
from .forward import ReactionOps, SolverError, build_channels, _quad_orders
from .model import ControlVector, ProblemSpec
from .objective import tracking_source

__all__ = ["solve_adjoint", "solve_tangent", "apply_delayed", "apply_advanced"]


def _check_grid(state: StateTrajectory, grid):
    if grid is not None and not np.array_equal(grid.nodes, state.grid.nodes):
        raise SolverError("state was solved on a different time grid")
    return state.grid


def _delayed_known(channels, k, values, n):
    """Channel-weighted delayed integrals over slab k (state part + history)."""
    acc = np.zeros(n) if n else 0.0
    for w, c in channels:
        acc = acc + w * c.delayed_nodal(k, values)
    return acc


def solve_adjoint(spec: ProblemSpec, u: ControlVector, state: StateTrajectory,
                  mesh=None, grid=None) -> AdjointTrajectory:
    """March the adjoint slabs backward from the implicit zero terminal value.

    Advanced couplings phi(t + s_i) beyond the horizon contribute nothing;
    those landing in the current slab sit in the system matrix (the transpose
    of the forward Newton matrix at convergence).
    """
    grid = _check_grid(state, grid)
    if mesh is not None and state.mesh is not None \
            and not np.array_equal(mesh.nodes, state.mesh.nodes):
        raise SolverError("state was solved on a different mesh")
    channels, _, _ = build_channels(spec, u, grid, state.mesh)
    merged = merge_weighted(channels)
    G = tracking_source(spec, u, state)
    N = grid.n_slabs
    tau = grid.widths
    Y = state.values

    if state.is_scalar:
        return _solve_adjoint_scalar(spec, u, state, merged, G)

    fem = assemble(state.mesh)
    rops = ReactionOps(state.mesh, spec.reaction)
    lam, wt = gauss_rule(rops.n_time_q)
    n = state.mesh.n_nodes

    # reaction-Jacobian aggregates per slab, split by the two hat factors
    C_diag = np.zeros((N, n)); C_off = np.zeros((N, n - 1))
    Cp_diag = np.zeros((N, n)); Cp_off = np.zeros((N, n - 1))
    for k in range(N):
        tq = grid.nodes[k] + tau[k] * lam
        wq = tau[k] * wt
        C_diag[k], C_off[k] = rops.weighted_mass_slab(Y[k], Y[k + 1], lam, wq, tq, lam)
        Cp_diag[k], Cp_off[k] = rops.weighted_mass_slab(Y[k], Y[k + 1], lam, wq, tq, 1 - lam)

    Phi = np.zeros((N, n))
    ab = np.zeros((3, n))
    for i in range(N, 0, -1):
        k = i - 1
        rhs = G[i].copy()
        if i <= N - 1:
            p = Phi[i]
            rhs += fem.mass_matvec(p)
            rhs -= (tau[i] / 2.0) * fem.stiff_matvec(p)
            loc = Cp_diag[i] * p
            loc[:-1] += Cp_off[i] * p[1:]
            loc[1:] += Cp_off[i] * p[:-1]
            rhs -= loc
        ks, aw, _ = merged.entries_at_node(i)
        acc = np.tensordot(aw, Phi[ks], axes=(0, 0)) if len(ks) else np.zeros(n)
        ks2, _, bw = merged.entries_at_node(i - 1)
        sel = ks2 >= i
        if np.any(sel):
            acc += np.tensordot(bw[sel], Phi[ks2[sel]], axes=(0, 0))
        rhs += fem.mass_matvec(acc)

        self_w = merged.self_w[k]
        diag = fem.mass_diag * (1.0 - self_w) + (tau[k] / 2.0) * fem.stiff_diag + C_diag[k]
        off = fem.mass_off * (1.0 - self_w) + (tau[k] / 2.0) * fem.stiff_off + C_off[k]
        ab[0, 1:] = off
        ab[1, :] = diag
        ab[2, :-1] = off
        try:
            Phi[k] = solve_banded((1, 1), ab, rhs, check_finite=False)
        except np.linalg.LinAlgError as e:  # pragma: no cover - defensive
            raise SolverError(f"singular adjoint system in slab {k}: {e}", slab=k)
        if not np.all(np.isfinite(Phi[k])):
            raise SolverError(f"singular adjoint system in slab {k}", slab=k)
    return AdjointTrajectory(grid=grid, values=Phi, mesh=state.mesh)


def _solve_adjoint_scalar(spec, u, state, merged, G):
    grid = state.grid
    N = grid.n_slabs
    tau = grid.widths
    Y = state.values
    reaction = spec.reaction
    n_time_q, _ = _quad_orders(reaction)
    lam, wt = gauss_rule(n_time_q)

    # reaction-derivative aggregates, vectorized over slabs
    tq = grid.nodes[:-1, None] + tau[:, None] * lam[None, :]
    yq = (1 - lam[None, :]) * Y[:-1, None] + lam[None, :] * Y[1:, None]
    dr = np.asarray(reaction.deriv(yq, x=None, t=tq), dtype=float) * np.ones_like(yq)
    C = tau * ((dr * lam[None, :]) @ wt)
    Cp = tau * ((dr * (1 - lam[None, :])) @ wt)

    Phi = np.zeros(N)
    for i in range(N, 0, -1):
        k = i - 1
        rhs = float(G[i])
        if i <= N - 1:
            rhs += Phi[i] - Cp[i] * Phi[i]
        ks, aw, _ = merged.entries_at_node(i)
        if len(ks):
            rhs += float(np.dot(aw, Phi[ks]))
        ks2, _, bw = merged.entries_at_node(i - 1)
        sel = ks2 >= i
        if np.any(sel):
            rhs += float(np.dot(bw[sel], Phi[ks2[sel]]))
        denom = 1.0 - merged.self_w[k] + C[k]
        if denom == 0.0 or not np.isfinite(denom):
            raise SolverError(f"singular adjoint system in slab {k}", slab=k)
        Phi[k] = rhs / denom
    return AdjointTrajectory(grid=grid, values=Phi, mesh=None)


# ---------------------------------------------------------------------------
# tangent (linearized) solve

def solve_tangent(spec: ProblemSpec, u: ControlVector, state: StateTrajectory,
                  direction: tuple) -> np.ndarray:
    """Directional state derivative for direction ('delay', i) or ('weight', i).

    Marches the linearization of the slab equations around the solved state
    with zero initial data and zero history; returns the nodal array Z with
    one row per time node.
    """
    kind, idx = direction
    if kind not in ("delay", "weight"):
        raise ValueError(f"unknown tangent direction {kind!r}")
    grid = state.grid
    channels, couplings, zero_coupling = build_channels(spec, u, grid, state.mesh)
    merged = merge_weighted(channels)
    ci = couplings[idx]
    kappa_i = u.weights[idx]
    N = grid.n_slabs
    tau = grid.widths
    Y = state.values
    scalar = state.is_scalar

    if scalar:
        n = None
        Z = np.zeros(N + 1)
        delta0 = float(spec.history.value(None, 0.0)) - Y[0]
    else:
        n = state.mesh.n_nodes
        Z = np.zeros((N + 1, n))
        hist0 = np.asarray(spec.history.value(state.mesh.nodes, 0.0), dtype=float) \
            * np.ones(n)
        delta0 = hist0 - Y[0]
        fem = assemble(state.mesh)
        rops = ReactionOps(state.mesh, spec.reaction)

    reaction = spec.reaction
    n_time_q, _ = _quad_orders(reaction)
    lam, wt = gauss_rule(n_time_q)

    def source(k):
        if kind == "weight":
            src = ci.delayed_nodal(k, Y)
            if spec.variant == "pyragas":
                src = src - zero_coupling.delayed_nodal(k, Y)
            return src
        src = -kappa_i * ci.delayed_dt_nodal(k, Y, tau)
        if ci.jump_slab == k:
            src = src + kappa_i * delta0
        return src

    if scalar:
        for k in range(N):
            tq = grid.nodes[k] + tau[k] * lam
            yq = (1 - lam) * Y[k] + lam * Y[k + 1]
            dr = np.asarray(reaction.deriv(yq, x=None, t=tq), dtype=float) * np.ones_like(yq)
            C = tau[k] * float(np.sum(wt * lam * dr))
            Cp = tau[k] * float(np.sum(wt * (1 - lam) * dr))
            self_w = merged.self_w[k]
            # Z rows have zero history: strip the history loads baked into the coupling
            known = merged.delayed_nodal(k, Z) - merged.hist_nodal[k]
            rhs = Z[k] - Cp * Z[k] + known + source(k)
            Z[k + 1] = rhs / (1.0 - self_w + C)
        return Z

    ab = np.zeros((3, n))
    for k in range(N):
        tq = grid.nodes[k] + tau[k] * lam
        wq = tau[k] * wt
        C_diag, C_off = rops.weighted_mass_slab(Y[k], Y[k + 1], lam, wq, tq, lam)
        Cp_diag, Cp_off = rops.weighted_mass_slab(Y[k], Y[k + 1], lam, wq, tq, 1 - lam)
        self_w = merged.self_w[k]
        acc = merged.delayed_nodal(k, Z) - merged.hist_nodal[k]
        rhs = fem.mass_matvec(Z[k] + acc) - (tau[k] / 2.0) * fem.stiff_matvec(Z[k])
        loc = Cp_diag * Z[k]
        loc[:-1] += Cp_off * Z[k][1:]
        loc[1:] += Cp_off * Z[k][:-1]
        rhs -= loc
        rhs += fem.mass_matvec(source(k))
        diag = fem.mass_diag * (1.0 - self_w) + (tau[k] / 2.0) * fem.stiff_diag + C_diag
        off = fem.mass_off * (1.0 - self_w) + (tau[k] / 2.0) * fem.stiff_off + C_off
        ab[0, 1:] = off
        ab[1, :] = diag
        ab[2, :-1] = off
        Z[k + 1] = solve_banded((1, 1), ab, rhs, check_finite=False)
    return Z


# ---------------------------------------------------------------------------
# pairing operators (used by the transpose-identity check)

def apply_delayed(coupling, fem, Z: np.ndarray) -> np.ndarray:
    """Slab integrals of the delayed trajectory Z (zero history): D_s Z."""
    N = coupling.n_slabs
    scalar = fem is None
    out = np.zeros(N) if scalar else np.zeros((N, Z.shape[1]))
    for k in range(N):
        ls, aw, bw = coupling.entries_of_slab(k)
        acc = np.tensordot(aw, Z[ls], axes=(0, 0)) + np.tensordot(bw, Z[ls + 1], axes=(0, 0))
        out[k] = acc if scalar else fem.mass_matvec(acc)
    return out


def apply_advanced(coupling, fem, Phi: np.ndarray) -> np.ndarray:
    """Transpose of apply_delayed: nodal functional of the advanced field."""
    N = coupling.n_slabs
    scalar = fem is None
    out = np.zeros(N + 1) if scalar else np.zeros((N + 1, Phi.shape[1]))
    np.add.at(out, coupling.l_idx, coupling.a_w[:, None] * Phi[coupling.k_idx]
              if not scalar else coupling.a_w * Phi[coupling.k_idx])
    np.add.at(out, coupling.l_idx + 1, coupling.b_w[:, None] * Phi[coupling.k_idx]
              if not scalar else coupling.b_w * Phi[coupling.k_idx])
    if not scalar:
        out = np.array([fem.mass_matvec(row) for row in out])
    return out
