"""Tracking objective, its discrete gradient and stationarity diagnostics.

The functional is one half of the space-time quadrature of the squared
tracking residual over the objective window plus a quadratic weight penalty.
The adjoint-based gradient differentiates exactly the *implemented* quadrature
sum, so adjoint, tangent and finite-difference derivatives agree to solver
precision by construction.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .discretization import StateTrajectory, assemble, gauss_rule
from .model import PYRAGAS, ControlVector, ProblemSpec, bounds_arrays
from .targets import make_target

__all__ = ["GradientVector", "evaluate_objective", "tracking_source",
           "assemble_gradient", "stationarity_check", "StationarityReport",
           "projected_norm_of", "window_slab_range"]


@dataclass(frozen=True)
class GradientVector:
    d_delays: tuple
    d_weights: tuple
    d_shift: Optional[float]
    projected_norm: float
    one_sided: tuple = ()

    def as_array(self) -> np.ndarray:
        vals = list(self.d_delays) + list(self.d_weights)
        if self.d_shift is not None:
            vals.append(self.d_shift)
        return np.asarray(vals, dtype=float)

    def to_json(self) -> str:
        return json.dumps({
            "d_s": list(self.d_delays),
            "d_kappa": list(self.d_weights),
            "d_shift": self.d_shift,
            "projected_norm": self.projected_norm,
        })


def window_slab_range(grid, window):
    """Slab index range [k0, k1) covering the objective window.

    Window edges must coincide with time nodes; this keeps the adjoint source
    slab-aligned and the gradient exact.
    """
    ta, tb = window
    tol = 1e-9 * max(1.0, grid.T)
    k0 = int(np.argmin(np.abs(grid.nodes - ta)))
    k1 = int(np.argmin(np.abs(grid.nodes - tb)))
    if abs(grid.nodes[k0] - ta) > tol or abs(grid.nodes[k1] - tb) > tol:
        raise ValueError(f"objective window {window} does not align with time nodes")
    if k1 <= k0:
        raise ValueError(f"empty objective window {window}")
    return k0, k1


class _Quad:
    """Shared space-time quadrature over the objective window."""

    def __init__(self, spec: ProblemSpec, state: StateTrajectory):
        grid = state.grid
        self.state = state
        self.scalar = state.is_scalar
        self.k0, self.k1 = window_slab_range(grid, spec.objective_window)
        lam, wt = gauss_rule(4)
        self.lam = lam
        sl = slice(self.k0, self.k1)
        tau = grid.widths[sl]
        self.tq = grid.nodes[sl, None] + tau[:, None] * lam[None, :]      # (K, 4)
        self.tw = tau[:, None] * wt[None, :]                              # (K, 4)
        self.n_slabs_total = grid.n_slabs
        self.target = make_target(spec, n_slabs_hint=grid.n_slabs)
        Y = state.values
        if self.scalar:
            self.yq = Y[sl, None] * (1 - lam[None, :]) + Y[self.k0 + 1:self.k1 + 1, None] * lam[None, :]
        else:
            mesh = state.mesh
            pts, wts = gauss_rule(4)
            self.pts = pts
            self.xq = mesh.nodes[:-1, None] + mesh.widths[:, None] * pts[None, :]   # (ne, 4)
            self.wh = mesh.widths[:, None] * wts[None, :]                           # (ne, 4)
            self.n_nodes = mesh.n_nodes
            cq = Y[sl, None, :] * (1 - lam[None, :, None]) \
                + Y[self.k0 + 1:self.k1 + 1, None, :] * lam[None, :, None]          # (K, 4, n)
            self.yq = cq[:, :, :-1, None] * (1 - pts[None, None, None, :]) \
                + cq[:, :, 1:, None] * pts[None, None, None, :]                     # (K, 4, ne, 4)

    def residual(self, shift: float):
        if self.scalar:
            return self.yq - self.target.value(None, self.tq, shift)
        return self.yq - self.target.value(self.xq[None, None, :, :],
                                           self.tq[:, :, None, None], shift)

    def tracking_value(self, r) -> float:
        if self.scalar:
            return 0.5 * float(np.sum(r * r * self.tw))
        return 0.5 * float(np.einsum("kqep,kq,ep->", r * r, self.tw, self.wh))

    def source(self, r) -> np.ndarray:
        """d(tracking)/dY, one row per time node (row 0 unused downstream)."""
        N = self.n_slabs_total
        if self.scalar:
            G = np.zeros(N + 1)
            contrib = r * self.tw
            lo = contrib @ (1 - self.lam)
            hi = contrib @ self.lam
        else:
            G = np.zeros((N + 1, self.n_nodes))
            rw = np.einsum("kqep,ep->kqep", r, self.wh)
            rho = np.zeros((r.shape[0], 4, self.n_nodes))
            rho[:, :, :-1] += rw @ (1 - self.pts)
            rho[:, :, 1:] += rw @ self.pts
            rho *= self.tw[:, :, None]
            lo = np.einsum("kqn,q->kn", rho, 1 - self.lam)
            hi = np.einsum("kqn,q->kn", rho, self.lam)
        G[self.k0:self.k1] += lo
        G[self.k0 + 1:self.k1 + 1] += hi
        return G

    def shift_derivative(self, r, shift: float) -> float:
        if self.scalar:
            dq = self.target.dt(None, self.tq, shift)
            return float(np.sum(r * dq * self.tw))
        dq = self.target.dt(self.xq[None, None, :, :], self.tq[:, :, None, None], shift)
        return float(np.einsum("kqep,kq,ep->", r * dq, self.tw, self.wh))


def _shift_of(spec: ProblemSpec, u: ControlVector) -> float:
    if spec.shifted:
        if u.shift is None:
            raise ValueError("shifted objective requires a control with a shift")
        return u.shift
    return 0.0


def evaluate_objective(spec: ProblemSpec, u: ControlVector, state: StateTrajectory) -> float:
    quad = _Quad(spec, state)
    r = quad.residual(_shift_of(spec, u))
    pen = 0.5 * spec.nu * float(np.dot(u.weights, u.weights))
    return quad.tracking_value(r) + pen


def tracking_source(spec: ProblemSpec, u: ControlVector, state: StateTrajectory) -> np.ndarray:
    """Derivative of the tracking quadrature with respect to the nodal values."""
    quad = _Quad(spec, state)
    return quad.source(quad.residual(_shift_of(spec, u)))


def assemble_gradient(spec: ProblemSpec, u: ControlVector, state: StateTrajectory,
                      adjoint) -> GradientVector:
    """Exact partial derivatives of the discrete objective.

    Delay derivative: -kappa_i * int phi * d_t y(t - s_i), split into state
    and history segments, plus the node-zero correction that accounts for the
    mismatch between the projected initial value and the interpolated history
    at the history/state switch.  Weight derivative: nu*kappa_i +
    int phi * y(t - s_i) (minus the instantaneous term for Pyragas feedback).
    """
    from .forward import build_channels

    grid = state.grid
    Yv = state.values
    Phi = adjoint.values
    scalar = state.is_scalar
    if scalar:
        MPhi = Phi
        delta0 = float(spec.history.value(None, 0.0)) - Yv[0]
    else:
        fem = assemble(state.mesh)
        MPhi = np.array([fem.mass_matvec(row) for row in Phi])
        hist0 = np.asarray(spec.history.value(state.mesh.nodes, 0.0), dtype=float) \
            * np.ones(state.mesh.n_nodes)
        delta0 = hist0 - Yv[0]

    channels, couplings, zero_coupling = build_channels(spec, u, grid, state.mesh)
    tau = grid.widths

    def pair_delayed(c):
        """sum_k <M phi_k, int_k delayed trajectory>"""
        ks, ls = c.k_idx, c.l_idx
        if scalar:
            total = float(np.sum(c.a_w * MPhi[ks] * Yv[ls] + c.b_w * MPhi[ks] * Yv[ls + 1]))
            total += float(np.sum(MPhi * c.hist_nodal))
        else:
            total = float(np.einsum("e,en->", c.a_w, MPhi[ks] * Yv[ls])
                          + np.einsum("e,en->", c.b_w, MPhi[ks] * Yv[ls + 1]))
            total += float(np.sum(MPhi * c.hist_nodal))
        return total

    def pair_delayed_dt(c):
        ks, ls = c.k_idx, c.l_idx
        length = (c.a_w + c.b_w) / tau[ls]
        if scalar:
            total = float(np.sum(length * MPhi[ks] * (Yv[ls + 1] - Yv[ls])))
            total += float(np.sum(MPhi * c.hist_dt_nodal))
        else:
            total = float(np.einsum("e,en->", length, MPhi[ks] * (Yv[ls + 1] - Yv[ls])))
            total += float(np.sum(MPhi * c.hist_dt_nodal))
        return total

    pyragas = spec.variant == PYRAGAS
    zero_pair = pair_delayed(zero_coupling) if pyragas else 0.0

    d_weights = []
    d_delays = []
    for i, (kappa, c) in enumerate(zip(u.weights, couplings)):
        dk = spec.nu * kappa + pair_delayed(c)
        if pyragas:
            dk -= zero_pair
        d_weights.append(dk)
        ds = -kappa * pair_delayed_dt(c)
        if c.jump_slab is not None:
            corr = float(MPhi[c.jump_slab] * delta0) if scalar \
                else float(np.dot(MPhi[c.jump_slab], delta0))
            ds += kappa * corr
        d_delays.append(ds)

    d_shift = None
    if spec.shifted:
        quad = _Quad(spec, state)
        d_shift = quad.shift_derivative(quad.residual(_shift_of(spec, u)), u.shift)

    g = np.asarray(d_delays + d_weights + ([d_shift] if d_shift is not None else []))
    pn = projected_norm_of(spec, u, g)
    return GradientVector(tuple(d_delays), tuple(d_weights), d_shift, pn)


# ---------------------------------------------------------------------------
# stationarity

INTERIOR_STATIONARY = "interior-stationary"
ACTIVE_LOWER = "active-lower-consistent"
ACTIVE_UPPER = "active-upper-consistent"
VIOLATED = "violated"


@dataclass(frozen=True)
class CoordinateStatus:
    name: str
    value: float
    gradient: float
    status: str


@dataclass(frozen=True)
class StationarityReport:
    statuses: tuple
    projected_norm: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return all(s.status != VIOLATED for s in self.statuses)

    def to_json(self) -> str:
        return json.dumps({
            "tolerance": self.tolerance,
            "projected_norm": self.projected_norm,
            "ok": self.ok,
            "coordinates": [
                {"name": s.name, "value": s.value, "gradient": s.gradient, "status": s.status}
                for s in self.statuses
            ],
        }, indent=2)


def _coordinate_info(spec: ProblemSpec, u: ControlVector, g: np.ndarray):
    m = u.m
    with_shift = len(g) == 2 * m + 1
    lo, hi = bounds_arrays(spec, with_shift)
    x = u.as_array()
    names = [f"s_{i}" for i in range(m)] + [f"kappa_{i}" for i in range(m)]
    if with_shift:
        names.append("shift")
    return x, lo, hi, names


def projected_norm_of(spec: ProblemSpec, u: ControlVector, g) -> float:
    """Max-norm of the projected gradient: at a lower bound only the negative
    part counts, at an upper bound only the positive part, full value inside."""
    g = np.asarray(g, dtype=float)
    x, lo, hi, _ = _coordinate_info(spec, u, g)
    out = 0.0
    for j in range(len(g)):
        atol_lo = 1e-9 * (1.0 + abs(lo[j])) if math.isfinite(lo[j]) else 0.0
        atol_hi = 1e-9 * (1.0 + abs(hi[j])) if math.isfinite(hi[j]) else 0.0
        at_lo = math.isfinite(lo[j]) and x[j] <= lo[j] + atol_lo
        at_hi = math.isfinite(hi[j]) and x[j] >= hi[j] - atol_hi
        if at_lo and at_hi:
            v = 0.0
        elif at_lo:
            v = abs(min(0.0, g[j]))
        elif at_hi:
            v = abs(max(0.0, g[j]))
        else:
            v = abs(g[j])
        out = max(out, v)
    return out


def stationarity_check(spec: ProblemSpec, u: ControlVector, g: GradientVector,
                       tolerance: float = 1e-3) -> StationarityReport:
    """Classify every coordinate against the first-order conditions: at the
    lower bound the gradient must be nonnegative, at the upper bound
    nonpositive, and (near) zero in the interior."""
    garr = g.as_array() if isinstance(g, GradientVector) else np.asarray(g, dtype=float)
    x, lo, hi, names = _coordinate_info(spec, u, garr)
    statuses = []
    for j, name in enumerate(names):
        atol_lo = 1e-9 * (1.0 + abs(lo[j])) if math.isfinite(lo[j]) else 0.0
        atol_hi = 1e-9 * (1.0 + abs(hi[j])) if math.isfinite(hi[j]) else 0.0
        at_lo = math.isfinite(lo[j]) and x[j] <= lo[j] + atol_lo
        at_hi = math.isfinite(hi[j]) and x[j] >= hi[j] - atol_hi
        gj = float(garr[j])
        if at_lo and not at_hi:
            status = ACTIVE_LOWER if gj >= -tolerance else VIOLATED
        elif at_hi and not at_lo:
            status = ACTIVE_UPPER if gj <= tolerance else VIOLATED
        elif at_lo and at_hi:
            status = ACTIVE_LOWER
        else:
            status = INTERIOR_STATIONARY if abs(gj) <= tolerance else VIOLATED
        statuses.append(CoordinateStatus(name, float(x[j]), gj, status))
    return StationarityReport(tuple(statuses), projected_norm_of(spec, u, garr), tolerance)
