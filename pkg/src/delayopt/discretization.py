"""1-D P1 finite elements, time slabs, trajectories and delay couplings.

The state lives in the continuous piecewise-linear-in-time space (one nodal
vector per time node), the adjoint in the piecewise-constant-in-time space
(one vector per slab).  Delayed couplings are integrated exactly by splitting
every slab at the points where a delayed argument t - s crosses a time node
or zero; on each sub-interval the delayed state is a linear (or closed-form
history) function of time.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solveh_banded

from .model import HistorySpec

__all__ = [
    "gauss_rule",
    "SpaceMesh",
    "TimeGrid",
    "FemMatrices",
    "assemble",
    "project_l2",
    "StateTrajectory",
    "AdjointTrajectory",
    "delayed_field",
    "breakpoints",
    "DelayCoupling",
    "build_coupling",
    "write_trajectory_csv",
    "read_trajectory_csv",
]

_GAUSS_CACHE = {}


def gauss_rule(n: int):
    """Gauss-Legendre points on [0, 1] with weights summing to one."""
    if n not in _GAUSS_CACHE:
        pts, wts = np.polynomial.legendre.leggauss(n)
        _GAUSS_CACHE[n] = ((pts + 1.0) / 2.0, wts / 2.0)
    return _GAUSS_CACHE[n]


@dataclass(frozen=True)
class SpaceMesh:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        if len(nodes) < 2:
            raise ValueError("mesh needs at least one element")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("mesh nodes must be strictly increasing")

    @classmethod
    def uniform(cls, x_lo: float, x_hi: float, n_elements: int) -> "SpaceMesh":
        return cls(np.linspace(x_lo, x_hi, n_elements + 1))

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class TimeGrid:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        if len(nodes) < 2:
            raise ValueError("time grid needs at least one slab")
        if abs(nodes[0]) > 1e-14:
            raise ValueError("time grid must start at zero")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("time nodes must be strictly increasing")

    @classmethod
    def uniform(cls, T: float, n_slabs: int) -> "TimeGrid":
        return cls(np.linspace(0.0, T, n_slabs + 1))

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def n_slabs(self) -> int:
        return len(self.nodes) - 1

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    def slab_of(self, t: float) -> int:
        """Index j of the slab (nodes[j], nodes[j+1]] containing t (0 < t <= T)."""
        j = int(np.searchsorted(self.nodes, t, side="left")) - 1
        return min(max(j, 0), self.n_slabs - 1)


@dataclass(frozen=True)
class FemMatrices:
    """Mass and stiffness in symmetric tridiagonal form (diag, upper)."""

    mass_diag: np.ndarray
    mass_off: np.ndarray
    stiff_diag: np.ndarray
    stiff_off: np.ndarray

    def mass_matvec(self, v: np.ndarray) -> np.ndarray:
        out = self.mass_diag * v
        out[:-1] += self.mass_off * v[1:]
        out[1:] += self.mass_off * v[:-1]
        return out

    def stiff_matvec(self, v: np.ndarray) -> np.ndarray:
        out = self.stiff_diag * v
        out[:-1] += self.stiff_off * v[1:]
        out[1:] += self.stiff_off * v[:-1]
        return out

    def mass_dense(self) -> np.ndarray:
        n = len(self.mass_diag)
        out = np.diag(self.mass_diag)
        out += np.diag(self.mass_off, 1) + np.diag(self.mass_off, -1)
        return out

    def stiff_dense(self) -> np.ndarray:
        out = np.diag(self.stiff_diag)
        out += np.diag(self.stiff_off, 1) + np.diag(self.stiff_off, -1)
        return out


def assemble(mesh: SpaceMesh) -> FemMatrices:
    """Exact element integrals of the P1 mass and stiffness matrices."""
    h = mesh.widths
    if np.any(h <= 0):
        raise ValueError("degenerate element in mesh")
    n = mesh.n_nodes
    md = np.zeros(n)
    md[:-1] += h / 3.0
    md[1:] += h / 3.0
    mo = h / 6.0
    kd = np.zeros(n)
    kd[:-1] += 1.0 / h
    kd[1:] += 1.0 / h
    ko = -1.0 / h
    return FemMatrices(md, mo.copy(), kd, ko)


def project_l2(mesh: SpaceMesh, f) -> np.ndarray:
    """L2 projection onto the P1 space; f(x) must broadcast over arrays."""
    fem = assemble(mesh)
    pts, wts = gauss_rule(4)
    xq = mesh.nodes[:-1, None] + mesh.widths[:, None] * pts[None, :]
    vals = np.broadcast_to(np.asarray(f(xq), dtype=float), xq.shape)
    rhs = np.zeros(mesh.n_nodes)
    scaled = vals * wts[None, :] * mesh.widths[:, None]
    rhs[:-1] += scaled @ (1.0 - pts)
    rhs[1:] += scaled @ pts
    ab = np.zeros((2, mesh.n_nodes))
    ab[0, 1:] = fem.mass_off
    ab[1, :] = fem.mass_diag
    return solveh_banded(ab, rhs)


# ---------------------------------------------------------------------------
# trajectories

@dataclass
class StateTrajectory:
    """Space-time grid function, continuous piecewise linear in time.

    `values` holds one nodal vector per time node, shape (N+1, n); in scalar
    mode (mesh is None) the shape is (N+1,).  Evaluation for t <= 0 falls back
    to the attached history formula via nodal interpolation, so the trajectory
    is defined on all of (-inf, T].
    """

    grid: TimeGrid
    values: np.ndarray
    history: HistorySpec
    mesh: Optional[SpaceMesh] = None

    @property
    def is_scalar(self) -> bool:
        return self.mesh is None

    def _history_at(self, t: float):
        if self.is_scalar:
            return float(self.history.value(None, t))
        return np.asarray(self.history.value(self.mesh.nodes, t), dtype=float) \
            * np.ones(self.mesh.n_nodes)

    def at_time(self, t: float):
        nodes = self.grid.nodes
        if t > nodes[-1] + 1e-12 * max(1.0, nodes[-1]):
            raise ValueError(f"state not defined beyond t = {nodes[-1]}")
        if t <= 0.0:
            return self._history_at(t)
        j = self.grid.slab_of(t)
        lam = (t - nodes[j]) / (nodes[j + 1] - nodes[j])
        return (1.0 - lam) * self.values[j] + lam * self.values[j + 1]

    def to_csv(self, path):
        vals = self.values if not self.is_scalar else self.values[:, None]
        write_trajectory_csv(path, self.grid.nodes, vals)


@dataclass
class AdjointTrajectory:
    """Piecewise constant in time, one vector per slab, zero for t >= T."""

    grid: TimeGrid
    values: np.ndarray
    mesh: Optional[SpaceMesh] = None

    @property
    def is_scalar(self) -> bool:
        return self.mesh is None

    def at_time(self, t: float):
        if t <= 0.0:
            raise ValueError("adjoint is defined on (0, infinity) only")
        if t > self.grid.T:
            return 0.0 if self.is_scalar else np.zeros(self.values.shape[1])
        return self.values[self.grid.slab_of(t)]

    def to_csv(self, path):
        mids = 0.5 * (self.grid.nodes[:-1] + self.grid.nodes[1:])
        vals = self.values if not self.is_scalar else self.values[:, None]
        write_trajectory_csv(path, mids, vals)


def delayed_field(traj: StateTrajectory, t: float, s: float):
    """State at the delayed time t - s; history formula when t - s <= 0."""
    if t - s > traj.grid.T + 1e-12 * max(1.0, traj.grid.T):
        raise ValueError(f"delayed time {t - s} beyond the horizon {traj.grid.T}")
    return traj.at_time(t - s)


# ---------------------------------------------------------------------------
# breakpoints and delay couplings

def breakpoints(grid: TimeGrid, slab: int, delays) -> np.ndarray:
    """Interior points of slab j where some t - s_i crosses a time node.

    Zero counts as a node (it is the first one), so the history/state switch
    t - s_i = 0 is always included.  On each sub-interval of the returned
    partition every delayed integrand is polynomial in t.
    """
    ta, tb = grid.nodes[slab], grid.nodes[slab + 1]
    tol = 1e-12 * max(1.0, grid.T)
    points = []
    for s in delays:
        cands = grid.nodes + s
        inside = cands[(cands > ta + tol) & (cands < tb - tol)]
        points.extend(inside.tolist())
    if not points:
        return np.empty(0)
    pts = np.sort(np.asarray(points))
    keep = np.concatenate(([True], np.diff(pts) > tol))
    return pts[keep]


@dataclass
class DelayCoupling:
    """Exact time integrals of one delayed evaluation channel.

    State segments are stored entrywise: slab `k_idx[e]` couples the nodal
    vectors at time nodes `l_idx[e]` and `l_idx[e]+1` with weights
    `a_w[e]`, `b_w[e]` (the integrals of the two linear-in-time interpolation
    factors over the sub-interval).  Segments with a delayed argument in the
    history region are pre-integrated into per-slab nodal load vectors.
    """

    s: float
    n_slabs: int
    k_idx: np.ndarray
    l_idx: np.ndarray
    a_w: np.ndarray
    b_w: np.ndarray
    hist_nodal: np.ndarray      # (N, n) or (N,)
    hist_dt_nodal: np.ndarray   # same shape
    jump_slab: Optional[int]    # slab containing t = s, None if s == 0 or s > T
    # entry index ranges grouped by k and by l (CSR-style)
    by_k: np.ndarray = field(default=None, repr=False)
    by_k_ptr: np.ndarray = field(default=None, repr=False)
    by_l: np.ndarray = field(default=None, repr=False)
    by_l_ptr: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        order_k = np.argsort(self.k_idx, kind="stable")
        self.by_k = order_k
        self.by_k_ptr = np.searchsorted(self.k_idx[order_k], np.arange(self.n_slabs + 1))
        order_l = np.argsort(self.l_idx, kind="stable")
        self.by_l = order_l
        self.by_l_ptr = np.searchsorted(self.l_idx[order_l], np.arange(self.n_slabs + 2))
        # integral weight of the unknown slab end value, one entry per slab
        sw = np.zeros(self.n_slabs)
        diag = self.l_idx == self.k_idx
        np.add.at(sw, self.k_idx[diag], self.b_w[diag])
        self.self_w = sw

    def entries_of_slab(self, k: int):
        sel = self.by_k[self.by_k_ptr[k]:self.by_k_ptr[k + 1]]
        return self.l_idx[sel], self.a_w[sel], self.b_w[sel]

    def entries_at_node(self, l: int):
        sel = self.by_l[self.by_l_ptr[l]:self.by_l_ptr[l + 1]]
        return self.k_idx[sel], self.a_w[sel], self.b_w[sel]

    def self_weight(self, k: int) -> float:
        """Integral weight of the unknown end value Y[k+1] inside slab k."""
        return float(self.self_w[k])

    def delayed_nodal(self, k: int, values: np.ndarray):
        """Integral over slab k of the delayed trajectory, as a nodal vector."""
        ls, aw, bw = self.entries_of_slab(k)
        acc = np.tensordot(aw, values[ls], axes=(0, 0)) \
            + np.tensordot(bw, values[ls + 1], axes=(0, 0))
        return acc + self.hist_nodal[k]

    def delayed_dt_nodal(self, k: int, values: np.ndarray, tau: np.ndarray):
        """Integral over slab k of the delayed time derivative."""
        ls, aw, bw = self.entries_of_slab(k)
        length = (aw + bw) / tau[ls]
        acc = np.tensordot(length, values[ls + 1] - values[ls], axes=(0, 0))
        return acc + self.hist_dt_nodal[k]


def build_coupling(grid: TimeGrid, s: float, history: HistorySpec,
                   mesh: Optional[SpaceMesh]) -> DelayCoupling:
    """Split every slab at the delayed crossings and integrate exactly.

    History segments are integrated with a 4-point Gauss rule against the
    nodal interpolant of the history formula (and of its time derivative).
    """
    if s < 0:
        raise ValueError(f"invalid delay {s}")
    nodes = grid.nodes
    N = grid.n_slabs
    tol = 1e-12 * max(1.0, grid.T)

    # global sub-partition: time nodes plus the shifted copies nodes + s
    shifted = nodes + s
    shifted = shifted[shifted < nodes[-1] - tol]
    edges = np.sort(np.concatenate((nodes, shifted)))
    edges = edges[np.concatenate(([True], np.diff(edges) > tol))]

    p = edges[:-1]
    q = edges[1:]
    length = q - p
    mids = 0.5 * (p + q)
    k_arr = np.minimum(np.searchsorted(nodes, mids) - 1, N - 1)
    theta_mid = mids - s
    state = theta_mid > 0.0

    l_arr = np.minimum(np.searchsorted(nodes, theta_mid[state]) - 1, N - 1)
    tau_l = nodes[l_arr + 1] - nodes[l_arr]
    a_w = length[state] * (nodes[l_arr + 1] - theta_mid[state]) / tau_l
    b_w = length[state] * (theta_mid[state] - nodes[l_arr]) / tau_l

    scalar = mesh is None
    hist_nodal = np.zeros((N,) if scalar else (N, mesh.n_nodes))
    hist_dt_nodal = np.zeros_like(hist_nodal)
    hist = ~state
    if np.any(hist):
        qp, qw = gauss_rule(4)
        ts = p[hist, None] + length[hist, None] * qp[None, :] - s  # (H, 4)
        ts = np.minimum(ts, 0.0)  # guard roundoff at the history/state switch
        if scalar:
            vals = np.asarray(history.value(None, ts), dtype=float) * np.ones_like(ts)
            dvals = np.asarray(history.dt(None, ts), dtype=float) * np.ones_like(ts)
            chunk = length[hist] * (vals @ qw)
            dchunk = length[hist] * (dvals @ qw)
        else:
            xs = mesh.nodes[None, None, :]
            shape = (*ts.shape, mesh.n_nodes)
            vals = np.broadcast_to(np.asarray(history.value(xs, ts[:, :, None]), dtype=float), shape)
            dvals = np.broadcast_to(np.asarray(history.dt(xs, ts[:, :, None]), dtype=float), shape)
            chunk = length[hist, None] * np.tensordot(vals, qw, axes=(1, 0))
            dchunk = length[hist, None] * np.tensordot(dvals, qw, axes=(1, 0))
        np.add.at(hist_nodal, k_arr[hist], chunk)
        np.add.at(hist_dt_nodal, k_arr[hist], dchunk)

    jump = None
    if s > tol and s <= nodes[-1] + tol:
        jump = grid.slab_of(min(s, nodes[-1]))
    return DelayCoupling(
        s=float(s), n_slabs=N,
        k_idx=k_arr[state].astype(int),
        l_idx=l_arr.astype(int),
        a_w=a_w, b_w=b_w,
        hist_nodal=hist_nodal, hist_dt_nodal=hist_dt_nodal,
        jump_slab=jump)


def merge_weighted(channels) -> DelayCoupling:
    """Fold channel weights into one coupling: entries, history loads and
    self-weights of sum_c w_c * coupling_c.  The solvers touch one merged
    structure per slab instead of one per channel."""
    if not channels:
        raise ValueError("no channels to merge")
    first = channels[0][1]
    k_idx = np.concatenate([c.k_idx for _, c in channels])
    l_idx = np.concatenate([c.l_idx for _, c in channels])
    a_w = np.concatenate([w * c.a_w for w, c in channels])
    b_w = np.concatenate([w * c.b_w for w, c in channels])
    hist = sum(w * c.hist_nodal for w, c in channels)
    hist_dt = sum(w * c.hist_dt_nodal for w, c in channels)
    return DelayCoupling(s=float("nan"), n_slabs=first.n_slabs,
                         k_idx=k_idx, l_idx=l_idx, a_w=a_w, b_w=b_w,
                         hist_nodal=hist, hist_dt_nodal=hist_dt, jump_slab=None)


# ---------------------------------------------------------------------------
# CSV export (shared layout: header "t,x_0,...,x_n", LF, 17 significant digits)

def write_trajectory_csv(path, times, values):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    n_cols = values.shape[1]
    with open(path, "w", newline="\n") as fh:
        fh.write("t," + ",".join(f"x_{j}" for j in range(n_cols)) + "\n")
        for t, row in zip(times, values):
            fh.write(f"{t:.17g}," + ",".join(f"{v:.17g}" for v in row) + "\n")


def read_trajectory_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1:]
