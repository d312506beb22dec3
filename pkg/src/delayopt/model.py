"""Problem definition: the continuous tracking problem and its admissible set.

A problem couples a 1-D reaction-diffusion (or scalar ODE) state equation
with m delayed feedback channels.  The optimization variable is the vector
of delays s_i and weights kappa_i, each box-constrained, plus an optional
unconstrained time shift of the target for phase-invariant tracking.

All types here are immutable after construction and safe to share across
concurrent solves.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from . import expr

DIRECT_DELAY = "direct_delay"
PYRAGAS = "pyragas"
VARIANTS = (DIRECT_DELAY, PYRAGAS)

TRACKING = "tracking"
SHIFTED = "shifted"
OBJECTIVES = (TRACKING, SHIFTED)


@lru_cache(maxsize=256)
def _parsed(source: str):
    return expr.parse(source)


@lru_cache(maxsize=256)
def _parsed_dt(source: str):
    return expr.differentiate(expr.parse(source), "t")


@dataclass(frozen=True)
class ReactionSpec:
    """Reaction term R(x,t,y); the state equation reads y_t - y_xx + R = feedback.

    Two kinds: 'polynomial' stores ascending coefficients of a polynomial in y
    (exactly integrable in the scheme), 'expression' stores a formula in
    (x, t, y) integrated with a fixed-order Gauss rule.
    """

    kind: str
    coefficients: tuple = ()
    source: str = ""

    @classmethod
    def polynomial(cls, coefficients: Sequence[float]) -> "ReactionSpec":
        return cls(kind="polynomial", coefficients=tuple(float(c) for c in coefficients))

    @classmethod
    def expression(cls, source: str) -> "ReactionSpec":
        expr.parse(source)  # fail early on syntax errors
        return cls(kind="expression", source=source)

    @classmethod
    def cubic_default(cls) -> "ReactionSpec":
        # y (y - 0.25) (y - 1), the bistable nonlinearity used by the examples
        return cls.polynomial((0.0, 0.25, -1.25, 1.0))

    @classmethod
    def zero(cls) -> "ReactionSpec":
        return cls.polynomial((0.0,))

    @property
    def derivative_coefficients(self) -> tuple:
        c = self.coefficients
        return tuple(k * c[k] for k in range(1, len(c))) or (0.0,)

    def value(self, y, x=None, t=None):
        if self.kind == "polynomial":
            acc = 0.0
            for c in reversed(self.coefficients):
                acc = acc * y + c
            return acc
        return expr.evaluate(_parsed(self.source), x=x, t=t, y=y)

    def deriv(self, y, x=None, t=None):
        """dR/dy, analytic for polynomials and symbolic for expressions."""
        if self.kind == "polynomial":
            acc = 0.0
            for c in reversed(self.derivative_coefficients):
                acc = acc * y + c
            return acc
        return expr.evaluate(expr.differentiate(_parsed(self.source), "y"), x=x, t=t, y=y)

    @property
    def depends_on_space(self) -> bool:
        if self.kind == "polynomial":
            return False
        return "x" in expr.free_vars(_parsed(self.source))

    @property
    def is_polynomial(self) -> bool:
        return self.kind == "polynomial"


@dataclass(frozen=True)
class HistorySpec:
    """State values prescribed for t <= 0, as a formula in (x, t).

    The formula must be evaluable for every t <= 0 (delays may reach the full
    horizon, so the history window is not restricted to [-b, 0]).
    """

    source: str

    def __post_init__(self):
        expr.parse(self.source)

    def value(self, x, t):
        return expr.evaluate(_parsed(self.source), x=x, t=t)

    def dt(self, x, t):
        return expr.evaluate(_parsed_dt(self.source), x=x, t=t)

    @property
    def depends_on_space(self) -> bool:
        return "x" in expr.free_vars(_parsed(self.source))


@dataclass(frozen=True)
class TargetSpec:
    """Desired state. Either a closed-form field y(x,t) or the dense solution
    of the scalar reference equation y'(t) = -a y(t-d) with constant history."""

    kind: str  # 'expression' | 'dde_reference'
    source: str = ""
    dde_a: float = 0.0
    dde_d: float = 1.0
    dde_history: float = 1.0

    @classmethod
    def expression(cls, source: str) -> "TargetSpec":
        expr.parse(source)
        return cls(kind="expression", source=source)

    @classmethod
    def dde_reference(cls, a: float, d: float, history: float) -> "TargetSpec":
        if d <= 0:
            raise ValueError("reference equation delay must be positive")
        return cls(kind="dde_reference", dde_a=float(a), dde_d=float(d), dde_history=float(history))


@dataclass(frozen=True)
class ProblemSpec:
    """Full continuous problem: domain, horizon, feedback structure, data."""

    space_interval: tuple
    horizon: float
    num_delays: int
    delay_bounds: tuple  # ((a_i, b_i), ...)
    weight_bounds: tuple  # ((alpha_i, beta_i), ...), entries may be +-inf
    nu: float
    reaction: ReactionSpec
    history: HistorySpec
    target: TargetSpec
    variant: str = DIRECT_DELAY
    objective: str = TRACKING
    window: Optional[tuple] = None  # defaults to (0, horizon)

    @property
    def objective_window(self) -> tuple:
        return self.window if self.window is not None else (0.0, self.horizon)

    @property
    def max_delay_bound(self) -> float:
        return max(b for _, b in self.delay_bounds)

    @property
    def shifted(self) -> bool:
        return self.objective == SHIFTED

    @classmethod
    def build(cls, *, space_interval=(0.0, 1.0), horizon, num_delays,
              delay_bounds=None, weight_bounds=None, nu=0.0, reaction,
              history, target, variant=DIRECT_DELAY, objective=TRACKING,
              window=None) -> "ProblemSpec":
        """Convenience constructor: a single (lo, hi) pair is broadcast to all
        channels, string data is wrapped in the corresponding spec type."""
        m = int(num_delays)

        def normalize(bounds, default):
            if bounds is None:
                bounds = default
            bounds = tuple(bounds)
            if bounds and not isinstance(bounds[0], (tuple, list)):
                bounds = (bounds,) * m
            return tuple((float(lo), float(hi)) for lo, hi in bounds)

        if isinstance(history, str):
            history = HistorySpec(history)
        if isinstance(target, str):
            target = TargetSpec.expression(target)
        if isinstance(reaction, str):
            reaction = ReactionSpec.expression(reaction)
        return cls(
            space_interval=(float(space_interval[0]), float(space_interval[1])),
            horizon=float(horizon),
            num_delays=m,
            delay_bounds=normalize(delay_bounds, ((0.0, float(horizon)),)),
            weight_bounds=normalize(weight_bounds, ((-1000.0, 1000.0),)),
            nu=float(nu),
            reaction=reaction,
            history=history,
            target=target,
            variant=variant,
            objective=objective,
            window=None if window is None else (float(window[0]), float(window[1])),
        )


@dataclass(frozen=True)
class ControlVector:
    """Optimization variable u = (s, kappa), plus the target shift when the
    objective is phase-invariant."""

    delays: tuple
    weights: tuple
    shift: Optional[float] = None

    @classmethod
    def of(cls, delays, weights, shift=None) -> "ControlVector":
        return cls(tuple(float(s) for s in delays),
                   tuple(float(k) for k in weights),
                   None if shift is None else float(shift))

    @property
    def m(self) -> int:
        return len(self.delays)

    def as_array(self) -> np.ndarray:
        vals = list(self.delays) + list(self.weights)
        if self.shift is not None:
            vals.append(self.shift)
        return np.asarray(vals, dtype=float)

    @classmethod
    def from_array(cls, x: np.ndarray, m: int, with_shift: bool) -> "ControlVector":
        x = np.asarray(x, dtype=float)
        shift = float(x[2 * m]) if with_shift else None
        return cls(tuple(x[:m]), tuple(x[m:2 * m]), shift)


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple

    @property
    def ok(self) -> bool:
        return not self.violations


def _reaction_derivative_bounded_below(reaction: ReactionSpec) -> bool:
    if reaction.is_polynomial:
        dc = reaction.derivative_coefficients
        # strip trailing zeros
        deg = len(dc) - 1
        while deg > 0 and dc[deg] == 0.0:
            deg -= 1
        if deg == 0:
            return True  # constant derivative
        return deg % 2 == 0 and dc[deg] > 0.0
    # expression kind: sample dR/dy on a wide y-grid and require finite values
    ys = np.linspace(-50.0, 50.0, 501)
    try:
        vals = np.asarray(reaction.deriv(ys, x=0.0, t=0.0), dtype=float)
    except expr.ExprError:
        return False
    return bool(np.all(np.isfinite(vals)))


def validate(spec: ProblemSpec) -> ValidationReport:
    """Check the structural assumptions; returns a report, never raises."""
    bad = []
    x_lo, x_hi = spec.space_interval
    if not x_lo < x_hi:
        bad.append(f"space interval reversed: ({x_lo}, {x_hi})")
    if not spec.horizon > 0:
        bad.append(f"horizon must be positive, got {spec.horizon}")
    if spec.num_delays < 1:
        bad.append(f"need at least one delay channel, got {spec.num_delays}")
    if len(spec.delay_bounds) != spec.num_delays:
        bad.append("delay bounds count does not match the number of channels")
    if len(spec.weight_bounds) != spec.num_delays:
        bad.append("weight bounds count does not match the number of channels")
    for i, (a, b) in enumerate(spec.delay_bounds):
        if a < 0:
            bad.append(f"delay lower bound {i} is negative")
        if a > b:
            bad.append(f"delay bounds reversed in channel {i}: ({a}, {b})")
    for i, (alpha, beta) in enumerate(spec.weight_bounds):
        if alpha > beta:
            bad.append(f"weight bounds reversed in channel {i}: ({alpha}, {beta})")
    if spec.nu < 0:
        bad.append(f"tikhonov weight must be nonnegative, got {spec.nu}")
    if spec.nu == 0.0:
        # without the quadratic penalty a minimizer only exists on a compact box
        if any(not (math.isfinite(alpha) and math.isfinite(beta))
               for alpha, beta in spec.weight_bounds):
            bad.append("existence condition fails: nu = 0 requires finite weight bounds")
    ta, tb = spec.objective_window
    if not (0.0 <= ta < tb <= spec.horizon + 1e-12):
        bad.append(f"objective window ({ta}, {tb}) not inside [0, {spec.horizon}]")
    if spec.variant not in VARIANTS:
        bad.append(f"unknown variant {spec.variant!r}")
    if spec.objective not in OBJECTIVES:
        bad.append(f"unknown objective kind {spec.objective!r}")
    if not _reaction_derivative_bounded_below(spec.reaction):
        bad.append("reaction derivative is not bounded below")
    # history must be evaluable on the closure of the delayed domain
    try:
        xs = np.linspace(x_lo, x_hi, 11)
        ts = -np.linspace(0.0, max(spec.max_delay_bound, spec.horizon), 13)
        vals = np.asarray(spec.history.value(xs[:, None], ts[None, :]), dtype=float)
        dvals = np.asarray(spec.history.dt(xs[:, None], ts[None, :]), dtype=float)
        if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(dvals))):
            bad.append("history is not finite on the delayed domain")
    except expr.ExprError as e:
        bad.append(f"history not evaluable: {e}")
    if spec.target.kind == "expression":
        try:
            expr.parse(spec.target.source)
        except expr.ParseError as e:
            bad.append(f"target expression invalid: {e}")
    elif spec.target.kind == "dde_reference":
        if spec.target.dde_d <= 0:
            bad.append("reference equation delay must be positive")
    else:
        bad.append(f"unknown target kind {spec.target.kind!r}")
    return ValidationReport(tuple(bad))


def project_to_admissible(u: ControlVector, spec: ProblemSpec) -> ControlVector:
    """Componentwise clamp of (s, kappa) onto the admissible box.

    The shift is deliberately untouched: periodicity of the target makes a
    shift constraint unnecessary.
    """
    if u.m != spec.num_delays:
        raise ValueError(f"control has {u.m} channels, problem has {spec.num_delays}")
    s = tuple(min(max(v, lo), hi) for v, (lo, hi) in zip(u.delays, spec.delay_bounds))
    k = tuple(min(max(v, lo), hi) for v, (lo, hi) in zip(u.weights, spec.weight_bounds))
    return ControlVector(s, k, u.shift)


def bounds_arrays(spec: ProblemSpec, with_shift: bool):
    """Stacked (lower, upper) arrays for (s, kappa[, shift])."""
    lo = [a for a, _ in spec.delay_bounds] + [a for a, _ in spec.weight_bounds]
    hi = [b for _, b in spec.delay_bounds] + [b for _, b in spec.weight_bounds]
    if with_shift:
        lo.append(-np.inf)
        hi.append(np.inf)
    return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
