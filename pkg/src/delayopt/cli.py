"""Command-line entry point.

Subcommands: simulate | optimize | gradcheck | example.  Problem setups come
from an INI-style config file with sections [problem], [discretization],
[optimizer], [starts] and [outputs]; expressions are quoted strings.  Exit
codes: 0 success, 1 configuration error, 2 solver failure, 3 gradient check
above threshold.
"""
from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .configs import EXAMPLES
from .discretization import SpaceMesh, TimeGrid, write_trajectory_csv
from .forward import SolverError, solve_state, solve_state_ode_mode
from .model import (ControlVector, HistorySpec, ProblemSpec, ReactionSpec,
                    TargetSpec, project_to_admissible, validate)
from .optimizer import OptimizerSettings, latin_hypercube, multistart
from .targets import make_target

__all__ = ["RunConfig", "load_config", "parse_config_text", "render_config", "main"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    spec: ProblemSpec
    n_elements: int
    n_slabs: int
    mode: str  # 'pde' | 'ode'
    optimizer: OptimizerSettings
    starts: tuple  # explicit ControlVectors, or a sampling descriptor dict
    sampling: Optional[dict]
    outputs: str

    def mesh(self) -> Optional[SpaceMesh]:
        if self.mode == "ode":
            return None
        x_lo, x_hi = self.spec.space_interval
        return SpaceMesh.uniform(x_lo, x_hi, self.n_elements)

    def grid(self, factor: int = 1) -> TimeGrid:
        return TimeGrid.uniform(factor * self.spec.horizon, factor * self.n_slabs)


def _unquote(v: str) -> str:
    v = v.strip()
    if len(v) >= 2 and v[0] == v[-1] and v[0] in "'\"":
        return v[1:-1]
    return v


def _floats(v: str):
    return tuple(float(p) for p in v.replace(",", " ").split())


def _control_from_json(text: str) -> ControlVector:
    data = json.loads(text)
    return ControlVector.of(data["s"], data["kappa"], data.get("sigma"))


def parse_config_text(text: str) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.read_string(text)
    try:
        prob = cp["problem"]
        disc = cp["discretization"]
    except KeyError as e:
        raise ConfigError(f"missing config section {e}") from None

    if "reaction_poly" in prob:
        reaction = ReactionSpec.polynomial(_floats(prob["reaction_poly"]))
    elif "reaction" in prob:
        reaction = ReactionSpec.expression(_unquote(prob["reaction"]))
    else:
        raise ConfigError("config needs reaction or reaction_poly")

    if "target_dde_a" in prob:
        target = TargetSpec.dde_reference(
            float(prob["target_dde_a"]), float(prob["target_dde_d"]),
            float(prob.get("target_dde_history", "1")))
    elif "target" in prob:
        target = TargetSpec.expression(_unquote(prob["target"]))
    else:
        raise ConfigError("config needs target or target_dde_* fields")

    def bounds(key, default):
        raw = prob.get(key, "").strip()
        if not raw:
            return default
        if raw.startswith("["):
            pairs = json.loads(raw)
            return tuple((float(a), float(b)) for a, b in pairs)
        return _floats(raw)

    try:
        spec = ProblemSpec.build(
            space_interval=_floats(prob.get("space_interval", "0, 1")),
            horizon=float(prob["horizon"]),
            num_delays=int(prob["num_delays"]),
            delay_bounds=bounds("delay_bounds", None),
            weight_bounds=bounds("weight_bounds", None),
            nu=float(prob.get("nu", "0")),
            reaction=reaction,
            history=HistorySpec(_unquote(prob["history"])),
            target=target,
            variant=prob.get("variant", "direct_delay").strip(),
            objective=prob.get("objective", "tracking").strip(),
            window=_floats(prob["window"]) if "window" in prob else None,
        )
    except (KeyError, ValueError) as e:
        raise ConfigError(f"bad [problem] section: {e}") from None

    n_elements = int(disc.get("n_elements", "1"))
    n_slabs = int(disc.get("n_slabs", "2"))
    mode = disc.get("mode", "pde").strip()
    if n_elements < 1 or n_slabs < 2:
        raise ConfigError("need n_elements >= 1 and n_slabs >= 2")
    if mode not in ("pde", "ode"):
        raise ConfigError(f"unknown discretization mode {mode!r}")

    opt = cp["optimizer"] if cp.has_section("optimizer") else {}
    try:
        optimizer = OptimizerSettings(
            max_iterations=int(opt.get("max_iterations", "500")),
            tolerance=float(opt.get("tolerance", "1e-6")),
            armijo=float(opt.get("armijo", "1e-4")),
            backtrack=float(opt.get("backtrack", "0.5")),
            initial_step=float(opt.get("initial_step", "1.0")),
            memory=int(opt.get("memory", "10")),
            multistart_count=int(opt.get("multistart_count", "1")),
            seed=int(opt.get("seed", "0")),
        )
    except ValueError as e:
        raise ConfigError(f"bad [optimizer] section: {e}") from None

    starts: tuple = ()
    sampling = None
    if cp.has_section("starts"):
        st = cp["starts"]
        if "control" in st:
            starts = tuple(_control_from_json(line) for line in st["control"].splitlines() if line.strip())
        elif "count" in st:
            sampling = {
                "count": int(st["count"]),
                "seed": int(st.get("seed", "0")),
                "sampling": st.get("sampling", "latin").strip(),
                "delay_range": _floats(st.get("delay_range", "0, 1")),
                "weight_range": _floats(st.get("weight_range", "-1, 1")),
                "shift_range": _floats(st.get("shift_range", "0, 1")),
            }
            if sampling["sampling"] not in ("latin", "uniform"):
                raise ConfigError(f"unknown sampling {sampling['sampling']!r}")
        else:
            raise ConfigError("[starts] needs control= or count=")

    outputs = cp.get("outputs", "directory", fallback="out").strip()
    report = validate(spec)
    if not report.ok:
        raise ConfigError("invalid problem: " + "; ".join(report.violations))
    return RunConfig(spec=spec, n_elements=n_elements, n_slabs=n_slabs, mode=mode,
                     optimizer=optimizer, starts=starts, sampling=sampling,
                     outputs=outputs)


def load_config(path) -> RunConfig:
    return parse_config_text(Path(path).read_text())


def render_config(config: RunConfig) -> str:
    """Serialize a RunConfig back to config-file text (parse round-trips)."""
    spec = config.spec
    lines = ["[problem]"]
    lines.append(f"space_interval = {spec.space_interval[0]}, {spec.space_interval[1]}")
    lines.append(f"horizon = {spec.horizon}")
    lines.append(f"num_delays = {spec.num_delays}")
    lines.append("delay_bounds = " + json.dumps([list(b) for b in spec.delay_bounds]))
    lines.append("weight_bounds = " + json.dumps([list(b) for b in spec.weight_bounds]))
    lines.append(f"nu = {spec.nu}")
    if spec.reaction.is_polynomial:
        lines.append("reaction_poly = " + ", ".join(str(c) for c in spec.reaction.coefficients))
    else:
        lines.append(f'reaction = "{spec.reaction.source}"')
    lines.append(f'history = "{spec.history.source}"')
    if spec.target.kind == "expression":
        lines.append(f'target = "{spec.target.source}"')
    else:
        lines.append(f"target_dde_a = {spec.target.dde_a}")
        lines.append(f"target_dde_d = {spec.target.dde_d}")
        lines.append(f"target_dde_history = {spec.target.dde_history}")
    lines.append(f"variant = {spec.variant}")
    lines.append(f"objective = {spec.objective}")
    if spec.window is not None:
        lines.append(f"window = {spec.window[0]}, {spec.window[1]}")
    lines.append("")
    lines.append("[discretization]")
    lines.append(f"n_elements = {config.n_elements}")
    lines.append(f"n_slabs = {config.n_slabs}")
    lines.append(f"mode = {config.mode}")
    lines.append("")
    opt = config.optimizer
    lines.append("[optimizer]")
    lines.append(f"max_iterations = {opt.max_iterations}")
    lines.append(f"tolerance = {opt.tolerance}")
    lines.append(f"armijo = {opt.armijo}")
    lines.append(f"backtrack = {opt.backtrack}")
    lines.append(f"initial_step = {opt.initial_step}")
    lines.append(f"memory = {opt.memory}")
    lines.append(f"multistart_count = {opt.multistart_count}")
    lines.append(f"seed = {opt.seed}")
    lines.append("")
    lines.append("[starts]")
    if config.sampling is not None:
        sm = config.sampling
        lines.append(f"count = {sm['count']}")
        lines.append(f"seed = {sm['seed']}")
        lines.append(f"sampling = {sm['sampling']}")
        lines.append(f"delay_range = {sm['delay_range'][0]}, {sm['delay_range'][1]}")
        lines.append(f"weight_range = {sm['weight_range'][0]}, {sm['weight_range'][1]}")
        lines.append(f"shift_range = {sm['shift_range'][0]}, {sm['shift_range'][1]}")
    else:
        for u in config.starts:
            payload = {"s": list(u.delays), "kappa": list(u.weights)}
            if u.shift is not None:
                payload["sigma"] = u.shift
            lines.append("control = " + json.dumps(payload))
    lines.append("")
    lines.append("[outputs]")
    lines.append(f"directory = {config.outputs}")
    lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# sampled and explicit starts

def make_starts(config: RunConfig) -> tuple:
    if config.starts:
        return config.starts
    if config.sampling is None:
        raise ConfigError("config defines no starts")
    sm = config.sampling
    m = config.spec.num_delays
    ranges = [sm["delay_range"]] * m + [sm["weight_range"]] * m
    with_shift = config.spec.shifted
    if with_shift:
        ranges.append(sm["shift_range"])
    if sm["sampling"] == "latin":
        samples = latin_hypercube(ranges, sm["count"], sm["seed"])
    else:
        rng = np.random.default_rng(sm["seed"])
        lo = np.array([r[0] for r in ranges])
        hi = np.array([r[1] for r in ranges])
        samples = lo + (hi - lo) * rng.random((sm["count"], len(ranges)))
    return tuple(ControlVector.from_array(row, m, with_shift) for row in samples)


# ---------------------------------------------------------------------------
# commands

def _solve(config: RunConfig, u: ControlVector, grid=None):
    mesh = config.mesh()
    grid = grid or config.grid()
    if mesh is None:
        return solve_state_ode_mode(config.spec, u, grid), mesh, grid
    return solve_state(config.spec, u, mesh, grid), mesh, grid


def _target_csv(config: RunConfig, grid: TimeGrid, mesh, path, shift: float = 0.0):
    target = make_target(config.spec, n_slabs_hint=config.n_slabs)
    if mesh is None:
        vals = np.array([[target.value(None, t, shift)] for t in grid.nodes])
    else:
        vals = np.array([target.value(mesh.nodes, t, shift) * np.ones(mesh.n_nodes)
                         for t in grid.nodes])
    write_trajectory_csv(path, grid.nodes, vals)


def _extended_csv(config: RunConfig, u: ControlVector, out_dir: Path):
    """Continue the solve to 2T with frozen control and prepend history rows
    so the exported field covers [-T/2, 2T]."""
    spec = config.spec
    grid2 = config.grid(factor=2)
    state, mesh, _ = _solve(config, u, grid2)
    tau = spec.horizon / config.n_slabs
    n_hist = config.n_slabs // 2
    t_hist = -tau * np.arange(n_hist, 0, -1)[::1]
    t_hist = np.sort(t_hist)
    if mesh is None:
        hist_rows = np.array([[spec.history.value(None, t)] for t in t_hist])
        state_rows = state.values[:, None]
    else:
        hist_rows = np.array([np.asarray(spec.history.value(mesh.nodes, t), dtype=float)
                              * np.ones(mesh.n_nodes) for t in t_hist])
        state_rows = state.values
    times = np.concatenate((t_hist, grid2.nodes))
    rows = np.vstack((hist_rows, state_rows))
    write_trajectory_csv(out_dir / "state_extended.csv", times, rows)

    target = make_target(spec, n_slabs_hint=config.n_slabs)
    shift = u.shift if (spec.shifted and u.shift is not None) else 0.0
    if mesh is None:
        tvals = np.array([[target.value(None, t, shift)] for t in times])
    else:
        tvals = np.array([target.value(mesh.nodes, t, shift) * np.ones(mesh.n_nodes)
                          for t in times])
    write_trajectory_csv(out_dir / "target_extended.csv", times, tvals)


def cmd_simulate(config: RunConfig, u: ControlVector, out_dir,
                 write_adjoint: bool = False, extend: bool = False) -> int:
    from .adjoint import solve_adjoint
    from .objective import evaluate_objective

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    u = project_to_admissible(u, config.spec)
    state, mesh, grid = _solve(config, u)
    J = evaluate_objective(config.spec, u, state)
    state.to_csv(out_dir / "state.csv")
    shift = u.shift if (config.spec.shifted and u.shift is not None) else 0.0
    _target_csv(config, grid, mesh, out_dir / "target.csv", shift)
    (out_dir / "J.json").write_text(json.dumps({"J": J}) + "\n")
    if write_adjoint:
        adj = solve_adjoint(config.spec, u, state)
        adj.to_csv(out_dir / "adjoint.csv")
    if extend:
        _extended_csv(config, u, out_dir)
    return 0


def cmd_optimize(config: RunConfig, out_dir) -> int:
    from .adjoint import solve_adjoint
    from .objective import assemble_gradient, stationarity_check

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    starts = [project_to_admissible(u, config.spec) for u in make_starts(config)]
    ranked = multistart(config.spec, config.mesh(), config.grid(), starts, config.optimizer)
    u_best, record = ranked[0]

    payload = {"s": list(u_best.delays), "kappa": list(u_best.weights)}
    if u_best.shift is not None:
        payload["sigma"] = u_best.shift
    payload["J"] = record.final_objective
    payload["termination"] = record.termination
    (out_dir / "control.json").write_text(json.dumps(payload, indent=2) + "\n")
    record.to_json_lines(out_dir / "runrecord.jsonl")

    state, _, _ = _solve(config, u_best)
    state.to_csv(out_dir / "state.csv")
    adj = solve_adjoint(config.spec, u_best, state)
    g = assemble_gradient(config.spec, u_best, state, adj)
    report = stationarity_check(config.spec, u_best, g,
                                tolerance=max(config.optimizer.tolerance, 1e-6))
    (out_dir / "stationarity.json").write_text(report.to_json() + "\n")
    return 0


def cmd_gradcheck(config: RunConfig, u: ControlVector, threshold: float,
                  stream=None) -> int:
    from .adjoint import solve_adjoint
    from .objective import assemble_gradient
    from .oracle import fd_gradient

    stream = stream or sys.stdout
    u = project_to_admissible(u, config.spec)
    state, mesh, grid = _solve(config, u)
    adj = solve_adjoint(config.spec, u, state)
    g = assemble_gradient(config.spec, u, state, adj)
    fd = fd_gradient(config.spec, u, mesh, grid)

    names = ([f"s_{i}" for i in range(u.m)] + [f"kappa_{i}" for i in range(u.m)]
             + (["shift"] if config.spec.shifted else []))
    ga, fa = g.as_array(), fd.as_array()
    worst = 0.0
    stream.write(f"{'coordinate':<12} {'adjoint':>24} {'finite-diff':>24} {'rel-error':>12}\n")
    for name, av, fv in zip(names, ga, fa):
        rel = abs(av - fv) / max(abs(fv), abs(av), 1e-12)
        if av == 0.0 and fv == 0.0:
            rel = 0.0
        worst = max(worst, rel)
        flag = "  (one-sided)" if name in fd.one_sided else ""
        stream.write(f"{name:<12} {av:>24.16e} {fv:>24.16e} {rel:>12.3e}{flag}\n")
    stream.write(f"worst relative error: {worst:.3e} (threshold {threshold:g})\n")
    return 0 if worst <= threshold else 3


def cmd_example(name: str, out_dir) -> int:
    if name not in EXAMPLES:
        raise ConfigError(f"unknown example {name!r}; choose from {sorted(EXAMPLES)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}.cfg"
    path.write_text(EXAMPLES[name])
    print(path)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="delayopt",
                                     description="Optimize time delays and feedback weights "
                                                 "in delayed reaction-diffusion equations.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="solve the state once and export CSV/JSON")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--control", help="JSON {\"s\": [...], \"kappa\": [...], \"sigma\": ...}")
    p_sim.add_argument("--out", default=None)
    p_sim.add_argument("--adjoint", action="store_true", help="also export the adjoint CSV")
    p_sim.add_argument("--extend", action="store_true",
                       help="continue to 2T with frozen control and prepend history")

    p_opt = sub.add_parser("optimize", help="run the multistart optimizer")
    p_opt.add_argument("--config", required=True)
    p_opt.add_argument("--out", default=None)

    p_grad = sub.add_parser("gradcheck", help="compare adjoint and FD gradients")
    p_grad.add_argument("--config", required=True)
    p_grad.add_argument("--control", help="JSON control; defaults to the first config start")
    p_grad.add_argument("--tol", type=float, default=1e-5)

    p_ex = sub.add_parser("example", help="write a built-in example config")
    p_ex.add_argument("name", choices=sorted(EXAMPLES))
    p_ex.add_argument("--out", default=".")

    args = parser.parse_args(argv)
    try:
        if args.command == "example":
            return cmd_example(args.name, args.out)
        config = load_config(args.config)
        out_dir = args.out if getattr(args, "out", None) else config.outputs
        if args.command == "simulate":
            u = _control_from_json(args.control) if args.control else make_starts(config)[0]
            return cmd_simulate(config, u, out_dir, write_adjoint=args.adjoint,
                                extend=args.extend)
        if args.command == "optimize":
            return cmd_optimize(config, out_dir)
        if args.command == "gradcheck":
            u = _control_from_json(args.control) if args.control else make_starts(config)[0]
            return cmd_gradcheck(config, u, args.tol)
        raise ConfigError(f"unknown command {args.command}")
    except (ConfigError, FileNotFoundError, json.JSONDecodeError, KeyError, ValueError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 1
    except SolverError as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
