"""Three-curve comparison plot: target, optimal and uncontrolled trajectories.

Follows the color convention target = green, optimal = blue, uncontrolled =
dashed red.  Intended for scalar trajectories (one value column); wider CSVs
contribute their first value column.
"""
from __future__ import annotations

import argparse
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .csvio import CsvError, read_csv


def plot_trajectories(target_csv, optimal_csv, uncontrolled_csv, out):
    """Render the comparison figure and write it to `out`; returns the figure."""
    t_ref = None
    curves = []
    for path in (target_csv, optimal_csv, uncontrolled_csv):
        t, vals = read_csv(path)
        if t_ref is None:
            t_ref = t
        elif len(t) != len(t_ref) or not np.allclose(t, t_ref, rtol=1e-12, atol=1e-12):
            raise CsvError(f"time grid of {path} does not match {target_csv}")
        curves.append(vals[:, 0])

    fig, ax = plt.subplots(figsize=(9, 4))
    ax.plot(t_ref, curves[0], color="green", label="target")
    ax.plot(t_ref, curves[1], color="blue", label="optimal")
    ax.plot(t_ref, curves[2], color="red", linestyle="--", label="uncontrolled")
    ax.set_xlabel("t")
    ax.set_ylabel("y")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return fig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Plot target (green), optimal (blue) and uncontrolled (red) trajectories.")
    parser.add_argument("target_csv")
    parser.add_argument("optimal_csv")
    parser.add_argument("uncontrolled_csv")
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    try:
        plot_trajectories(args.target_csv, args.optimal_csv, args.uncontrolled_csv, args.out)
    except CsvError as e:
        print(str(e), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
