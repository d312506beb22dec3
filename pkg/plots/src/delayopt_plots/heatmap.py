"""Space-time heatmap of an exported field: x horizontal, t vertical."""
from __future__ import annotations

import argparse
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .csvio import CsvError, read_csv


def plot_heatmap(csv_path, out, xrange=None, cmap="viridis"):
    """Render the field as an image and write it to `out`; returns the figure.

    The CSV carries node indices only; pass xrange=(x_lo, x_hi) to label the
    horizontal axis with physical coordinates.
    """
    t, vals = read_csv(csv_path)
    if xrange is None:
        x_lo, x_hi = 0.0, float(vals.shape[1] - 1)
        x_label = "node"
    else:
        x_lo, x_hi = xrange
        x_label = "x"
    fig, ax = plt.subplots(figsize=(5, 7))
    im = ax.imshow(vals, origin="lower", aspect="auto",
                   extent=(x_lo, x_hi, float(t[0]), float(t[-1])), cmap=cmap)
    ax.set_xlabel(x_label)
    ax.set_ylabel("t")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return fig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Space-time heatmap of a trajectory CSV.")
    parser.add_argument("csv_path")
    parser.add_argument("--out", required=True)
    parser.add_argument("--xrange", help="physical x extent, e.g. --xrange=-20,20")
    args = parser.parse_args(argv)
    xrange = None
    if args.xrange:
        parts = args.xrange.split(",")
        if len(parts) != 2:
            print("--xrange expects 'x_lo,x_hi'", file=sys.stderr)
            return 1
        xrange = (float(parts[0]), float(parts[1]))
    try:
        plot_heatmap(args.csv_path, args.out, xrange=xrange)
    except CsvError as e:
        print(str(e), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
