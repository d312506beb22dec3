"""Figure scripts for the CSV exports of the delayopt solver."""

from .csvio import read_csv
from .trajectories import plot_trajectories
from .heatmap import plot_heatmap

__version__ = "0.1.0"
