"""Reader for the shared trajectory CSV layout: header t,x_0,...,x_n."""
from __future__ import annotations

from pathlib import Path

import numpy as np


class CsvError(ValueError):
    pass


def read_csv(path):
    path = Path(path)
    if not path.exists():
        raise CsvError(f"input CSV not found: {path}")
    try:
        with path.open() as fh:
            header = fh.readline().strip().split(",")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    except (OSError, ValueError) as e:
        raise CsvError(f"malformed CSV {path}: {e}") from None
    if not header or header[0] != "t" or data.shape[1] != len(header):
        raise CsvError(f"malformed CSV {path}: expected header t,x_0,...,x_n")
    return data[:, 0], data[:, 1:]
