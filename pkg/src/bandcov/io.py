"""CSV and JSON helpers shared by the library and the command line.

Matrix text format: one row per line, comma-separated decimals, no header.
Values are written with 17 significant digits so float64 round-trips
bitwise.
"""

import json
from pathlib import Path

import numpy as np

__all__ = ["read_matrix", "write_matrix", "read_json", "write_json"]


def write_matrix(path, matrix):
    np.savetxt(path, np.atleast_2d(np.asarray(matrix, dtype=float)), fmt="%.17g", delimiter=",")


def read_matrix(path):
    arr = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    return arr


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=False)
        fh.write("\n")


def read_json(path):
    with open(Path(path)) as fh:
        return json.load(fh)
