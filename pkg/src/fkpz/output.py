"""CSV tables with fixed schemas and the atomically written run manifest."""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SCHEMA_VERSION = 1

SCHEMAS: dict[str, tuple[str, ...]] = {
    "calibration": ("k1", "k2", "measured", "exact", "rel_error"),
    "kernel_profile": ("t", "x_index", "y_index", "P", "rhs_green1", "ratio"),
    "kernel_summary": ("t", "c_low", "c_high"),
    "green_profile": ("x_index", "y_index", "G", "rhs_green00", "ratio"),
    "green_summary": ("c_low", "c_high"),
    "trajectory": ("t", "l1", "l2", "hardy", "grad_q"),
    "regularity": ("quantity", "exponent", "value", "flag", "bound"),
    "decay": ("t", "norm"),
    "residuals": ("iteration", "residual", "ball_norm"),
    "blowup": ("t", "Y", "residual"),
    "bands": ("band_lo", "band_hi", "mean_u", "fitted_slope", "r2"),
    "divergence": ("alpha", "fitted_exponent", "predicted_exponent", "classification", "r2"),
    "layer_sums": ("h", "layer_sum"),
    "thresholds": ("alpha", "classification", "subcritical", "weighted", "nonexistence", "uniqueness"),
    "drift": ("t", "min_u", "l1"),
    "sweep_summary": ("param", "value", "exit_code", "verdict", "classification", "primary"),
    "convergence": ("h", "value", "difference", "observed_order"),
}


def format_cell(value) -> str:
    """Floats with 17 significant digits, integers and strings verbatim."""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if value is None:
        return ""
    return str(value)


def write_csv(directory: Path, schema: str, rows: Iterable[Sequence], name: str | None = None) -> str:
    """Write ``rows`` under the named schema; returns the file name.

    Raises:
        ValueError: unknown schema or a row of the wrong width.
    """
    columns = SCHEMAS.get(schema)
    if columns is None:
        raise ValueError(f"unknown CSV schema {schema!r}")
    fname = f"{name or schema}.csv"
    path = Path(directory) / fname
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise ValueError(f"{schema}: row has {len(row)} cells, schema has {len(columns)}")
            writer.writerow([format_cell(v) for v in row])
    return fname


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    """Header and raw rows of a CSV written by :func:`write_csv`."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else str(v)
    if isinstance(value, Path):
        return str(value)
    return value


def write_json_atomic(path: str | Path, payload: dict) -> None:
    """Write JSON through a temporary file in the same directory and rename it."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
