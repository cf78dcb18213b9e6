"""CSV exchange format for observation streams.

Columns are ``x_1..x_d, z_1..z_d, b`` and optionally ``outlier`` (0/1).
Floats are written with 17 significant digits so a round trip is exact.
"""

from __future__ import annotations

import csv
import re

import numpy as np

from .errors import ConfigError, ParseError


def trajectory_header(d: int, with_flags: bool = False) -> list[str]:
    cols = [f"x_{j}" for j in range(1, d + 1)] + [f"z_{j}" for j in range(1, d + 1)] + ["b"]
    return cols + ["outlier"] if with_flags else cols


def write_trajectory(path, X, Z, B, outlier=None):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    B = np.asarray(B, dtype=float).reshape(-1)
    d = X.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trajectory_header(d, outlier is not None))
        for i in range(X.shape[0]):
            row = [f"{v:.17g}" for v in X[i]] + [f"{v:.17g}" for v in Z[i]] + [f"{B[i]:.17g}"]
            if outlier is not None:
                row.append(str(int(bool(outlier[i]))))
            w.writerow(row)


def trajectory_dim(path) -> int:
    """Feature dimension declared by the header, without reading the body."""
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
    return _parse_header(header)[0]


def _parse_header(header):
    if not header:
        raise ParseError("line 1: missing header")
    flags = header[-1] == "outlier"
    cols = header[:-1] if flags else header
    if len(cols) < 3 or len(cols) % 2 == 0 or cols[-1] != "b":
        raise ParseError(f"line 1: expected columns x_1..x_d, z_1..z_d, b; got {header}")
    d = (len(cols) - 1) // 2
    if cols != trajectory_header(d):
        raise ParseError(f"line 1: expected columns x_1..x_d, z_1..z_d, b; got {header}")
    return d, flags


def read_trajectory(path, d: int | None = None):
    """Load ``(X, Z, B, outlier)``; ``outlier`` is None if the column is absent.

    Raises ConfigError if ``d`` is given and disagrees with the header, and
    ParseError (naming the line) for malformed rows.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        d_file, flags = _parse_header(next(reader, None))
        if d is not None and d != d_file:
            raise ConfigError(f"trajectory has d={d_file} but the configuration expects d={d}")
        width = 2 * d_file + 1 + flags
        rows, marks = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ParseError(f"line {line_no}: expected {width} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row[:2 * d_file + 1]]
            except ValueError as exc:
                raise ParseError(f"line {line_no}: {exc}") from None
            if not np.isfinite(vals).all():
                raise ParseError(f"line {line_no}: non-finite value")
            rows.append(vals)
            if flags:
                if not re.fullmatch(r"[01]", row[-1].strip()):
                    raise ParseError(f"line {line_no}: outlier flag must be 0 or 1")
                marks.append(row[-1].strip() == "1")
    data = np.array(rows, dtype=float).reshape(-1, 2 * d_file + 1)
    X = np.ascontiguousarray(data[:, :d_file])
    Z = np.ascontiguousarray(data[:, d_file:2 * d_file])
    B = np.ascontiguousarray(data[:, -1])
    return X, Z, B, (np.array(marks, dtype=bool) if flags else None)
