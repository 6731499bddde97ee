"""CSV ingestion and emission for IsoFLOP points.

Input columns are ``budget_flops, n_params, d_tokens, loss``; any two of
the first three suffice and the third follows from ``C = 6 N D``. Emitted
floats carry 9 significant digits, so re-ingesting an emitted file and
writing it again reproduces it byte for byte.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import IsoflopPoints
from .errors import DataError

SIZE_COLUMNS = ("budget_flops", "n_params", "d_tokens")
POINT_COLUMNS = SIZE_COLUMNS + ("loss",)
SIG_DIGITS = 9


def fmt_float(value: float) -> str:
    """9-significant-digit text; NaN becomes an empty field."""
    value = float(value)
    return "" if math.isnan(value) else f"{value:.{SIG_DIGITS}g}"


def _parse(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError("non-finite")
    if value <= 0:
        raise ValueError("non-positive")
    return value


def ingest_csv(
    path,
    max_budget: Optional[float] = None,
    budget_column: Optional[str] = None,
) -> IsoflopPoints:
    """Read points from a CSV file.

    Args:
        path: File with a header row.
        max_budget: Keep only rows whose budget is strictly below this.
        budget_column: Column holding a nominal budget used for grouping.
            Defaults to ``budget_flops`` when present, else ``6 N D``.

    Raises:
        DataError: Missing columns, or rows with unparseable, non-finite or
            non-positive values (all offending line numbers are listed).
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in reader.fieldnames or []]
        if not header:
            raise DataError(f"{path}: missing header row")
        reader.fieldnames = header
        present = [c for c in SIZE_COLUMNS if c in header]
        missing = []
        if "loss" not in header:
            missing.append("loss")
        if len(present) < 2:
            missing.append(f"two of {SIZE_COLUMNS} (found {present})")
        if budget_column is not None and budget_column not in header:
            missing.append(budget_column)
        if missing:
            raise DataError(f"{path}: missing columns: {', '.join(missing)}")
        wanted = list(dict.fromkeys(present + ["loss"] + ([budget_column] if budget_column else [])))
        rows, bad, reasons = [], [], []
        for line, record in enumerate(reader, start=2):
            try:
                rows.append([_parse((record.get(c) or "").strip()) for c in wanted])
            except ValueError as exc:
                bad.append(line)
                reasons.append(f"line {line}: {exc}")
    if bad:
        shown = "; ".join(reasons[:20]) + ("; ..." if len(reasons) > 20 else "")
        raise DataError(f"{path}: invalid rows ({shown})", lines=bad)
    if not rows:
        raise DataError(f"{path}: no data rows")
    table = dict(zip(wanted, np.array(rows, dtype=float).T))
    C, N, D = (table.get(c) for c in SIZE_COLUMNS)
    if N is None:
        N = C / (6.0 * D)
    elif D is None:
        D = C / (6.0 * N)
    elif C is None:
        C = 6.0 * N * D
    budget = table[budget_column] if budget_column else C
    keep = np.ones(budget.size, dtype=bool) if max_budget is None else budget < max_budget
    return IsoflopPoints(budget[keep], N[keep], D[keep], table["loss"][keep])


def point_rows(points: IsoflopPoints) -> list[list[str]]:
    return [
        [fmt_float(c), fmt_float(n), fmt_float(d), fmt_float(l)]
        for c, n, d, l in zip(points.budget, points.N, points.D, points.loss)
    ]


def write_points_csv(
    points: IsoflopPoints,
    path,
    status: Optional[Sequence[str]] = None,
    budget_status: Optional[dict] = None,
) -> None:
    """Write points, optionally annotated with per-point and per-budget QC status."""
    header = list(POINT_COLUMNS)
    extra = []
    if status is not None:
        if len(status) != len(points):
            raise DataError("status must align with points")
        header.append("status")
        extra.append(list(status))
    if budget_status is not None:
        header.append("budget_status")
        extra.append([budget_status.get(float(c), "") for c in points.budget])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, row in enumerate(point_rows(points)):
            writer.writerow(row + [col[i] for col in extra])


__all__ = ["ingest_csv", "write_points_csv", "fmt_float", "POINT_COLUMNS", "SIZE_COLUMNS"]
