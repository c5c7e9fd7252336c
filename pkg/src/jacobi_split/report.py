"""Solve reports and their CSV serialization.

One report per (variant, rank count) run, mirroring the benchmark table
layout: iteration count, communication and total wall time (max over
ranks), exchanged payload volume (sum over ranks), final residual, and an
optional efficiency percentage filled in by the benchmark driver.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields


@dataclass
class SolveReport:
    variant: str
    n_ranks: int
    iterations: int
    converged: bool
    diverged: bool
    comm_time_s: float
    total_time_s: float
    bytes_exchanged: int
    residual_final: float
    efficiency_pct: float | None = None
    residual_history: list[float] = field(default_factory=list, repr=False)

    def summary(self) -> str:
        eff = "" if self.efficiency_pct is None else f" eff={self.efficiency_pct:.2f}%"
        state = "converged" if self.converged else ("diverged" if self.diverged else "not-converged")
        return (
            f"{self.variant} p={self.n_ranks} iters={self.iterations} {state} "
            f"residual={self.residual_final:.3e} comm={self.comm_time_s:.4f}s "
            f"total={self.total_time_s:.4f}s bytes={self.bytes_exchanged}{eff}"
        )


_COLUMNS = [f.name for f in fields(SolveReport)]


def _encode(name, value):
    if value is None:
        return ""
    if name == "residual_history":
        return ";".join(repr(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _decode(name, text):
    if name in ("variant",):
        return text
    if name in ("n_ranks", "iterations", "bytes_exchanged"):
        return int(text)
    if name in ("converged", "diverged"):
        return text == "true"
    if name == "efficiency_pct":
        return None if text == "" else float(text)
    if name == "residual_history":
        return [] if text == "" else [float(v) for v in text.split(";")]
    return float(text)


def write_reports_csv(reports, path):
    """Write one CSV row per report; floats use shortest round-trip repr."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_COLUMNS)
        for rep in reports:
            writer.writerow([_encode(c, getattr(rep, c)) for c in _COLUMNS])


def read_reports_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != _COLUMNS:
            raise ValueError(f"unexpected report CSV header: {header}")
        return [
            SolveReport(**{c: _decode(c, cell) for c, cell in zip(_COLUMNS, row)})
            for row in reader
        ]
