"""Per-run metric traces and their CSV form.

``metrics.csv`` has the fixed header in :data:`COLUMNS`; an empty cell
means "not measured at this row" (diagnostics on a coarser cadence, losses
before the first update). Wall-clock times go to a separate ``timing.csv``
so that identical runs produce byte-identical metric files.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

COLUMNS = (
    "step",
    "score_mean",
    "score_std",
    "entropy_mean",
    "alpha",
    "q_estimate_mean",
    "q_true_mean",
    "bias_mean",
    "state_cosine_similarity",
    "critic_loss_1",
    "critic_loss_2",
    "policy_loss",
    "mean_y",
)


class NaNAbort(FloatingPointError):
    """A metric went NaN or infinite; training is aborted."""


def _fmt(value: Optional[float]) -> str:
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


@dataclass
class MetricTrace:
    rows: list[dict] = field(default_factory=list)
    wall_times: list[float] = field(default_factory=list)

    def append(self, row: dict, wall_time: float = 0.0) -> None:
        unknown = set(row) - set(COLUMNS)
        if unknown:
            raise KeyError(f"unknown trace column(s) {sorted(unknown)}")
        step = row.get("step")
        if step is None:
            raise ValueError("trace row needs a step")
        if self.rows and step <= self.rows[-1]["step"]:
            raise ValueError(f"trace steps must strictly increase ({step} after {self.rows[-1]['step']})")
        for key, value in row.items():
            if value is not None and not math.isfinite(value):
                raise NaNAbort(f"metric {key!r} is {value} at step {step}")
        self.rows.append({c: row.get(c) for c in COLUMNS})
        self.wall_times.append(wall_time)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> list[Optional[float]]:
        return [r[name] for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for r in self.rows:
            writer.writerow([_fmt(r[c]) for c in COLUMNS])
        return buf.getvalue()

    def write(self, directory: str | Path) -> None:
        directory = Path(directory)
        (directory / "metrics.csv").write_text(self.to_csv())
        lines = ["step,wall_time"] + [f"{r['step']},{w!r}" for r, w in zip(self.rows, self.wall_times)]
        (directory / "timing.csv").write_text("\n".join(lines) + "\n")

    @classmethod
    def read(cls, directory: str | Path) -> MetricTrace:
        directory = Path(directory)
        return cls.from_csv((directory / "metrics.csv").read_text())

    @classmethod
    def from_csv(cls, text: str) -> MetricTrace:
        reader = csv.reader(io.StringIO(text))
        header = tuple(next(reader))
        if header != COLUMNS:
            raise ValueError(f"unexpected metrics header {header}")
        trace = cls()
        for line in reader:
            row = {}
            for c, cell in zip(COLUMNS, line):
                row[c] = None if cell == "" else (int(cell) if c == "step" else float(cell))
            trace.append(row)
        return trace
