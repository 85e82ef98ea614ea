"""Per-iteration solver records and their CSV form."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

HEADER = ("phase", "iter", "elapsed_s", "objective", "data_term", "reg_term", "rank")


def _fmt(x: float) -> str:
    return "%.17g" % x


class Clock:
    """Elapsed-time source shared by the phases of one solve.

    ``kind="wall"`` reads ``time.perf_counter``; ``kind="steps"`` counts
    ticks, which makes traces reproducible byte for byte.
    """

    def __init__(self, kind: str = "wall"):
        if kind not in ("wall", "steps"):
            raise ValueError(f"unknown clock kind {kind!r}")
        self.kind = kind
        self._t0 = time.perf_counter()
        self._steps = 0

    def tick(self) -> float:
        if self.kind == "steps":
            self._steps += 1
            return float(self._steps)
        return time.perf_counter() - self._t0


@dataclass
class TraceRow:
    phase: str
    iter: int
    elapsed: float
    objective: float
    data_term: float
    reg_term: float
    rank: int

    def cells(self) -> list[str]:
        return [self.phase, str(self.iter), _fmt(self.elapsed), _fmt(self.objective),
                _fmt(self.data_term), _fmt(self.reg_term), str(self.rank)]


@dataclass
class SolveTrace:
    rows: list[TraceRow] = field(default_factory=list)
    status: dict = field(default_factory=dict)
    rejections: int = 0

    def append(self, phase, it, elapsed, objective, data_term, reg_term, rank):
        self.rows.append(TraceRow(phase, int(it), float(elapsed), float(objective),
                                  float(data_term), float(reg_term), int(rank)))

    def extend(self, other: "SolveTrace") -> None:
        self.rows.extend(other.rows)
        self.status.update(other.status)
        self.rejections += other.rejections

    def phase(self, name: str) -> list[TraceRow]:
        return [r for r in self.rows if r.phase == name]

    def objectives(self, phase: str | None = None) -> list[float]:
        rows = self.rows if phase is None else self.phase(phase)
        return [r.objective for r in rows]

    @property
    def final(self) -> TraceRow:
        return self.rows[-1]

    @property
    def stalled(self) -> bool:
        return any(v == "stalled" for v in self.status.values())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HEADER)
            for row in self.rows:
                w.writerow(row.cells())

    @classmethod
    def from_csv(cls, path) -> "SolveTrace":
        trace = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
            if header != HEADER:
                raise ValueError(f"unexpected trace header {header}")
            for cells in reader:
                trace.append(cells[0], int(cells[1]), float(cells[2]), float(cells[3]),
                             float(cells[4]), float(cells[5]), int(cells[6]))
        return trace
