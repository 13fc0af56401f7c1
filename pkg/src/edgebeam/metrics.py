"""Per-sample metric records, Tukey box statistics and delimited output.

Quantiles use linear interpolation between order statistics (the numpy
default), pinned here so summary numbers are implementation-independent.
CSV columns and formatting are fixed: 9 significant digits, LF endings, one
row per control sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CSV_COLUMNS = ("t_ns", "node", "exec_ms", "latency_ms", "u", "u_sq",
               "position_m", "setpoint_m", "solved", "off_beam",
               "migrate_from", "migrate_to")


@dataclass
class MetricRecord:
    t: int                   # ns, actuation stamp
    mpc_node: str
    exec_ns: int
    latency_ns: int
    u: float
    u_sq: float
    position: float
    setpoint: float
    solved: bool
    off_beam: bool
    migrate_from: str = ""
    migrate_to: str = ""
    # decomposition and bookkeeping, not part of the delimited output
    net_ns: int = 0
    ovh_ns: int = 0
    queue_ns: int = 0
    excluded: bool = False

    @property
    def exec_ms(self) -> float:
        return self.exec_ns / 1e6

    @property
    def latency_ms(self) -> float:
        return self.latency_ns / 1e6


@dataclass
class BoxStats:
    median: float
    q1: float
    q3: float
    lo_whisker: float
    hi_whisker: float

    def as_dict(self) -> dict[str, float]:
        return {"median": self.median, "q1": self.q1, "q3": self.q3,
                "lo_whisker": self.lo_whisker, "hi_whisker": self.hi_whisker}


def box_stats(values: Sequence[float]) -> BoxStats:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("cannot summarize an empty column")
    q1, med, q3 = np.quantile(arr, [0.25, 0.5, 0.75], method="linear")
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = arr[(arr >= lo_fence) & (arr <= hi_fence)]
    # Tukey whiskers clip to the most extreme data inside the fences
    return BoxStats(median=float(med), q1=float(q1), q3=float(q3),
                    lo_whisker=float(inside.min()), hi_whisker=float(inside.max()))


_COLUMN_GETTERS = {
    "exec_ms": lambda r: r.exec_ns / 1e6,
    "latency_ms": lambda r: r.latency_ns / 1e6,
    "u": lambda r: r.u,
    "u_sq": lambda r: r.u_sq,
    "position_m": lambda r: r.position,
    "setpoint_m": lambda r: r.setpoint,
}


def summarize(records: Sequence[MetricRecord], column: str,
              include_excluded: bool = False) -> BoxStats:
    """Box statistics over one column, skipping respawn-flagged samples."""
    getter = _COLUMN_GETTERS.get(column)
    if getter is None:
        raise ValueError(f"unknown metric column {column!r}; choose from {sorted(_COLUMN_GETTERS)}")
    vals = [getter(r) for r in records if include_excluded or not r.excluded]
    return box_stats(vals)


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def emit_csv(records: Iterable[MetricRecord], path: str | Path) -> None:
    path = Path(path)
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(CSV_COLUMNS) + "\n")
            for r in records:
                row = (
                    str(r.t), r.mpc_node, _fmt(r.exec_ns / 1e6), _fmt(r.latency_ns / 1e6),
                    _fmt(r.u), _fmt(r.u_sq), _fmt(r.position), _fmt(r.setpoint),
                    "true" if r.solved else "false",
                    "true" if r.off_beam else "false",
                    r.migrate_from, r.migrate_to,
                )
                fh.write(",".join(row) + "\n")
    except OSError as exc:
        raise OSError(f"writing metrics to {path}: {exc}") from exc
