"""Run records shared by the solver, the analysis and the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class Verdict(str, Enum):
    BLOWN_UP = "BlownUp"
    COMPLETED = "Completed"
    FAILED = "Failed"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class Snapshot:
    index: int
    t: float
    u: np.ndarray
    v: np.ndarray

    @property
    def sup(self) -> float:
        return float(self.u.max())


@dataclass
class RunReport:
    """Everything one solver run produced.

    ``series`` maps column names to equally long lists, ``t`` first.
    ``dt_tail`` keeps the most recent accepted steps for bracketing the
    blow-up time.
    """

    verdict: Verdict
    reason: str
    grid: object
    series: dict[str, list]
    snapshots: list[Snapshot]
    dt_tail: list[float]
    stats: dict[str, float] = field(default_factory=dict)
    dt_min: float = 0.0
    bracket: tuple[float, float] | None = None
    fit: object | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def t_final(self) -> float:
        return self.series["t"][-1]

    def column(self, name) -> np.ndarray:
        return np.asarray(self.series[name], dtype=float)

    @property
    def final(self) -> Snapshot:
        return self.snapshots[-1]
