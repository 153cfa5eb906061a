from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from app.exceptions import ValidationError

ALGORITHMS = ("projected-quasi-newton", "nelder-mead-penalty")

HISTORY_COLUMNS = ["k", "level", "J", "J_normalized", "best_so_far", "fault_flag", "wall_ms"]


@dataclass(frozen=True)
class OptimizerConfig:
    """Budget and algorithm settings of one optimization run."""

    iters_per_level: int = 15
    eval_budget: int = 2500
    fd_step: float = 1e-3
    algorithm: str = "projected-quasi-newton"
    penalty_weight: float = 1e3  # multiplies the normalized cost
    seed: int = 0
    levels: tuple = (1, 2, 3, 4)
    sines_modes: int = 9
    simplex_edge: float = 0.1
    penalty_samples: int = 201
    max_step: float = 1.0

    def __post_init__(self):
        if self.eval_budget < 1:
            raise ValidationError("eval_budget must be >= 1")
        if not (self.fd_step > 0):
            raise ValidationError("fd_step must be positive")
        if self.algorithm not in ALGORITHMS:
            raise ValidationError("Unknown optimizer algorithm", detail=self.algorithm)
        if self.penalty_weight <= 0:
            raise ValidationError("penalty_weight must be positive")


@dataclass(frozen=True)
class EvaluationRecord:
    index: int
    level: int
    coefficients: np.ndarray
    cost: float
    wall_ms: float
    fault: bool = False


@dataclass
class ConvergenceHistory:
    """Ordered cost evaluations with level boundaries."""

    records: list = field(default_factory=list)
    level_boundaries: list = field(default_factory=list)  # (level, first record index)
    normalization: Optional[float] = None

    def __len__(self) -> int:
        return len(self.records)

    def append(self, level: int, coefficients, cost: float, wall_ms: float, fault: bool):
        record = EvaluationRecord(
            index=len(self.records) + 1,
            level=level,
            coefficients=np.array(coefficients, dtype=float),
            cost=float(cost),
            wall_ms=float(wall_ms),
            fault=bool(fault),
        )
        self.records.append(record)
        return record

    def mark_level(self, level: int):
        self.level_boundaries.append((level, len(self.records) + 1))

    @property
    def costs(self) -> np.ndarray:
        return np.array([r.cost for r in self.records], dtype=float)

    def best_record(self) -> EvaluationRecord:
        if not self.records:
            raise ValidationError("History is empty")
        return min(self.records, key=lambda r: r.cost)

    def to_frame(self) -> pd.DataFrame:
        if not self.records:
            raise ValidationError("History is empty")
        costs = self.costs
        norm = self.normalization or 1.0
        best = np.minimum.accumulate(costs) / norm
        return pd.DataFrame(
            {
                "k": [r.index for r in self.records],
                "level": [r.level for r in self.records],
                "J": costs,
                "J_normalized": costs / norm,
                "best_so_far": best,
                "fault_flag": [int(r.fault) for r in self.records],
                "wall_ms": [r.wall_ms for r in self.records],
            },
            columns=HISTORY_COLUMNS,
        )
