from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from app.exceptions import ValidationError


@dataclass(frozen=True)
class SolverConfig:
    """Time-stepping configuration (dt in internal time units)."""

    dt: float
    record_stride: int = 1
    boundary_warn_threshold: float = 1e-10

    def __post_init__(self):
        if not (self.dt > 0):
            raise ValidationError("Time step must be positive", detail=f"dt={self.dt}")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ValidationError(
                "record_stride must be a positive integer",
                detail=f"record_stride={self.record_stride}",
            )


@dataclass(frozen=True)
class GroundStateConfig:
    """Imaginary-time settings."""

    dt: float
    tol: float = 1e-10
    max_steps: int = 100_000
    energy_stride: int = 1
    recenter_stride: Optional[int] = None
    collapse_density_factor: float = 1e6

    def __post_init__(self):
        if not (self.dt > 0) or not (self.tol > 0) or self.max_steps < 1:
            raise ValidationError(
                "Invalid ground-state configuration",
                detail=f"dt={self.dt}, tol={self.tol}, max_steps={self.max_steps}",
            )
        if self.energy_stride < 1:
            raise ValidationError("energy_stride must be >= 1")


@dataclass
class Trajectory:
    """Times at which observers ran, plus metadata gathered during propagation."""

    times: list = field(default_factory=list)
    steps: int = 0
    boundary_warnings: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)

    @property
    def time_array(self) -> np.ndarray:
        return np.asarray(self.times, dtype=float)


@dataclass
class GroundStateResult:
    """Converged imaginary-time state with its diagnostics."""

    psi: object
    energy: float
    chemical_potential: float
    steps: int
    energy_history: list = field(default_factory=list)
