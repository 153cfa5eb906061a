from app.models.bspline import BSplineCurve, KnotVector
from app.models.constants import (
    ControlSample,
    ModelParams,
    PhysicalConstants,
    PolarizationAxis,
    SpeciesParams,
    UnitSystem,
)
from app.models.control import ControlBounds, ControlEndpoints, SumOfSinesCurve
from app.models.grid import ComplexField, Grid3D
from app.models.kernel import TruncatedKernelSpectrum
from app.models.optimizer import ConvergenceHistory, EvaluationRecord, OptimizerConfig
from app.models.solver import GroundStateConfig, GroundStateResult, SolverConfig, Trajectory

__all__ = [
    # Constants and units
    "PhysicalConstants",
    "SpeciesParams",
    "UnitSystem",
    "PolarizationAxis",
    "ControlSample",
    "ModelParams",
    # Grid
    "Grid3D",
    "ComplexField",
    "TruncatedKernelSpectrum",
    # Splines and controls
    "KnotVector",
    "BSplineCurve",
    "ControlEndpoints",
    "ControlBounds",
    "SumOfSinesCurve",
    # Solver
    "SolverConfig",
    "GroundStateConfig",
    "Trajectory",
    "GroundStateResult",
    # Optimizer
    "OptimizerConfig",
    "EvaluationRecord",
    "ConvergenceHistory",
]
