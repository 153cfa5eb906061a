# Computation services

from app.services.control_service import ControlSet, PerturbedControls
from app.services.observables import ObservableRecorder, ObservableSeries
from app.services.optimizer_service import CostEvaluator, ProblemSpec
from app.services.solver import GPESolver

__all__ = [
    "GPESolver",
    "ControlSet",
    "PerturbedControls",
    "ObservableRecorder",
    "ObservableSeries",
    "CostEvaluator",
    "ProblemSpec",
]
