"""Cost evaluation, gradients and the box-constrained / penalty optimizers."""

import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from app.config import settings
from app.exceptions import BudgetExhaustedError, NumericFaultError, ValidationError
from app.models.constants import ModelParams
from app.models.control import ControlBounds, ControlEndpoints
from app.models.grid import ComplexField, Grid3D
from app.models.kernel import TruncatedKernelSpectrum
from app.models.optimizer import ConvergenceHistory, OptimizerConfig
from app.models.solver import SolverConfig
from app.services.control_service import (
    ControlSet,
    assemble_controls,
    coefficient_bounds,
    linear_ramp_coefficients,
    normalized_bounds,
    refine_coefficients,
    sum_of_sines_controls,
)
from app.services.grid_service import atom_number
from app.services.observables import overlap_with_target
from app.services.solver import GPESolver, step_count

logger = logging.getLogger(__name__)

SENTINEL_FACTOR = 1e3
SUM_OF_SINES_LEVEL = 0


@dataclass
class ProblemSpec:
    """Everything a cost evaluation depends on."""

    model: ModelParams
    grid: Grid3D
    kernel: Optional[TruncatedKernelSpectrum]
    psi0: ComplexField
    psi_d: ComplexField
    T: float
    solver_config: SolverConfig
    endpoints: ControlEndpoints
    bounds: ControlBounds
    dipolar_derivative: str = "free-space"

    def __post_init__(self):
        n0 = atom_number(self.psi0)
        nd = atom_number(self.psi_d)
        if abs(n0 - nd) > 1e-9 * max(n0, nd):
            raise ValidationError(
                "Initial and target states must hold the same number of atoms",
                detail=f"N(psi0)={n0:.12g}, N(psi_d)={nd:.12g}",
            )
        step_count(self.T, self.solver_config.dt)

    @property
    def N0(self) -> float:
        return atom_number(self.psi_d)


@dataclass
class QuasiNewtonResult:
    x: np.ndarray
    fun: float
    iterations: int = 0
    status: str = "running"


class CostEvaluator:
    """
    Evaluates J(c) = (N0 - |<psi_d, psi(T)>|)^2 and records every evaluation.

    Evaluations are memoized per (parameterization, level, coefficients);
    memo hits are not recorded and do not consume budget. The history is
    written only from the calling thread.
    """

    def __init__(self, problem: ProblemSpec, budget: int, workers: int = None):
        """
        Initialize the evaluator.

        Args:
            problem: Problem definition
            budget: Maximum number of recorded evaluations
            workers: Thread count for batched evaluations
        """
        self.problem = problem
        self.budget = budget
        self.workers = settings.gradient_workers if workers is None else workers
        self.solver = GPESolver(
            problem.model,
            problem.grid,
            problem.kernel,
            dipolar_derivative=problem.dipolar_derivative,
        )
        self.history = ConvergenceHistory()
        self._memo = {}
        self._N0 = problem.N0

    # -- bookkeeping ------------------------------------------------------------

    @property
    def remaining(self) -> int:
        return self.budget - len(self.history)

    @property
    def normalization(self) -> float:
        if self.history.normalization is None:
            raise ValidationError("Cost normalization has not been computed")
        return self.history.normalization

    @property
    def sentinel(self) -> float:
        if self.history.normalization is None:
            return SENTINEL_FACTOR * self._N0**2
        return SENTINEL_FACTOR * self.history.normalization

    def controls_for(self, c: np.ndarray, level: int) -> ControlSet:
        p = self.problem
        if level == SUM_OF_SINES_LEVEL:
            return sum_of_sines_controls(c, p.endpoints, p.T, p.model)
        return assemble_controls(c, level, p.endpoints, p.T, p.model)

    # -- cost ---------------------------------------------------------------------

    def propagate_cost(self, controls) -> tuple:
        """(J, fault) for one control source; pure apart from logging."""
        p = self.problem
        try:
            psi_T, _ = self.solver.propagate(p.psi0, controls, p.T, p.solver_config)
        except NumericFaultError as e:
            logger.warning(f"Numeric fault during cost evaluation: {e.message} ({e.detail})")
            return self.sentinel, True
        overlap = overlap_with_target(psi_T, p.psi_d)
        return (self._N0 - overlap) ** 2, False

    def raw_cost(self, c: np.ndarray, level: int) -> tuple:
        started = time.perf_counter()
        cost, fault = self.propagate_cost(self.controls_for(c, level))
        return cost, fault, 1e3 * (time.perf_counter() - started)

    def compute_normalization(self) -> float:
        """Cost of the linear ramps; stored on the history, not recorded as an evaluation."""
        c = linear_ramp_coefficients(1, self.problem.T)
        cost, fault, _ = self.raw_cost(c, 1)
        if fault:
            raise NumericFaultError("Linear-ramp reference propagation failed")
        self.history.normalization = cost
        logger.info(f"Linear-ramp cost J_linear = {cost:.10g}")
        return cost

    def _key(self, c: np.ndarray, level: int) -> tuple:
        return (level, np.ascontiguousarray(c, dtype=float).tobytes())

    def evaluate_many(self, points: list, level: int) -> list:
        """
        Evaluate several coefficient vectors, concurrently when workers > 1.

        New evaluations are recorded in the order of points.

        Raises:
            BudgetExhaustedError: If the budget runs out; the points that fit are recorded first
        """
        points = [np.array(c, dtype=float) for c in points]
        pending = []
        seen = set()
        for c in points:
            key = self._key(c, level)
            if key not in self._memo and key not in seen:
                seen.add(key)
                pending.append(c)

        exhausted = len(pending) > self.remaining
        pending = pending[: max(self.remaining, 0)]
        if self.workers > 1 and len(pending) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as executor:
                results = list(executor.map(lambda c: self.raw_cost(c, level), pending))
        else:
            results = [self.raw_cost(c, level) for c in pending]

        for c, (cost, fault, wall_ms) in zip(pending, results):
            self._memo[self._key(c, level)] = cost
            record = self.history.append(level, c, cost, wall_ms, fault)
            logger.debug(f"Evaluation {record.index} (level {level}): J={cost:.10g}")

        if exhausted:
            raise BudgetExhaustedError(
                "Cost evaluation budget exhausted", detail=f"budget={self.budget}"
            )
        return [self._memo[self._key(c, level)] for c in points]

    def evaluate(self, c: np.ndarray, level: int) -> float:
        return self.evaluate_many([c], level)[0]

    def objective(self, level: int) -> tuple:
        """(f, f_many) returning costs divided by the linear-ramp normalization."""
        norm = self.normalization

        def f(c):
            return self.evaluate(c, level) / norm

        def f_many(points):
            return [value / norm for value in self.evaluate_many(points, level)]

        return f, f_many

    def gradient(self, c: np.ndarray, level: int, h: float, lower=None, upper=None) -> tuple:
        """Forward-difference gradient of the normalized cost; returns (grad, fault_flag)."""
        start = len(self.history)
        _, f_many = self.objective(level)
        grad = fd_gradient(f_many, c, h, lower, upper)
        fault = any(r.fault for r in self.history.records[start:])
        if fault:
            logger.warning("Gradient contains sentinel costs from failed propagations")
        return grad, fault


def fd_gradient(
    fun_many: Callable[[list], list],
    c: np.ndarray,
    h: float,
    lower: np.ndarray = None,
    upper: np.ndarray = None,
    f0: float = None,
) -> np.ndarray:
    """
    Forward-difference gradient using dim(c) + 1 function values.

    Coordinates whose forward step would leave the box step backwards instead,
    so every trial point stays feasible.
    """
    if not h > 0:
        raise ValidationError("Finite-difference step must be positive", detail=f"h={h}")
    c = np.asarray(c, dtype=float)
    steps = np.full(c.size, float(h))
    if upper is not None:
        steps[c + h > np.asarray(upper)] = -float(h)
    if lower is not None:
        too_low = c + steps < np.asarray(lower)
        steps[too_low] = float(h)
    trials = [c + steps[i] * np.eye(c.size)[i] for i in range(c.size)]
    if f0 is None:
        values = fun_many([c] + trials)
        f0, values = values[0], values[1:]
    else:
        values = fun_many(trials)
    return (np.asarray(values, dtype=float) - f0) / steps


def _damped_bfgs_update(B: Optional[np.ndarray], s: np.ndarray, y: np.ndarray) -> np.ndarray:
    sy = float(s @ y)
    if B is None:
        scale = float(y @ y) / sy if sy > 0 else 1.0
        B = scale * np.eye(s.size)
    Bs = B @ s
    sBs = float(s @ Bs)
    if sBs <= 0:
        return B
    if sy < 0.2 * sBs:
        theta = 0.8 * sBs / (sBs - sy)
        r = theta * y + (1.0 - theta) * Bs
    else:
        r = y
    return B - np.outer(Bs, Bs) / sBs + np.outer(r, r) / float(s @ r)


def projected_quasi_newton(
    fun: Callable[[np.ndarray], float],
    x0: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    max_iter: Optional[int] = None,
    grad: Callable[[np.ndarray], np.ndarray] = None,
    fun_many: Callable[[list], list] = None,
    fd_step: float = 1e-3,
    gtol: float = 1e-10,
    max_step: float = 1.0,
    c1: float = 1e-4,
    max_backtracks: int = 30,
) -> QuasiNewtonResult:
    """
    Minimize fun over the box [lower, upper].

    Steps are quasi-Newton directions in the free variables (damped BFGS on
    the Hessian approximation), projected onto the box and accepted by
    Armijo backtracking. A failed line search restarts from steepest descent;
    a second consecutive failure ends the run. BudgetExhaustedError raised by
    fun ends the run with the last accepted iterate.

    Args:
        fun: Objective
        x0: Starting point, projected onto the box
        lower, upper: Box bounds
        max_iter: Iteration limit, None for no limit
        grad: Exact gradient; finite differences of fun_many (or fun) otherwise
        fun_many: Batched objective used by the finite-difference gradient
        fd_step: Finite-difference step
        gtol: Stop when the projected gradient is below this in max norm
        max_step: Cap on the max-norm of a trial step

    Returns:
        QuasiNewtonResult with status converged, max-iterations,
        line-search-failure or budget-exhausted
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    batch = fun_many or (lambda points: [fun(p) for p in points])

    def gradient(point, value):
        if grad is not None:
            return np.asarray(grad(point), dtype=float)
        return fd_gradient(batch, point, fd_step, lower, upper, f0=value)

    result = QuasiNewtonResult(x=x.copy(), fun=np.inf)
    try:
        f = fun(x)
        result.fun = f
        g = gradient(x, f)
        B = None
        restarted = False
        iterations = itertools.count(1) if max_iter is None else range(1, max_iter + 1)
        for iteration in iterations:
            projected = x - np.clip(x - g, lower, upper)
            if np.max(np.abs(projected)) <= gtol:
                result.status = "converged"
                break

            active = ((x <= lower) & (g > 0)) | ((x >= upper) & (g < 0))
            free = ~active
            d = np.zeros_like(x)
            if B is None:
                d[free] = -g[free]
            else:
                try:
                    d[free] = -np.linalg.solve(B[np.ix_(free, free)], g[free])
                except np.linalg.LinAlgError:
                    d[free] = -g[free]
                if g @ d >= 0:
                    d = np.where(free, -g, 0.0)
            largest = np.max(np.abs(d))
            if largest > max_step:
                d *= max_step / largest

            accepted = False
            alpha = 1.0
            for _ in range(max_backtracks):
                x_new = np.clip(x + alpha * d, lower, upper)
                step = x_new - x
                if not np.any(step):
                    break
                f_new = fun(x_new)
                if f_new <= f + c1 * float(g @ step):
                    accepted = True
                    break
                alpha *= 0.5

            if not accepted:
                if restarted:
                    logger.info(f"Line search failed twice at iteration {iteration}; stopping")
                    result.status = "line-search-failure"
                    break
                logger.warning(
                    f"Line search failed at iteration {iteration}; restarting from steepest descent"
                )
                B = None
                restarted = True
                continue

            restarted = False
            g_new = gradient(x_new, f_new)
            B = _damped_bfgs_update(B, step, g_new - g)
            x, f, g = x_new, f_new, g_new
            result.x, result.fun, result.iterations = x.copy(), f, iteration
        else:
            result.status = "max-iterations"
    except BudgetExhaustedError:
        result.status = "budget-exhausted"
    return result


def box_constrained_quasi_newton(
    evaluator: CostEvaluator,
    level: int,
    c0: np.ndarray,
    config: OptimizerConfig,
    max_iter: Optional[int] = None,
) -> tuple:
    """Projected quasi-Newton on one B-spline level; returns (c*, history)."""
    p = evaluator.problem
    lower, upper = coefficient_bounds(level, p.bounds, p.endpoints, p.T)
    f, f_many = evaluator.objective(level)
    result = projected_quasi_newton(
        f,
        c0,
        lower,
        upper,
        max_iter=max_iter,
        fun_many=f_many,
        fd_step=config.fd_step,
        max_step=config.max_step,
    )
    logger.info(
        f"Level {level}: {result.iterations} iterations, status {result.status}, "
        f"J/J_linear={result.fun:.6g}, evaluations so far {len(evaluator.history)}"
    )
    return result.x, evaluator.history


def sines_penalty(
    c: np.ndarray, problem: ProblemSpec, weight: float, samples: int = 201
) -> float:
    """weight * sum of squared bound violations of u_i(t) on dense samples."""
    controls = sum_of_sines_controls(c, problem.endpoints, problem.T, problem.model)
    boxes = normalized_bounds(problem.bounds, problem.endpoints)
    u = controls.normalized(np.linspace(0.0, problem.T, samples))
    below = np.maximum(boxes[:, :1] - u, 0.0)
    above = np.maximum(u - boxes[:, 1:], 0.0)
    return float(weight * np.sum(below**2 + above**2))


def nelder_mead_penalty(
    evaluator: CostEvaluator,
    config: OptimizerConfig,
    c0: np.ndarray = None,
) -> tuple:
    """
    Nelder-Mead on the sum-of-sines coefficients with a quadratic bound penalty.

    Returns:
        (c*, history)
    """
    if config.penalty_weight <= 0:
        raise ValidationError("penalty_weight must be positive")
    problem = evaluator.problem
    n = 3 * config.sines_modes
    c0 = np.zeros(n) if c0 is None else np.asarray(c0, dtype=float)
    if c0.size != n:
        raise ValidationError(
            "Initial sum-of-sines vector has the wrong length", detail=f"{c0.size} != {n}"
        )
    norm = evaluator.normalization

    def objective(c):
        cost = evaluator.evaluate(c, SUM_OF_SINES_LEVEL) / norm
        return cost + sines_penalty(
            c, problem, config.penalty_weight, samples=config.penalty_samples
        )

    simplex = np.vstack([c0, c0 + config.simplex_edge * np.eye(n)])
    best = c0
    try:
        result = optimize.minimize(
            objective,
            c0,
            method="Nelder-Mead",
            options={
                "initial_simplex": simplex,
                "maxfev": evaluator.remaining,
                "maxiter": 100 * evaluator.budget,
                "xatol": 0.0,
                "fatol": 0.0,
            },
        )
        best = result.x
    except BudgetExhaustedError:
        logger.info("Nelder-Mead stopped at the evaluation budget")
        records = [r for r in evaluator.history.records if r.level == SUM_OF_SINES_LEVEL]
        if records:
            best = min(records, key=lambda r: r.cost).coefficients
    return best, evaluator.history


def multilevel_optimize(
    evaluator: CostEvaluator, config: OptimizerConfig, c0: np.ndarray = None
) -> tuple:
    """
    Optimize through the B-spline ladder, refining the iterate between levels.

    Every level but the last runs iters_per_level iterations; the last runs
    until the evaluation budget is spent or the optimizer stops.

    Returns:
        (c*, ControlSet, ConvergenceHistory) for the best recorded evaluation
    """
    problem = evaluator.problem
    levels = list(config.levels)
    if evaluator.history.normalization is None:
        evaluator.compute_normalization()

    c = linear_ramp_coefficients(levels[0], problem.T) if c0 is None else np.asarray(c0, dtype=float)
    for position, level in enumerate(levels):
        evaluator.history.mark_level(level)
        lower, upper = coefficient_bounds(level, problem.bounds, problem.endpoints, problem.T)
        c = np.clip(c, lower, upper)
        is_last = position == len(levels) - 1
        c, _ = box_constrained_quasi_newton(
            evaluator, level, c, config, max_iter=None if is_last else config.iters_per_level
        )
        if evaluator.remaining <= 0 or is_last:
            break
        c = refine_coefficients(c, level, levels[position + 1], problem.T)
        logger.info(f"Refined level {level} -> {levels[position + 1]}: {c.size} coefficients")

    best = evaluator.history.best_record()
    controls = evaluator.controls_for(best.coefficients, best.level)
    return best.coefficients, controls, evaluator.history


def direct_optimize(evaluator: CostEvaluator, config: OptimizerConfig, level: int = 4) -> tuple:
    """Single-level optimization from the linear ramps until the budget is spent."""
    problem = evaluator.problem
    if evaluator.history.normalization is None:
        evaluator.compute_normalization()
    evaluator.history.mark_level(level)
    box_constrained_quasi_newton(
        evaluator, level, linear_ramp_coefficients(level, problem.T), config, max_iter=None
    )
    best = evaluator.history.best_record()
    return best.coefficients, evaluator.controls_for(best.coefficients, level), evaluator.history


def sum_of_sines_optimize(evaluator: CostEvaluator, config: OptimizerConfig) -> tuple:
    if evaluator.history.normalization is None:
        evaluator.compute_normalization()
    evaluator.history.mark_level(SUM_OF_SINES_LEVEL)
    nelder_mead_penalty(evaluator, config)
    best = evaluator.history.best_record()
    controls = evaluator.controls_for(best.coefficients, SUM_OF_SINES_LEVEL)
    return best.coefficients, controls, evaluator.history


def best_so_far(history: ConvergenceHistory, normalized: bool = False) -> np.ndarray:
    """Prefix minimum of the recorded costs."""
    if not len(history):
        raise ValidationError("History is empty")
    best = np.minimum.accumulate(history.costs)
    if normalized:
        if history.normalization is None:
            raise ValidationError("History has no normalization")
        return best / history.normalization
    return best
