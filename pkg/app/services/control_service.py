"""Coefficient vectors to physical control trajectories, bounds and perturbations."""

import logging
import math
from dataclasses import dataclass, replace
from typing import Union

import numpy as np
import pandas as pd

from app.exceptions import ValidationError
from app.models.bspline import BSplineCurve
from app.models.constants import ControlSample, ModelParams
from app.models.control import ControlBounds, ControlEndpoints, SumOfSinesCurve
from app.services.bspline_service import (
    curve_eval,
    greville_points,
    open_uniform_knots,
    refine_curve,
)

logger = logging.getLogger(__name__)

NUM_CONTROLS = 3
PERTURBATION_FACTORS = (1.03, 0.97, 1.03, 0.97)

Curve = Union[BSplineCurve, SumOfSinesCurve]


def evaluate_curve(curve: Curve, t):
    if isinstance(curve, SumOfSinesCurve):
        values = curve.evaluate(t)
        return float(values) if np.ndim(t) == 0 else values
    return curve_eval(curve, t)


@dataclass(frozen=True, eq=False)
class ControlSet:
    """Three normalized curves u_i and the affine maps to a_s, w_rho, w_z."""

    curves: tuple
    endpoints: ControlEndpoints
    T: float
    model: ModelParams

    def __post_init__(self):
        if len(self.curves) != NUM_CONTROLS:
            raise ValidationError(f"A control set needs {NUM_CONTROLS} curves")
        if not self.T > 0:
            raise ValidationError("Horizon T must be positive", detail=f"T={self.T}")

    def normalized(self, t) -> np.ndarray:
        """u_i(t) for t in [0, T]; shape (3,) or (3, len(t))."""
        return np.array([evaluate_curve(curve, t) for curve in self.curves])

    def physical(self, t) -> np.ndarray:
        """(a_s [a0], w_rho [rad/s], w_z [rad/s]) on [0, T], frozen at final values beyond T."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValidationError("Controls are undefined before t = 0", detail=f"t={t.min()}")
        u = self.normalized(np.minimum(t, self.T))
        out = np.empty_like(u)
        for i, (initial, final) in enumerate(self.endpoints.pairs()):
            out[i] = initial + (final - initial) * u[i]
        return out

    def sample(self, t: float) -> ControlSample:
        a_s_a0, w_rho, w_z = self.physical(float(t))
        return self.model.control_sample(
            self.model.a_s_from_a0(a_s_a0),
            self.model.omega_from_si(w_rho),
            self.model.omega_from_si(w_z),
        )


def sample_controls(controls, t: float) -> tuple:
    """(a_s [a0], w_rho [rad/s], w_z [rad/s], g, gamma_qf) at time t."""
    sample = controls.sample(t)
    model = controls.model
    return (
        sample.a_s / model.a0,
        model.omega_to_si(sample.omega_rho),
        model.omega_to_si(sample.omega_z),
        sample.g,
        sample.gamma_qf,
    )


def free_coefficient_count(level: int, T: float = 1.0, allow_extended: bool = False) -> int:
    return open_uniform_knots(level, T, allow_extended=allow_extended).basis_count - 2


def linear_ramp_coefficients(level: int, T: float) -> np.ndarray:
    """Interior coefficients reproducing u_i(t) = t/T exactly (Greville abscissae / T)."""
    interior = greville_points(open_uniform_knots(level, T))[1:-1] / T
    return np.tile(interior, NUM_CONTROLS)


def split_coefficients(c: np.ndarray, level: int, T: float, allow_extended: bool = False) -> list:
    """Full per-control coefficient arrays with 0 and 1 pinned at the ends."""
    c = np.asarray(c, dtype=float).ravel()
    n_free = free_coefficient_count(level, T, allow_extended=allow_extended)
    if c.size != NUM_CONTROLS * n_free:
        raise ValidationError(
            "Coefficient vector length does not match the level",
            detail=f"level {level} needs {NUM_CONTROLS * n_free}, got {c.size}",
        )
    return [
        np.concatenate([[0.0], c[i * n_free : (i + 1) * n_free], [1.0]])
        for i in range(NUM_CONTROLS)
    ]


def assemble_controls(
    c: np.ndarray, level: int, endpoints: ControlEndpoints, T: float, model: ModelParams
) -> ControlSet:
    """
    Build the control set of a coefficient vector on the given knot level.

    Raises:
        ValidationError: If the coefficient count does not match the level
    """
    knots = open_uniform_knots(level, T)
    curves = tuple(BSplineCurve(knots, coeffs) for coeffs in split_coefficients(c, level, T))
    return ControlSet(curves=curves, endpoints=endpoints, T=T, model=model)


def curves_to_coefficients(controls: ControlSet) -> np.ndarray:
    """Inverse of assemble_controls: concatenated interior coefficients."""
    return np.concatenate([curve.coeffs[1:-1] for curve in controls.curves])


def normalized_bounds(bounds: ControlBounds, endpoints: ControlEndpoints) -> np.ndarray:
    """Per-control [u_lower, u_upper] intervals, shape (3, 2)."""
    boxes = []
    names = ("a_s", "w_rho", "w_z")
    for name, (initial, final), (lower, upper) in zip(names, endpoints.pairs(), bounds.pairs()):
        for value in (initial, final):
            if not lower <= value <= upper:
                raise ValidationError(
                    f"Endpoint of {name} lies outside its bounds",
                    detail=f"{value} not in [{lower}, {upper}]",
                )
        if final == initial:
            logger.warning(
                f"Initial and final {name} coincide; its coefficient box is set to [0, 1]"
            )
            boxes.append((0.0, 1.0))
            continue
        u_lower = (lower - initial) / (final - initial)
        u_upper = (upper - initial) / (final - initial)
        boxes.append((min(u_lower, u_upper), max(u_lower, u_upper)))
    return np.array(boxes)


def coefficient_bounds(
    level: int, bounds: ControlBounds, endpoints: ControlEndpoints, T: float = 1.0
) -> tuple:
    """
    Box constraints on the coefficient vector of a level.

    By the convex hull property, coefficients in these boxes keep every
    physical trajectory within bounds.

    Returns:
        (lower, upper) arrays ordered like the coefficient vector

    Raises:
        ValidationError: If an endpoint lies outside its physical bounds
    """
    boxes = normalized_bounds(bounds, endpoints)
    n_free = free_coefficient_count(level, T)
    lower = np.repeat(boxes[:, 0], n_free)
    upper = np.repeat(boxes[:, 1], n_free)
    return lower, upper


def sum_of_sines_controls(
    c: np.ndarray, endpoints: ControlEndpoints, T: float, model: ModelParams
) -> ControlSet:
    """Sum-of-sines parameterization; c has shape (3, K) or (3 K,) ordered per control."""
    c = np.asarray(c, dtype=float)
    if c.ndim == 1:
        if c.size % NUM_CONTROLS or c.size == 0:
            raise ValidationError(
                "Sum-of-sines coefficients must split evenly over the controls",
                detail=f"{c.size} coefficients",
            )
        c = c.reshape(NUM_CONTROLS, -1)
    if c.shape[0] != NUM_CONTROLS:
        raise ValidationError("Sum-of-sines coefficients need one row per control")
    curves = tuple(SumOfSinesCurve(row, T) for row in c)
    return ControlSet(curves=curves, endpoints=endpoints, T=T, model=model)


def linear_controls(endpoints: ControlEndpoints, T: float, model: ModelParams) -> ControlSet:
    return assemble_controls(linear_ramp_coefficients(1, T), 1, endpoints, T, model)


def random_initial_coefficients(
    level: int,
    bounds: ControlBounds,
    endpoints: ControlEndpoints,
    seed: int,
    count: int = 1,
    T: float = 1.0,
) -> np.ndarray:
    """Seeded uniform draws from the coefficient boxes, shape (count, n)."""
    lower, upper = coefficient_bounds(level, bounds, endpoints, T)
    rng = np.random.default_rng(seed)
    return rng.uniform(lower, upper, size=(count, lower.size))


def perturbed_endpoints(endpoints: ControlEndpoints, factors=PERTURBATION_FACTORS) -> ControlEndpoints:
    """Scale a_s_i, a_s_f, w_rho_i and w_z_i by the given factors."""
    f_as_i, f_as_f, f_rho_i, f_z_i = factors
    return replace(
        endpoints,
        a_s_i=endpoints.a_s_i * f_as_i,
        a_s_f=endpoints.a_s_f * f_as_f,
        w_rho_i=endpoints.w_rho_i * f_rho_i,
        w_z_i=endpoints.w_z_i * f_z_i,
    )


class PerturbedControls:
    """
    Control sampler with systematic endpoint errors and white noise.

    One Gaussian draw per control and solver step n = floor(t/dt) is added
    for t <= T, scaled by noise_sigma times the maximum of that control over
    the unperturbed-noise trajectory on [0, T]. All draws are generated at
    construction from the seed, so two samplers with the same seed agree
    bitwise. The sampler is not meant to be shared across threads.
    """

    def __init__(
        self,
        base: ControlSet,
        factors=PERTURBATION_FACTORS,
        noise_sigma: float = 0.03,
        seed: int = 0,
        dt: float = None,
    ):
        if noise_sigma < 0:
            raise ValidationError("Noise level must be non-negative", detail=f"sigma={noise_sigma}")
        if dt is None or not dt > 0:
            raise ValidationError("Perturbed controls need the solver time step", detail=f"dt={dt}")
        self.systematic = replace(base, endpoints=perturbed_endpoints(base.endpoints, factors))
        self.model = base.model
        self.T = base.T
        self.dt = dt
        self.noise_sigma = noise_sigma
        self.seed = seed

        n_steps = int(math.floor(self.T / dt + 1e-9))
        step_times = dt * np.arange(n_steps + 1)
        self._scale = np.max(np.abs(self.systematic.physical(step_times)), axis=1)
        rng = np.random.default_rng(seed)
        self._draws = rng.standard_normal((n_steps + 1, NUM_CONTROLS))

    @property
    def noise_scale(self) -> np.ndarray:
        """Per-control standard deviation of the additive noise (a0, rad/s, rad/s)."""
        return self.noise_sigma * self._scale

    def physical(self, t: float) -> np.ndarray:
        values = self.systematic.physical(float(t))
        if t <= self.T and self.noise_sigma > 0:
            n = min(int(math.floor(t / self.dt + 1e-9)), len(self._draws) - 1)
            values = values + self.noise_scale * self._draws[n]
        return values

    def sample(self, t: float) -> ControlSample:
        a_s_a0, w_rho, w_z = self.physical(t)
        return self.model.control_sample(
            self.model.a_s_from_a0(a_s_a0),
            self.model.omega_from_si(w_rho),
            self.model.omega_from_si(w_z),
        )


def export_trajectories(controls, times) -> pd.DataFrame:
    """Control trajectories in lab units: t [ms], a_s [a0], w/2pi [Hz]."""
    times = np.asarray(times, dtype=float)
    values = np.array([controls.physical(t) for t in times]).reshape(len(times), NUM_CONTROLS)
    model = controls.model
    return pd.DataFrame(
        {
            "t_ms": times * model.time_unit * 1e3,
            "a_s_a0": values[:, 0],
            "omega_rho_Hz": values[:, 1] / (2 * math.pi),
            "omega_z_Hz": values[:, 2] / (2 * math.pi),
        }
    )


def refine_coefficients(
    c: np.ndarray, from_level: int, to_level: int, T: float, method: str = "collocation"
) -> np.ndarray:
    """Coefficient vector on a finer level describing the same three curves."""
    target = open_uniform_knots(to_level, T, allow_extended=True)
    source = open_uniform_knots(from_level, T, allow_extended=True)
    refined = []
    for coeffs in split_coefficients(c, from_level, T, allow_extended=True):
        curve = refine_curve(BSplineCurve(source, coeffs), target, method=method)
        refined.append(curve.coeffs[1:-1])
    return np.concatenate(refined)
