import math
from dataclasses import dataclass

import numpy as np

from app.exceptions import ValidationError

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ControlEndpoints:
    """Initial and final control values (a_s in a0, trap frequencies in rad/s)."""

    a_s_i: float = 130.0
    a_s_f: float = 80.0
    w_rho_i: float = TWO_PI * 70.0
    w_rho_f: float = 0.0
    w_z_i: float = TWO_PI * 52.5
    w_z_f: float = 0.0

    def pairs(self) -> tuple:
        """(initial, final) per control in the order a_s, w_rho, w_z."""
        return (
            (self.a_s_i, self.a_s_f),
            (self.w_rho_i, self.w_rho_f),
            (self.w_z_i, self.w_z_f),
        )


@dataclass(frozen=True)
class ControlBounds:
    """Physical box constraints (a_s in a0, trap frequencies in rad/s)."""

    a_s_lower: float = 80.0
    a_s_upper: float = 130.0
    w_rho_lower: float = 0.0
    w_rho_upper: float = TWO_PI * 318.3
    w_z_lower: float = 0.0
    w_z_upper: float = TWO_PI * 318.3

    def __post_init__(self):
        for lower, upper in self.pairs():
            if not lower <= upper:
                raise ValidationError(
                    "Control bounds must satisfy lower <= upper",
                    detail=f"[{lower}, {upper}]",
                )

    def pairs(self) -> tuple:
        return (
            (self.a_s_lower, self.a_s_upper),
            (self.w_rho_lower, self.w_rho_upper),
            (self.w_z_lower, self.w_z_upper),
        )


@dataclass(frozen=True, eq=False)
class SumOfSinesCurve:
    """u(t) = t/T + sum_k c_k sin(k pi t / T), frozen at 1 for t > T."""

    coeffs: np.ndarray
    T: float

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=float).ravel()
        if coeffs.size < 1:
            raise ValidationError("Sum-of-sines curve needs at least one mode")
        if self.T <= 0:
            raise ValidationError("Horizon T must be positive", detail=f"T={self.T}")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def span(self) -> tuple:
        return (0.0, float(self.T))

    def evaluate(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        modes = np.arange(1, self.coeffs.size + 1)
        phases = np.multiply.outer(t, modes) * (np.pi / self.T)
        values = t / self.T + np.sin(phases) @ self.coeffs
        return np.where(t >= self.T, 1.0, values)
