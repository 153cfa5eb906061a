from dataclasses import dataclass

import numpy as np

from app.exceptions import ValidationError


@dataclass(frozen=True, eq=False)
class KnotVector:
    """Open, nondecreasing knot vector of a degree-p B-spline basis."""

    knots: np.ndarray
    degree: int = 3

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        p = int(self.degree)
        if knots.ndim != 1 or p < 0:
            raise ValidationError("Knot vector must be one-dimensional with degree >= 0")
        if np.any(np.diff(knots) < 0):
            raise ValidationError("Knot vector must be nondecreasing", detail=str(knots))
        if len(knots) < 2 * (p + 1):
            raise ValidationError(
                "Knot vector too short for the degree",
                detail=f"{len(knots)} knots for degree {p}",
            )
        start, end = knots[0], knots[-1]
        if not (end > start):
            raise ValidationError("Knot vector span must be non-empty")
        if np.count_nonzero(knots == start) != p + 1 or np.count_nonzero(knots == end) != p + 1:
            raise ValidationError(
                "Knot vector must be open: end knots repeated exactly degree + 1 times",
                detail=str(knots),
            )
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "degree", p)

    @property
    def basis_count(self) -> int:
        return len(self.knots) - (self.degree + 1)

    @property
    def span(self) -> tuple:
        return (float(self.knots[0]), float(self.knots[-1]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnotVector):
            return NotImplemented
        return self.degree == other.degree and np.array_equal(self.knots, other.knots)

    def __hash__(self) -> int:
        return hash((self.degree, self.knots.tobytes()))


@dataclass(frozen=True, eq=False)
class BSplineCurve:
    """Scalar spline u(t) = sum_k c_k N_{k,p}(t)."""

    knots: KnotVector
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=float)
        if coeffs.shape != (self.knots.basis_count,):
            raise ValidationError(
                "Coefficient count does not match the basis",
                detail=f"{coeffs.shape[0] if coeffs.ndim else 0} coefficients, "
                f"{self.knots.basis_count} basis functions",
            )
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def degree(self) -> int:
        return self.knots.degree

    @property
    def span(self) -> tuple:
        return self.knots.span
