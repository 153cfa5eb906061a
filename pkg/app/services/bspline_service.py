"""B-spline basis evaluation, knot ladders and exact refinement."""

import logging
from collections import Counter

import numpy as np
from scipy import linalg

from app.exceptions import RefinementError, ValidationError
from app.models.bspline import BSplineCurve, KnotVector

logger = logging.getLogger(__name__)

DEFAULT_DEGREE = 3
MAX_STANDARD_LEVEL = 4


def _as_times(knots: KnotVector, t) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    start, end = knots.span
    if np.any(t < start) or np.any(t > end) or np.any(~np.isfinite(t)):
        raise ValidationError(
            "Evaluation time outside the knot span",
            detail=f"span [{start}, {end}], got [{t.min()}, {t.max()}]",
        )
    return t


def _ratio(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    """numerator / denominator with 0/0 (and x/0) taken as 0."""
    safe = np.where(denominator > 0, denominator, 1.0)
    return np.where(denominator > 0, numerator / safe, 0.0)


def basis_matrix(knots: KnotVector, t) -> np.ndarray:
    """
    Evaluate all basis functions N_{k,p} at the times t by the Cox-de Boor recursion.

    Intervals are half-open [xi_k, xi_{k+1}); at the right end of the span the
    last non-empty interval is closed, so the last basis function equals 1 there.

    Returns:
        Array of shape (len(t), K)
    """
    xi = knots.knots
    p = knots.degree
    t = _as_times(knots, t)[:, None]

    N = ((xi[:-1] <= t) & (t < xi[1:])).astype(float)
    last = np.flatnonzero(xi[:-1] < xi[1:])[-1]
    at_end = t[:, 0] == xi[-1]
    N[at_end, :] = 0.0
    N[at_end, last] = 1.0

    for d in range(1, p + 1):
        left = _ratio(t - xi[: -d - 1], xi[d:-1] - xi[: -d - 1]) * N[:, :-1]
        right = _ratio(xi[d + 1 :] - t, xi[d + 1 :] - xi[1:-d]) * N[:, 1:]
        N = left + right
    return N


def basis_eval(knots: KnotVector, k: int, t):
    """Value of the k-th (0-based) basis function at t."""
    if not 0 <= k < knots.basis_count:
        raise ValidationError(
            "Basis index out of range", detail=f"k={k}, K={knots.basis_count}"
        )
    values = basis_matrix(knots, t)[:, k]
    return float(values[0]) if np.ndim(t) == 0 else values


def open_uniform_knots(
    level: int, T: float, degree: int = DEFAULT_DEGREE, allow_extended: bool = False
) -> KnotVector:
    """
    Open uniform knot vector of the given ladder level on [0, T].

    Level l has interior knots T i / 2^(l-1), i = 1..2^(l-1) - 1.

    Raises:
        ValidationError: If T <= 0 or the level is outside 1..4 without allow_extended
    """
    if not T > 0:
        raise ValidationError("Horizon T must be positive", detail=f"T={T}")
    if int(level) != level or level < 1:
        raise ValidationError("Knot level must be a positive integer", detail=f"level={level}")
    if level > MAX_STANDARD_LEVEL and not allow_extended:
        raise ValidationError(
            f"Knot levels above {MAX_STANDARD_LEVEL} require allow_extended",
            detail=f"level={level}",
        )
    segments = 2 ** (int(level) - 1)
    interior = T * np.arange(1, segments) / segments
    knots = np.concatenate([np.zeros(degree + 1), interior, np.full(degree + 1, float(T))])
    return KnotVector(knots, degree)


def curve_eval(curve: BSplineCurve, t):
    """Evaluate u(t) = sum_k c_k N_{k,p}(t)."""
    values = basis_matrix(curve.knots, t) @ curve.coeffs
    return float(values[0]) if np.ndim(t) == 0 else values


def greville_points(knots: KnotVector) -> np.ndarray:
    """Knot averages (xi_{m+1} + ... + xi_{m+p}) / p, one per basis function."""
    xi = knots.knots
    p = knots.degree
    if p == 0:
        return 0.5 * (xi[:-1] + xi[1:])
    return np.array([xi[m + 1 : m + p + 1].mean() for m in range(knots.basis_count)])


def _check_nested(source: KnotVector, target: KnotVector) -> list:
    """Return the knots to insert into source to obtain target."""
    if source.degree != target.degree or source.span != target.span:
        raise RefinementError(
            "Knot vectors must share degree and span",
            detail=f"{source.degree}/{source.span} vs {target.degree}/{target.span}",
        )
    coarse = Counter(source.knots.tolist())
    fine = Counter(target.knots.tolist())
    missing = coarse - fine
    if missing:
        raise RefinementError(
            "Knot vectors are not nested",
            detail=f"knots {sorted(missing.elements())} missing from the target",
        )
    return sorted((fine - coarse).elements())


def insert_knot(curve: BSplineCurve, t: float) -> BSplineCurve:
    """Insert one knot by Boehm's algorithm; the curve is unchanged."""
    xi = curve.knots.knots
    p = curve.degree
    start, end = curve.span
    if not start < t < end:
        raise RefinementError("Inserted knot must lie inside the span", detail=f"t={t}")
    s = int(np.searchsorted(xi, t, side="right")) - 1
    c = curve.coeffs
    new = np.empty(len(c) + 1)
    for i in range(len(new)):
        if i <= s - p:
            new[i] = c[i]
        elif i > s:
            new[i] = c[i - 1]
        else:
            alpha = (t - xi[i]) / (xi[i + p] - xi[i])
            new[i] = alpha * c[i] + (1.0 - alpha) * c[i - 1]
    knots = KnotVector(np.insert(xi, s + 1, t), p)
    return BSplineCurve(knots, new)


def refine_by_insertion(curve: BSplineCurve, target: KnotVector) -> BSplineCurve:
    refined = curve
    for t in _check_nested(curve.knots, target):
        refined = insert_knot(refined, t)
    return refined


def refine_curve(
    curve: BSplineCurve, target: KnotVector, method: str = "collocation"
) -> BSplineCurve:
    """
    Re-express curve on the finer nested knot vector target.

    method="collocation" solves the collocation system at the Greville points
    of target; method="insertion" inserts the missing knots one at a time.

    Raises:
        RefinementError: If the knot vectors are not nested or the system is singular
    """
    if method == "insertion":
        return refine_by_insertion(curve, target)
    if method != "collocation":
        raise ValidationError("Unknown refinement method", detail=method)

    _check_nested(curve.knots, target)
    abscissae = greville_points(target)
    matrix = basis_matrix(target, abscissae)
    rhs = curve_eval(curve, abscissae)
    try:
        coeffs = linalg.solve(matrix, rhs)
    except (linalg.LinAlgError, ValueError) as e:
        logger.error(f"Collocation system for refinement is singular: {e}")
        raise RefinementError("Singular collocation matrix", detail=str(e)) from e
    if not np.all(np.isfinite(coeffs)):
        raise RefinementError("Refinement produced non-finite coefficients")
    return BSplineCurve(target, coeffs)


def curve_to_dict(curve: BSplineCurve) -> dict:
    return {
        "degree": curve.degree,
        "knots": curve.knots.knots.tolist(),
        "coeffs": curve.coeffs.tolist(),
    }


def curve_from_dict(data: dict) -> BSplineCurve:
    try:
        knots = KnotVector(np.asarray(data["knots"], dtype=float), int(data["degree"]))
        return BSplineCurve(knots, np.asarray(data["coeffs"], dtype=float))
    except (KeyError, TypeError) as e:
        raise ValidationError("Malformed curve document", detail=str(e)) from e
