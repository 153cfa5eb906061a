"""Closed-form and quadrature reference potentials of Gaussian densities."""

import numpy as np
from scipy import integrate
from scipy.special import erf

from app.exceptions import ValidationError
from app.models.constants import PolarizationAxis
from app.models.grid import Grid3D


def _as_sigma3(sigma) -> np.ndarray:
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (3,)).copy()
    if np.any(sigma <= 0):
        raise ValidationError("Gaussian widths must be positive", detail=str(sigma))
    return sigma


def gaussian_density(sigma, mass: float, center, grid: Grid3D) -> np.ndarray:
    """Normalized (per mass) anisotropic Gaussian sampled on the grid."""
    sigma = _as_sigma3(sigma)
    cx, cy, cz = (float(c) for c in center)
    X, Y, Z = grid.mesh
    norm = mass / ((2 * np.pi) ** 1.5 * np.prod(sigma))
    return norm * np.exp(
        -((X - cx) ** 2) / (2 * sigma[0] ** 2)
        - (Y - cy) ** 2 / (2 * sigma[1] ** 2)
        - (Z - cz) ** 2 / (2 * sigma[2] ** 2)
    )


def gaussian_reference_potential(sigma: float, mass: float, center, grid: Grid3D) -> np.ndarray:
    """M erf(r/(sqrt(2) sigma)) / (4 pi r), with the analytic value at r = 0."""
    if not sigma > 0:
        raise ValidationError("Gaussian width must be positive", detail=f"sigma={sigma}")
    cx, cy, cz = (float(c) for c in center)
    X, Y, Z = grid.mesh
    r = np.sqrt((X - cx) ** 2 + (Y - cy) ** 2 + (Z - cz) ** 2)
    center_value = mass / (4 * np.pi) * np.sqrt(2 / np.pi) / sigma
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = mass * erf(r / (np.sqrt(2) * sigma)) / (4 * np.pi * r)
    return np.where(r == 0, center_value, phi)


def radial_poisson_potential(density, r: float) -> float:
    """Potential of a spherically symmetric density by radial quadrature.

    phi(r) = (1/r) int_0^r rho(s) s^2 ds + int_r^inf rho(s) s ds
    """
    inner, _ = integrate.quad(lambda s: density(s) * s**2, 0.0, r, epsabs=0.0, epsrel=1e-13)
    outer, _ = integrate.quad(lambda s: density(s) * s, r, np.inf, epsabs=0.0, epsrel=1e-13)
    return inner / r + outer


def _hessian_integrand(s: float, x: np.ndarray, sigma: np.ndarray, n: np.ndarray) -> float:
    # 1/|r| = (2/sqrt(pi)) int_0^inf exp(-s^2 r^2) ds turns the convolution
    # with a Gaussian into a product of one-dimensional Gaussians.
    w = 1.0 + 2.0 * s**2 * sigma**2
    a = s**2 / w
    envelope = np.exp(-np.sum(a * x**2)) / np.sqrt(np.prod(w))
    first = -2.0 * a * x
    second = 4.0 * a**2 * x**2 - 2.0 * a
    hessian = np.outer(first, first)
    np.fill_diagonal(hessian, second)
    return float(envelope * (n @ hessian @ n))


def gaussian_directional_second_derivative(
    sigma, mass: float, center, n: PolarizationAxis, points
) -> np.ndarray:
    """d_nn of the Newtonian potential of an anisotropic Gaussian at points (P, 3)."""
    sigma = _as_sigma3(sigma)
    nvec = n.vector
    points = np.atleast_2d(np.asarray(points, dtype=float)) - np.asarray(center, dtype=float)
    prefactor = mass / (4 * np.pi) * 2 / np.sqrt(np.pi)
    values = []
    for x in points:
        value, _ = integrate.quad(
            _hessian_integrand,
            0.0,
            np.inf,
            args=(x, sigma, nvec),
            epsabs=0.0,
            epsrel=1e-12,
            limit=400,
        )
        values.append(prefactor * value)
    return np.array(values)


def gaussian_dipolar_reference(
    sigma, mass: float, center, n: PolarizationAxis, g_dd: float, points
) -> np.ndarray:
    """Dipolar potential of an anisotropic Gaussian density at points (P, 3)."""
    sigma = _as_sigma3(sigma)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d = points - np.asarray(center, dtype=float)
    rho = mass / ((2 * np.pi) ** 1.5 * np.prod(sigma)) * np.exp(
        -np.sum(d**2 / (2 * sigma**2), axis=1)
    )
    d_nn = gaussian_directional_second_derivative(sigma, mass, center, n, points)
    return -g_dd * rho - 3.0 * g_dd * d_nn
