"""Tests for the reference potentials used to validate the kernel."""

import numpy as np
import pytest
from scipy.special import erf

from app.exceptions import ValidationError
from app.models.constants import PolarizationAxis
from app.services.grid_service import build_grid
from app.services.oracles import (
    gaussian_density,
    gaussian_dipolar_reference,
    gaussian_directional_second_derivative,
    gaussian_reference_potential,
    radial_poisson_potential,
)

SIGMA = 0.3


def radial_gaussian(s: float) -> float:
    return np.exp(-(s**2) / (2 * SIGMA**2)) / ((2 * np.pi) ** 1.5 * SIGMA**3)


def test_radial_quadrature_matches_erf():
    """Test the radial quadrature at r = sigma against the closed form."""
    expected = erf(1 / np.sqrt(2)) / (4 * np.pi * SIGMA)
    assert radial_poisson_potential(radial_gaussian, SIGMA) == pytest.approx(expected, rel=1e-10)


def test_reference_potential_far_field():
    """Test that 4 pi r phi tends to the total mass far from the density."""
    grid = build_grid(8.0, 8.0, 8.0, 16, 16, 16)
    phi = gaussian_reference_potential(0.2, 2.5, (0.0, 0.0, 0.0), grid)
    _, j, k = grid.origin_index()
    r = abs(grid.x[0])
    assert r >= 10 * 0.2
    assert 4 * np.pi * r * phi[0, j, k] == pytest.approx(2.5, rel=1e-6)


def test_reference_potential_at_center():
    """Test the finite value at r = 0."""
    grid = build_grid(2.0, 2.0, 2.0, 8, 8, 8)
    phi = gaussian_reference_potential(SIGMA, 1.0, (0.0, 0.0, 0.0), grid)
    expected = np.sqrt(2 / np.pi) / (4 * np.pi * SIGMA)
    assert phi[grid.origin_index()] == pytest.approx(expected, rel=1e-14)


def test_zero_mass_gives_zero():
    """Test that a zero mass gives zero density and potential."""
    grid = build_grid(2.0, 2.0, 2.0, 8, 8, 8)
    assert np.all(gaussian_reference_potential(SIGMA, 0.0, (0.0, 0.0, 0.0), grid) == 0.0)
    assert np.all(gaussian_density(SIGMA, 0.0, (0.0, 0.0, 0.0), grid) == 0.0)


def test_non_positive_width_is_rejected():
    """Test that Gaussian widths must be positive."""
    grid = build_grid(2.0, 2.0, 2.0, 8, 8, 8)
    with pytest.raises(ValidationError, match="must be positive"):
        gaussian_reference_potential(0.0, 1.0, (0.0, 0.0, 0.0), grid)
    with pytest.raises(ValidationError, match="must be positive"):
        gaussian_density((0.1, -0.1, 0.1), 1.0, (0.0, 0.0, 0.0), grid)


def test_directional_derivative_of_isotropic_gaussian():
    """Test d_zz of the isotropic potential against differentiating the erf form."""
    n = PolarizationAxis((0.0, 0.0, 1.0))
    z = 0.45
    r = z
    a = np.sqrt(2) * SIGMA
    # phi(r) = erf(r/a)/(4 pi r); on the z axis d_zz phi = phi''(r)
    g = 2 / (np.sqrt(np.pi) * a) * np.exp(-((r / a) ** 2))
    g_prime = -2 * r / a**2 * g
    f = erf(r / a)
    second = (g_prime / r - 2 * g / r**2 + 2 * f / r**3) / (4 * np.pi)
    value = gaussian_directional_second_derivative(SIGMA, 1.0, (0.0, 0.0, 0.0), n, [(0.0, 0.0, z)])
    assert value[0] == pytest.approx(second, rel=1e-9)


def test_isotropic_dipolar_reference_vanishes_at_center():
    """Test that the dipolar potential of an isotropic Gaussian is zero at its center."""
    n = PolarizationAxis((0.0, 0.0, 1.0))
    value = gaussian_dipolar_reference(SIGMA, 1.0, (0.0, 0.0, 0.0), n, 1.0, [(0.0, 0.0, 0.0)])
    peak = 1.0 / ((2 * np.pi) ** 1.5 * SIGMA**3)
    assert abs(value[0]) < 1e-10 * peak


def test_directional_derivatives_sum_to_laplacian():
    """Test that d_xx + d_yy + d_zz of phi equals -rho for an anisotropic Gaussian."""
    sigma = (0.2, 0.25, 0.35)
    point = [(0.1, -0.05, 0.2)]
    total = sum(
        gaussian_directional_second_derivative(sigma, 1.0, (0.0, 0.0, 0.0), PolarizationAxis(axis), point)[0]
        for axis in ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    )
    rho = 1.0 / ((2 * np.pi) ** 1.5 * np.prod(sigma)) * np.exp(
        -sum(p**2 / (2 * s**2) for p, s in zip(point[0], sigma))
    )
    assert total == pytest.approx(-rho, rel=1e-9)
