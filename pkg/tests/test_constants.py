"""Tests for physical constants, species parameters and unit conversion."""

import math

import pytest

from app.exceptions import ValidationError
from app.models.constants import (
    ModelParams,
    PhysicalConstants,
    PolarizationAxis,
    SpeciesParams,
    UnitSystem,
)


@pytest.fixture
def species():
    """Dysprosium-164 with the default loss coefficient."""
    return SpeciesParams.dysprosium_164()


@pytest.fixture
def model(species):
    return ModelParams.from_species(species, N0=1e4)


def test_physical_constants_reject_non_positive():
    """Test that a non-positive constant is rejected."""
    with pytest.raises(ValidationError, match="must be positive"):
        PhysicalConstants(hbar=0.0)


def test_species_from_lab_units(species):
    """Test conversion of mass and moment from lab units."""
    c = species.constants
    assert species.mass_m == pytest.approx(163.93 * c.atomic_mass_unit, rel=1e-15)
    assert species.magnetic_moment_mu == pytest.approx(9.93 * c.bohr_magneton_muB, rel=1e-15)
    assert species.loss_L3 == 1.2e-41


def test_dipolar_length_of_dysprosium(species):
    """Test that a_dd of Dy-164 is about 131 Bohr radii."""
    a_dd_a0 = species.dipolar_length_add / species.constants.bohr_radius_a0
    assert 128.0 < a_dd_a0 < 134.0


def test_internal_hbar_over_mass(model):
    """Test hbar/m in um^2/ms."""
    assert model.hbar == pytest.approx(0.3874, rel=1e-3)


def test_loss_coefficient_in_internal_units(model):
    """Test L3 conversion from m^6/s to um^6/ms."""
    assert model.loss_L3 == pytest.approx(1.2e-8, rel=1e-12)


def test_unit_system_round_trip(species):
    """Test that to_si inverts to_internal for a mixed dimension."""
    units = UnitSystem.for_species(species)
    value = 3.7e-12
    internal = units.to_internal(value, length=2, time=-1, mass=1)
    assert units.to_si(internal, length=2, time=-1, mass=1) == pytest.approx(value, rel=1e-15)


def test_unit_system_rejects_zero_scale():
    """Test that unit scales must be positive."""
    with pytest.raises(ValidationError):
        UnitSystem(length_unit=0.0)


def test_polarization_is_normalized():
    """Test that the polarization axis is stored as a unit vector."""
    axis = PolarizationAxis((0.0, 3.0, 4.0))
    assert axis.n == pytest.approx((0.0, 0.6, 0.8))
    assert axis.matches(PolarizationAxis((0.0, 0.6, 0.8)))


def test_polarization_rejects_zero_vector():
    """Test that a zero polarization vector is rejected."""
    with pytest.raises(ValidationError, match="non-zero"):
        PolarizationAxis((0.0, 0.0, 0.0))


def test_contact_and_quantum_fluctuation_couplings(model):
    """Test g and gamma_qf against direct evaluation at 130 a0."""
    a_s = model.a_s_from_a0(130.0)
    g = 4 * math.pi * model.hbar**2 * a_s
    expected = (32.0 / 3.0) * g * math.sqrt(a_s**3 / math.pi) * (1 + 1.5 * (model.a_dd / a_s) ** 2)
    assert model.g_of_as(a_s) == pytest.approx(g, rel=1e-14)
    assert model.gamma_qf_of_as(a_s) == pytest.approx(expected, rel=1e-12)


def test_quantum_fluctuation_vanishes_for_non_positive_as(model):
    """Test that gamma_qf is zero for a_s <= 0."""
    assert model.gamma_qf_of_as(0.0) == 0.0
    assert model.gamma_qf_of_as(-1.0) == 0.0


def test_frequency_conversion(model):
    """Test conversion of rad/s to rad/ms and back."""
    omega = 2 * math.pi * 70.0
    assert model.omega_from_si(omega) == pytest.approx(omega * 1e-3)
    assert model.omega_to_si(model.omega_from_si(omega)) == pytest.approx(omega)


def test_model_rejects_negative_loss():
    """Test that a negative loss coefficient is rejected."""
    with pytest.raises(ValidationError, match="Invalid model parameters"):
        ModelParams(hbar=1.0, g_dd=0.0, a_dd=0.0, loss_L3=-1.0, N0=1.0)


def test_with_N0_and_without_loss(model):
    """Test the copy helpers."""
    assert model.with_N0(9000.0).N0 == 9000.0
    assert model.without_loss().loss_L3 == 0.0
    assert model.N0 == 1e4
