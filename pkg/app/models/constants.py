"""Physical constants, species parameters and the internal unit system.

Internal units: lengths in micrometers, times in milliseconds and masses in
units of the atom mass. In these units the equation of motion is divided by
the atom mass, so the only appearance of Planck's constant is hbar/m.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import constants as sc

from app.exceptions import ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PhysicalConstants:
    """CODATA reference values in SI units."""

    hbar: float = sc.hbar
    atomic_mass_unit: float = sc.physical_constants["atomic mass constant"][0]
    bohr_radius_a0: float = sc.physical_constants["Bohr radius"][0]
    bohr_magneton_muB: float = sc.physical_constants["Bohr magneton"][0]
    vacuum_permeability_mu0: float = sc.mu_0

    def __post_init__(self):
        for name in (
            "hbar",
            "atomic_mass_unit",
            "bohr_radius_a0",
            "bohr_magneton_muB",
            "vacuum_permeability_mu0",
        ):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValidationError(
                    "Physical constants must be positive",
                    detail=f"{name}={value}",
                )


@dataclass(frozen=True)
class SpeciesParams:
    """Atomic species in SI units (kg, J/T, m^6/s)."""

    mass_m: float
    magnetic_moment_mu: float
    loss_L3: float
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)

    def __post_init__(self):
        if self.mass_m <= 0 or self.magnetic_moment_mu < 0 or self.loss_L3 < 0:
            raise ValidationError(
                "Invalid species parameters",
                detail=(
                    f"mass={self.mass_m}, moment={self.magnetic_moment_mu}, "
                    f"L3={self.loss_L3}"
                ),
            )

    @classmethod
    def from_lab_units(
        cls,
        mass_u: float,
        moment_muB: float,
        L3_m6_per_s: float,
        constants: PhysicalConstants = None,
    ) -> "SpeciesParams":
        """Build a species from mass in u and magnetic moment in Bohr magnetons."""
        constants = constants or PhysicalConstants()
        return cls(
            mass_m=mass_u * constants.atomic_mass_unit,
            magnetic_moment_mu=moment_muB * constants.bohr_magneton_muB,
            loss_L3=L3_m6_per_s,
            constants=constants,
        )

    @classmethod
    def dysprosium_164(cls) -> "SpeciesParams":
        return cls.from_lab_units(mass_u=163.93, moment_muB=9.93, L3_m6_per_s=1.2e-41)

    @property
    def dipolar_length_add(self) -> float:
        """a_dd = m mu0 mu^2 / (12 pi hbar^2) in meters."""
        c = self.constants
        return (
            self.mass_m
            * c.vacuum_permeability_mu0
            * self.magnetic_moment_mu**2
            / (12.0 * math.pi * c.hbar**2)
        )

    @property
    def g_dd(self) -> float:
        """Dipolar coupling 4 pi hbar^2 a_dd / m in SI units (J m^3)."""
        return 4.0 * math.pi * self.constants.hbar**2 * self.dipolar_length_add / self.mass_m


@dataclass(frozen=True)
class UnitSystem:
    """Conversion between SI and internal units.

    A quantity with dimension length^l time^t mass^m is converted to internal
    units by dividing by length_unit^l * time_unit^t * mass_unit^m.
    """

    length_unit: float = 1e-6
    time_unit: float = 1e-3
    mass_unit: float = 1.0

    def __post_init__(self):
        if min(self.length_unit, self.time_unit, self.mass_unit) <= 0:
            raise ValidationError("Unit scales must be positive")

    @classmethod
    def for_species(cls, species: SpeciesParams) -> "UnitSystem":
        return cls(length_unit=1e-6, time_unit=1e-3, mass_unit=species.mass_m)

    def _scale(self, length: int, time: int, mass: int) -> float:
        return self.length_unit**length * self.time_unit**time * self.mass_unit**mass

    def to_internal(self, value, length: int = 0, time: int = 0, mass: int = 0):
        return value / self._scale(length, time, mass)

    def to_si(self, value, length: int = 0, time: int = 0, mass: int = 0):
        return value * self._scale(length, time, mass)


@dataclass(frozen=True)
class PolarizationAxis:
    """Unit vector along which the dipoles are aligned."""

    n: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        vector = np.asarray(self.n, dtype=float)
        if vector.shape != (3,):
            raise ValidationError("Polarization axis must be a 3-vector", detail=str(self.n))
        norm = float(np.linalg.norm(vector))
        if not math.isfinite(norm) or norm == 0.0:
            raise ValidationError("Polarization axis must be non-zero", detail=str(self.n))
        object.__setattr__(self, "n", tuple(float(v) for v in vector / norm))

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.n)

    def matches(self, other: "PolarizationAxis", atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.vector, other.vector, rtol=0.0, atol=atol))


@dataclass(frozen=True)
class ControlSample:
    """Control values at one instant, in internal units."""

    a_s: float
    omega_rho: float
    omega_z: float
    g: float
    gamma_qf: float


@dataclass(frozen=True)
class ModelParams:
    """Coefficients of the generalized GPE in internal units.

    Energies are per atom mass, so hbar stands for hbar/m and the contact
    coupling is g = 4 pi hbar^2 a_s.
    """

    hbar: float
    g_dd: float
    a_dd: float
    loss_L3: float
    N0: float
    polarization: PolarizationAxis = field(default_factory=PolarizationAxis)
    a0: float = 1.0  # Bohr radius in internal length units
    time_unit: float = 1e-3  # seconds per internal time unit

    def __post_init__(self):
        if self.hbar <= 0 or self.N0 <= 0 or self.loss_L3 < 0 or self.g_dd < 0:
            raise ValidationError(
                "Invalid model parameters",
                detail=f"hbar={self.hbar}, N0={self.N0}, L3={self.loss_L3}, g_dd={self.g_dd}",
            )

    @classmethod
    def from_species(
        cls,
        species: SpeciesParams,
        N0: float,
        polarization: PolarizationAxis = None,
        units: UnitSystem = None,
    ) -> "ModelParams":
        units = units or UnitSystem.for_species(species)
        c = species.constants
        hbar = units.to_internal(c.hbar, length=2, time=-1, mass=1)
        a_dd = units.to_internal(species.dipolar_length_add, length=1)
        model = cls(
            hbar=hbar,
            g_dd=4.0 * math.pi * hbar**2 * a_dd,
            a_dd=a_dd,
            loss_L3=units.to_internal(species.loss_L3, length=6, time=-1),
            N0=N0,
            polarization=polarization or PolarizationAxis(),
            a0=units.to_internal(c.bohr_radius_a0, length=1),
            time_unit=units.time_unit,
        )
        logger.debug(
            f"Model parameters: hbar/m={model.hbar:.6g} um^2/ms, "
            f"a_dd={model.a_dd / model.a0:.4g} a0, L3={model.loss_L3:.4g} um^6/ms"
        )
        return model

    def with_N0(self, N0: float) -> "ModelParams":
        return replace(self, N0=N0)

    def without_loss(self) -> "ModelParams":
        return replace(self, loss_L3=0.0)

    def g_of_as(self, a_s: float) -> float:
        return 4.0 * math.pi * self.hbar**2 * a_s

    def gamma_qf_of_as(self, a_s: float) -> float:
        """Quantum-fluctuation (LHY) prefactor for scattering length a_s."""
        if a_s <= 0:
            return 0.0
        g = self.g_of_as(a_s)
        return (
            (32.0 / 3.0)
            * g
            * math.sqrt(a_s**3 / math.pi)
            * (1.0 + 1.5 * self.a_dd**2 / a_s**2)
        )

    def a_s_from_a0(self, a_s_a0: float) -> float:
        return a_s_a0 * self.a0

    def omega_from_si(self, omega_rad_per_s: float) -> float:
        return omega_rad_per_s * self.time_unit

    def omega_to_si(self, omega: float) -> float:
        return omega / self.time_unit

    def control_sample(self, a_s: float, omega_rho: float, omega_z: float) -> ControlSample:
        """Build a sample from internal a_s and trap frequencies."""
        return ControlSample(
            a_s=a_s,
            omega_rho=omega_rho,
            omega_z=omega_z,
            g=self.g_of_as(a_s),
            gamma_qf=self.gamma_qf_of_as(a_s),
        )
