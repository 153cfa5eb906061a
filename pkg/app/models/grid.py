import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from app.exceptions import ValidationError

logger = logging.getLogger(__name__)

MIN_POINTS = 8


@dataclass(frozen=True)
class Grid3D:
    """Uniform periodic-box discretization of [-L/2, L/2)^3 (internal lengths)."""

    Lx: float
    Ly: float
    Lz: float
    Jx: int
    Jy: int
    Jz: int

    def __post_init__(self):
        for name in ("Lx", "Ly", "Lz"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValidationError(
                    "Box side lengths must be positive", detail=f"{name}={value}"
                )
        for name in ("Jx", "Jy", "Jz"):
            value = getattr(self, name)
            if int(value) != value or value < MIN_POINTS or value % 2:
                raise ValidationError(
                    f"Grid point counts must be even integers >= {MIN_POINTS}",
                    detail=f"{name}={value}",
                )
            object.__setattr__(self, name, int(value))

    @property
    def lengths(self) -> tuple:
        return (self.Lx, self.Ly, self.Lz)

    @property
    def shape(self) -> tuple:
        return (self.Jx, self.Jy, self.Jz)

    @property
    def padded_shape(self) -> tuple:
        return (2 * self.Jx, 2 * self.Jy, 2 * self.Jz)

    @property
    def size(self) -> int:
        return self.Jx * self.Jy * self.Jz

    @property
    def dx(self) -> float:
        return self.Lx / self.Jx

    @property
    def dy(self) -> float:
        return self.Ly / self.Jy

    @property
    def dz(self) -> float:
        return self.Lz / self.Jz

    @property
    def spacings(self) -> tuple:
        return (self.dx, self.dy, self.dz)

    @property
    def dV(self) -> float:
        return self.dx * self.dy * self.dz

    @property
    def volume(self) -> float:
        return self.Lx * self.Ly * self.Lz

    @property
    def aspect_ratio(self) -> float:
        return max(self.lengths) / min(self.lengths)

    @property
    def truncation_radius(self) -> float:
        return float(np.sqrt(self.Lx**2 + self.Ly**2 + self.Lz**2))

    @cached_property
    def x(self) -> np.ndarray:
        return -self.Lx / 2 + self.dx * np.arange(self.Jx)

    @cached_property
    def y(self) -> np.ndarray:
        return -self.Ly / 2 + self.dy * np.arange(self.Jy)

    @cached_property
    def z(self) -> np.ndarray:
        return -self.Lz / 2 + self.dz * np.arange(self.Jz)

    @cached_property
    def kx(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.Jx, d=self.dx)

    @cached_property
    def ky(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.Jy, d=self.dy)

    @cached_property
    def kz(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.Jz, d=self.dz)

    @cached_property
    def mesh(self) -> tuple:
        """Sparse (X, Y, Z) coordinate arrays broadcasting to the grid shape."""
        return tuple(np.meshgrid(self.x, self.y, self.z, indexing="ij", sparse=True))

    @cached_property
    def k_mesh(self) -> tuple:
        return tuple(np.meshgrid(self.kx, self.ky, self.kz, indexing="ij", sparse=True))

    @cached_property
    def k_squared(self) -> np.ndarray:
        kx, ky, kz = self.k_mesh
        return kx**2 + ky**2 + kz**2

    @cached_property
    def r_squared(self) -> np.ndarray:
        X, Y, Z = self.mesh
        return X**2 + Y**2 + Z**2

    def origin_index(self) -> tuple:
        """Index of the grid point nearest coordinate zero on each axis."""
        return tuple(int(np.argmin(np.abs(axis))) for axis in (self.x, self.y, self.z))


@dataclass(eq=False)
class ComplexField:
    """Wavefunction samples on a grid. Atom number is sum |psi|^2 dV."""

    values: np.ndarray
    grid: Grid3D

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape != self.grid.shape:
            raise ValidationError(
                "Field shape does not match grid",
                detail=f"values {self.values.shape} vs grid {self.grid.shape}",
            )

    @property
    def density(self) -> np.ndarray:
        return self.values.real**2 + self.values.imag**2

    def copy(self) -> "ComplexField":
        return ComplexField(self.values.copy(), self.grid)

    def with_values(self, values: np.ndarray) -> "ComplexField":
        return ComplexField(values, self.grid)

    def scaled(self, factor) -> "ComplexField":
        return ComplexField(self.values * factor, self.grid)
