"""Grid construction and field algebra."""

import logging

import numpy as np
from scipy import fft

from app.config import settings
from app.exceptions import NumericFaultError, ValidationError
from app.models.grid import ComplexField, Grid3D

logger = logging.getLogger(__name__)


def build_grid(Lx: float, Ly: float, Lz: float, Jx: int, Jy: int, Jz: int) -> Grid3D:
    """
    Build a uniform grid on [-L/2, L/2) per axis.

    Args:
        Lx, Ly, Lz: Box side lengths (internal length units)
        Jx, Jy, Jz: Points per axis, even and >= 8

    Returns:
        Grid3D with coordinate and wavevector tables

    Raises:
        ValidationError: If a length is non-positive or a point count is odd or too small
    """
    grid = Grid3D(Lx=Lx, Ly=Ly, Lz=Lz, Jx=Jx, Jy=Jy, Jz=Jz)
    logger.debug(
        f"Built grid {grid.shape} on box {grid.lengths}, aspect ratio {grid.aspect_ratio:.3g}"
    )
    return grid


def _check_same_grid(a: ComplexField, b: ComplexField):
    if a.grid != b.grid:
        raise ValidationError(
            "Fields live on different grids",
            detail=f"{a.grid} vs {b.grid}",
        )


def atom_number(f: ComplexField) -> float:
    """Return sum |psi|^2 dV."""
    n = float(np.sum(f.density)) * f.grid.dV
    if not np.isfinite(n):
        raise NumericFaultError("Atom number is not finite", detail=f"N={n}")
    return n


def inner_product(a: ComplexField, b: ComplexField) -> complex:
    """Return sum conj(a) b dV."""
    _check_same_grid(a, b)
    value = complex(np.vdot(a.values, b.values)) * a.grid.dV
    if not np.isfinite(value):
        raise NumericFaultError("Inner product is not finite", detail=f"<a,b>={value}")
    return value


def normalize_to(f: ComplexField, N_target: float) -> ComplexField:
    """Scale f so that its atom number equals N_target."""
    if not N_target > 0:
        raise ValidationError("Target atom number must be positive", detail=f"N={N_target}")
    n = atom_number(f)
    if n <= 0:
        raise ValidationError("Cannot normalize a zero-norm field")
    return f.scaled(np.sqrt(N_target / n))


def spectral_norm(f: ComplexField) -> float:
    """Atom number evaluated in Fourier space: sum |psi_hat|^2 dV / J."""
    psi_hat = fft.fftn(f.values, workers=settings.fft_workers)
    return float(np.sum(np.abs(psi_hat) ** 2)) * f.grid.dV / f.grid.size


def center_of_mass(f: ComplexField) -> np.ndarray:
    """Density-weighted mean position (x, y, z)."""
    rho = f.density
    total = float(np.sum(rho))
    if total <= 0:
        raise ValidationError("Center of mass of a zero field is undefined")
    grid = f.grid
    return np.array(
        [
            float(np.sum(rho.sum(axis=(1, 2)) * grid.x)) / total,
            float(np.sum(rho.sum(axis=(0, 2)) * grid.y)) / total,
            float(np.sum(rho.sum(axis=(0, 1)) * grid.z)) / total,
        ]
    )


def shift_field(f: ComplexField, offset) -> ComplexField:
    """Translate f by offset using the Fourier shift theorem."""
    grid = f.grid
    ox, oy, oz = (float(v) for v in offset)
    kx, ky, kz = grid.k_mesh
    phase = np.exp(-1j * (kx * ox + ky * oy + kz * oz))
    psi_hat = fft.fftn(f.values, workers=settings.fft_workers)
    return f.with_values(fft.ifftn(psi_hat * phase, workers=settings.fft_workers))


def boundary_density_ratio(rho: np.ndarray) -> float:
    """Maximum density on the box faces relative to the peak density."""
    peak = float(np.max(rho))
    if peak <= 0:
        return 0.0
    faces = max(
        float(np.max(rho[[0, -1], :, :])),
        float(np.max(rho[:, [0, -1], :])),
        float(np.max(rho[:, :, [0, -1]])),
    )
    return faces / peak
