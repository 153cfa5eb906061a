"""Free-space convolution with the truncated Coulomb kernel and the dipolar potential."""

import logging
import time

import numpy as np
from scipy import fft

from app.config import settings
from app.exceptions import KernelError
from app.models.constants import PolarizationAxis
from app.models.grid import ComplexField, Grid3D
from app.models.kernel import TruncatedKernelSpectrum
from app.services.grid_service import boundary_density_ratio

logger = logging.getLogger(__name__)

# (max aspect ratio, oversampling factor)
OVERSAMPLING_LADDER = ((2.75, 4), (4.5, 6))

# bytes per oversampled grid point held at peak during precompute
_PRECOMPUTE_BYTES_PER_POINT = 40


def choose_oversampling(grid: Grid3D) -> int:
    """Return the oversampling factor for the grid's aspect ratio."""
    zeta = grid.aspect_ratio
    for limit, q in OVERSAMPLING_LADDER:
        if zeta <= limit:
            return q
    raise KernelError(
        "Unsupported box aspect ratio for the truncated kernel",
        detail=f"aspect ratio {zeta:.3g} exceeds {OVERSAMPLING_LADDER[-1][0]}",
    )


def estimate_precompute_bytes(grid: Grid3D, oversampling: int) -> int:
    return _PRECOMPUTE_BYTES_PER_POINT * grid.size * oversampling**3


def truncated_kernel_symbol(s: np.ndarray, L: float) -> np.ndarray:
    """Fourier transform of 1/(4 pi r) truncated at radius L: 2 sin^2(L s/2)/s^2."""
    return 0.5 * L**2 * np.sinc(L * s / (2.0 * np.pi)) ** 2


def _oversampled_frequencies(grid: Grid3D, q: int) -> tuple:
    sx = 2 * np.pi * fft.fftfreq(q * grid.Jx, d=grid.dx)
    sy = 2 * np.pi * fft.fftfreq(q * grid.Jy, d=grid.dy)
    sz = 2 * np.pi * fft.rfftfreq(q * grid.Jz, d=grid.dz)
    return np.meshgrid(sx, sy, sz, indexing="ij", sparse=True)


def _restrict_to_padded(kernel: np.ndarray, grid: Grid3D, q: int) -> np.ndarray:
    """Keep offsets -J..J-1 per axis in FFT ordering; the offset -J is zeroed."""
    index = [
        np.r_[0:J, q * J - J : q * J] for J in (grid.Jx, grid.Jy, grid.Jz)
    ]
    restricted = kernel[np.ix_(*index)]
    restricted[grid.Jx, :, :] = 0.0
    restricted[:, grid.Jy, :] = 0.0
    restricted[:, :, grid.Jz] = 0.0
    return restricted


def _padded_multiplier(symbol: np.ndarray, grid: Grid3D, q: int, workers: int) -> np.ndarray:
    shape = (q * grid.Jx, q * grid.Jy, q * grid.Jz)
    effective = fft.irfftn(symbol, s=shape, workers=workers)
    restricted = _restrict_to_padded(effective, grid, q)
    del effective
    return np.ascontiguousarray(fft.fftn(restricted, workers=workers).real)


def precompute_truncated_kernel(
    grid: Grid3D,
    polarization: PolarizationAxis = None,
    memory_limit_gb: float = None,
    workers: int = None,
) -> TruncatedKernelSpectrum:
    """
    Precompute the runtime multiplier of the truncated free-space kernel.

    The kernel transform is sampled on a q-fold oversampled frequency grid,
    brought back to real space, restricted to the 2x padded box and
    transformed forward again. With a polarization axis the multiplier of the
    second directional derivative is built the same way.

    Args:
        grid: Grid the densities live on
        polarization: Dipole axis for the directional multiplier (optional)
        memory_limit_gb: Refuse the precompute above this estimate
        workers: scipy.fft worker count

    Returns:
        TruncatedKernelSpectrum reusable for every solve on this grid

    Raises:
        KernelError: If the aspect ratio is unsupported or the memory estimate is too large
    """
    q = choose_oversampling(grid)
    limit = settings.kernel_memory_limit_gb if memory_limit_gb is None else memory_limit_gb
    estimate = estimate_precompute_bytes(grid, q)
    if estimate > limit * 1024**3:
        raise KernelError(
            "Kernel precompute exceeds the memory limit",
            detail=f"estimated {estimate / 1024**3:.2f} GiB, limit {limit:.2f} GiB",
        )
    workers = settings.fft_workers if workers is None else workers
    L = grid.truncation_radius

    started = time.perf_counter()
    logger.info(
        f"Precomputing truncated kernel for grid {grid.shape}, oversampling {q}, "
        f"estimated {estimate / 1024**2:.0f} MiB"
    )
    sx, sy, sz = _oversampled_frequencies(grid, q)
    s = np.sqrt(sx**2 + sy**2 + sz**2)
    symbol = truncated_kernel_symbol(s, L)
    del s
    multiplier = _padded_multiplier(symbol, grid, q, workers)

    nn_multiplier = None
    if polarization is not None:
        n1, n2, n3 = polarization.n
        directional = -((n1 * sx + n2 * sy + n3 * sz) ** 2) * symbol
        del symbol
        nn_multiplier = _padded_multiplier(directional, grid, q, workers)

    logger.info(f"Kernel precompute finished in {time.perf_counter() - started:.2f} s")
    return TruncatedKernelSpectrum(
        grid=grid,
        multiplier=multiplier,
        L_trunc=L,
        oversampling=q,
        polarization=polarization,
        nn_multiplier=nn_multiplier,
    )


def _check_kernel(rho: np.ndarray, kernel: TruncatedKernelSpectrum):
    if rho.shape != kernel.grid.shape:
        raise KernelError(
            "Density does not match the kernel grid",
            detail=f"density {rho.shape} vs kernel grid {kernel.grid.shape}",
        )


def _padded_transform(rho: np.ndarray, grid: Grid3D, workers: int) -> np.ndarray:
    padded = np.zeros(grid.padded_shape)
    padded[: grid.Jx, : grid.Jy, : grid.Jz] = rho
    return fft.rfftn(padded, workers=workers)


def _apply_padded(rho_hat: np.ndarray, half_multiplier: np.ndarray, grid: Grid3D, workers: int):
    result = fft.irfftn(rho_hat * half_multiplier, s=grid.padded_shape, workers=workers)
    return np.ascontiguousarray(result[: grid.Jx, : grid.Jy, : grid.Jz])


def _warn_on_boundary(rho: np.ndarray, threshold: float):
    if threshold is None:
        return
    ratio = boundary_density_ratio(rho)
    if ratio > threshold:
        logger.warning(
            f"Density at the box boundary is {ratio:.3g} of the peak "
            f"(threshold {threshold:.1g}); free-space potential may be inaccurate"
        )


def free_space_poisson(
    rho: np.ndarray,
    kernel: TruncatedKernelSpectrum,
    warn_threshold: float = 1e-10,
    workers: int = None,
) -> np.ndarray:
    """Solve -laplace(phi) = rho in free space for a density supported in the box."""
    rho = np.asarray(rho, dtype=float)
    _check_kernel(rho, kernel)
    _warn_on_boundary(rho, warn_threshold)
    workers = settings.fft_workers if workers is None else workers
    grid = kernel.grid
    return _apply_padded(_padded_transform(rho, grid, workers), kernel.half_multiplier, grid, workers)


def periodic_directional_derivative(
    phi: np.ndarray, grid: Grid3D, n: PolarizationAxis, workers: int = None
) -> np.ndarray:
    """Second derivative along n on the periodic grid (multiplication by -(n.k)^2)."""
    workers = settings.fft_workers if workers is None else workers
    n1, n2, n3 = n.n
    kx, ky, kz = np.meshgrid(
        grid.kx, grid.ky, 2 * np.pi * fft.rfftfreq(grid.Jz, d=grid.dz), indexing="ij", sparse=True
    )
    symbol = -((n1 * kx + n2 * ky + n3 * kz) ** 2)
    phi_hat = fft.rfftn(phi, workers=workers)
    return fft.irfftn(phi_hat * symbol, s=grid.shape, workers=workers)


def dipolar_potential(
    psi: ComplexField,
    kernel: TruncatedKernelSpectrum,
    n: PolarizationAxis,
    g_dd: float,
    derivative: str = "free-space",
    warn_threshold: float = 1e-10,
    workers: int = None,
) -> np.ndarray:
    """
    Dipolar interaction potential Phi = -g_dd |psi|^2 - 3 g_dd d_nn phi.

    derivative="free-space" applies -(n.s)^2 to the free-space kernel through
    the precomputed directional multiplier. derivative="periodic" solves for
    phi first and differentiates on the periodic grid. Only the periodic mode
    gives d_nn phi a zero grid average; the free-space d_nn phi of a localized
    density has a nonzero mean.

    Raises:
        KernelError: If the kernel grid or polarization does not match
    """
    rho = psi.density
    _check_kernel(rho, kernel)
    if g_dd == 0.0 or not np.any(rho):
        return np.zeros(psi.grid.shape)
    workers = settings.fft_workers if workers is None else workers
    grid = kernel.grid

    if derivative == "free-space":
        if not kernel.has_directional:
            raise KernelError(
                "Kernel has no directional multiplier",
                detail="precompute the kernel with a polarization axis",
            )
        if not kernel.polarization.matches(n):
            raise KernelError(
                "Kernel polarization does not match the requested axis",
                detail=f"kernel {kernel.polarization.n} vs requested {n.n}",
            )
        _warn_on_boundary(rho, warn_threshold)
        phi_nn = _apply_padded(
            _padded_transform(rho, grid, workers), kernel.half_nn_multiplier, grid, workers
        )
    elif derivative == "periodic":
        phi = free_space_poisson(rho, kernel, warn_threshold=warn_threshold, workers=workers)
        phi_nn = periodic_directional_derivative(phi, grid, n, workers=workers)
    else:
        raise KernelError("Unknown derivative mode", detail=derivative)

    return -g_dd * rho - 3.0 * g_dd * phi_nn


def naive_kernel_samples(grid: Grid3D, n: PolarizationAxis) -> np.ndarray:
    """(1 - 3 cos^2 theta)/r^3 at padded-grid offsets, with the origin set to 0."""
    offsets = [
        d * np.r_[0:J, -J:0] for d, J in zip(grid.spacings, grid.shape)
    ]
    ox, oy, oz = np.meshgrid(*offsets, indexing="ij", sparse=True)
    r2 = ox**2 + oy**2 + oz**2
    n1, n2, n3 = n.n
    proj2 = (n1 * ox + n2 * oy + n3 * oz) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        kernel = (r2 - 3.0 * proj2) / r2**2.5
    kernel[0, 0, 0] = 0.0
    kernel[grid.Jx, :, :] = 0.0
    kernel[:, grid.Jy, :] = 0.0
    kernel[:, :, grid.Jz] = 0.0
    return kernel


def dipolar_potential_naive(
    psi: ComplexField, n: PolarizationAxis, g_dd: float, workers: int = None
) -> np.ndarray:
    """Dipolar potential from the sampled singular kernel; second-order accurate."""
    grid = psi.grid
    rho = psi.density
    if g_dd == 0.0 or not np.any(rho):
        return np.zeros(grid.shape)
    workers = settings.fft_workers if workers is None else workers
    kernel_hat = fft.rfftn(naive_kernel_samples(grid, n), workers=workers)
    conv = _apply_padded(_padded_transform(rho, grid, workers), kernel_hat, grid, workers)
    return 3.0 * g_dd / (4.0 * np.pi) * grid.dV * conv
