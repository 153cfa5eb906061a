"""Repository for precomputed kernel multipliers on disk."""

import hashlib
import logging
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from pydantic import ValidationError as PydanticValidationError

from app.config import settings
from app.exceptions import StorageError
from app.models.constants import PolarizationAxis
from app.models.grid import Grid3D
from app.models.kernel import DFT_CONVENTION, TruncatedKernelSpectrum
from app.schemas.field_file import KernelCacheHeader
from app.services.dipolar_kernel import choose_oversampling

logger = logging.getLogger(__name__)

BLOB_DTYPE = np.dtype("<f8")


def git_blob_hash(data: bytes) -> str:
    """Content hash computed the way git hashes a blob object."""
    digest = hashlib.sha1()
    digest.update(f"blob {len(data)}\0".encode("ascii"))
    digest.update(data)
    return digest.hexdigest()


class KernelCacheRepository:
    """
    Kernel multipliers keyed by the SHA-256 of their header.

    Each entry is <key>.json (header) and <key>.bin, the listed arrays
    concatenated in header order.
    """

    def __init__(self, cache_dir=None):
        self.cache_dir = Path(cache_dir if cache_dir is not None else settings.kernel_cache_dir)

    def header_for(self, grid: Grid3D, polarization: Optional[PolarizationAxis]) -> KernelCacheHeader:
        return KernelCacheHeader(
            Jx=grid.Jx,
            Jy=grid.Jy,
            Jz=grid.Jz,
            Lx=grid.Lx,
            Ly=grid.Ly,
            Lz=grid.Lz,
            oversampling=choose_oversampling(grid),
            dft_convention=DFT_CONVENTION,
            polarization=list(polarization.n) if polarization is not None else None,
            arrays=["multiplier", "nn_multiplier"] if polarization is not None else ["multiplier"],
        )

    def _paths(self, header: KernelCacheHeader) -> tuple:
        key = header.cache_key()
        return self.cache_dir / f"{key}.json", self.cache_dir / f"{key}.bin"

    def load(self, grid: Grid3D, polarization: Optional[PolarizationAxis] = None) -> Optional[tuple]:
        """
        Read a cached kernel.

        Returns:
            (TruncatedKernelSpectrum, content hash), or None on a cache miss

        Raises:
            StorageError: If the entry exists but is corrupt
        """
        header = self.header_for(grid, polarization)
        header_path, blob_path = self._paths(header)
        if not (header_path.exists() and blob_path.exists()):
            return None
        try:
            stored = KernelCacheHeader.model_validate_json(header_path.read_text(encoding="utf-8"))
        except PydanticValidationError as e:
            raise StorageError(f"Malformed kernel cache header: {header_path}", detail=str(e)) from e
        if stored != header:
            raise StorageError(
                "Kernel cache header does not match its key", detail=str(header_path)
            )

        data = blob_path.read_bytes()
        shape = grid.padded_shape
        count = int(np.prod(shape))
        if len(data) != BLOB_DTYPE.itemsize * count * len(header.arrays):
            raise StorageError(f"Kernel cache blob has the wrong size: {blob_path}")
        arrays = np.frombuffer(data, dtype=BLOB_DTYPE).reshape(len(header.arrays), *shape)
        kernel = TruncatedKernelSpectrum(
            grid=grid,
            multiplier=arrays[0].astype(np.float64),
            L_trunc=grid.truncation_radius,
            oversampling=header.oversampling,
            polarization=polarization,
            nn_multiplier=arrays[1].astype(np.float64) if len(header.arrays) > 1 else None,
        )
        logger.info(f"Loaded kernel for grid {grid.shape} from cache {blob_path.name}")
        return kernel, git_blob_hash(data)

    def save(self, kernel: TruncatedKernelSpectrum) -> str:
        """Write a kernel entry and return its content hash."""
        header = self.header_for(kernel.grid, kernel.polarization)
        header_path, blob_path = self._paths(header)
        arrays = [kernel.multiplier]
        if kernel.polarization is not None:
            arrays.append(kernel.nn_multiplier)
        data = b"".join(np.ascontiguousarray(a, dtype=BLOB_DTYPE).tobytes() for a in arrays)
        try:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            blob_path.write_bytes(data)
            header_path.write_text(header.model_dump_json(indent=2), encoding="utf-8")
        except OSError as e:
            logger.error(f"Failed to write kernel cache entry: {e}")
            raise StorageError("Failed to write kernel cache entry", detail=str(e)) from e
        logger.info(f"Stored kernel for grid {kernel.grid.shape} in cache {blob_path.name}")
        return git_blob_hash(data)

    def get_or_compute(
        self,
        grid: Grid3D,
        polarization: Optional[PolarizationAxis],
        compute: Callable[[], TruncatedKernelSpectrum],
    ) -> tuple:
        """(kernel, content hash), computing and storing the kernel on a miss."""
        cached = self.load(grid, polarization)
        if cached is not None:
            return cached
        kernel = compute()
        return kernel, self.save(kernel)
