"""Repository for binary field files with JSON sidecars."""

import logging
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import ValidationError as PydanticValidationError

from app.exceptions import StorageError
from app.models.grid import ComplexField, Grid3D
from app.schemas.field_file import (
    ENDIANNESS,
    FIELD_DTYPE,
    FieldSidecar,
    SliceAxis,
    SliceSidecar,
)
from app.services.grid_service import atom_number, build_grid
from app.services.observables import DensitySlice

logger = logging.getLogger(__name__)

COMPLEX_DTYPE = np.dtype("<c16")
REAL_DTYPE = np.dtype("<f8")


class FieldRepository:
    """Stores fields as <name>.bin (raw data) next to <name>.json (sidecar)."""

    def __init__(self, root):
        self.root = Path(root)

    def _paths(self, name: str) -> tuple:
        return self.root / f"{name}.bin", self.root / f"{name}.json"

    def save(self, name: str, psi: ComplexField, label: str = "", time: float = None) -> Path:
        """
        Write a field file.

        Args:
            name: File stem
            psi: Field to store
            label: Free-form description stored in the sidecar
            time: Time of the state, if any

        Returns:
            Path of the binary file
        """
        grid = psi.grid
        blob, sidecar_path = self._paths(name)
        sidecar = FieldSidecar(
            shape=list(grid.shape),
            box=list(grid.lengths),
            label=label,
            atoms=atom_number(psi),
            time=time,
        )
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            blob.write_bytes(np.ascontiguousarray(psi.values, dtype=COMPLEX_DTYPE).tobytes())
            sidecar_path.write_text(sidecar.model_dump_json(indent=2), encoding="utf-8")
        except OSError as e:
            logger.error(f"Failed to write field {name}: {e}")
            raise StorageError(f"Failed to write field file {blob}", detail=str(e)) from e
        logger.info(f"Wrote field {blob} ({sidecar.label or 'unlabeled'})")
        return blob

    def read_sidecar(self, name: str) -> FieldSidecar:
        _, sidecar_path = self._paths(name)
        try:
            sidecar = FieldSidecar.model_validate_json(sidecar_path.read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise StorageError(f"Field sidecar not found: {sidecar_path}") from e
        except PydanticValidationError as e:
            raise StorageError(f"Malformed field sidecar: {sidecar_path}", detail=str(e)) from e
        if sidecar.dtype != FIELD_DTYPE or sidecar.endianness != ENDIANNESS:
            raise StorageError(
                "Unsupported field encoding",
                detail=f"dtype={sidecar.dtype}, endianness={sidecar.endianness}",
            )
        return sidecar

    def load(self, name: str, grid: Optional[Grid3D] = None) -> ComplexField:
        """
        Read a field file back bitwise.

        Raises:
            StorageError: If files are missing, malformed or do not match grid
        """
        blob, _ = self._paths(name)
        sidecar = self.read_sidecar(name)
        if grid is None:
            grid = build_grid(*sidecar.box, *sidecar.shape)
        elif tuple(sidecar.shape) != grid.shape or not np.allclose(sidecar.box, grid.lengths):
            raise StorageError(
                f"Field {name} was stored on a different grid",
                detail=f"file {sidecar.shape}/{sidecar.box}, expected {grid.shape}/{grid.lengths}",
            )
        try:
            values = np.fromfile(blob, dtype=COMPLEX_DTYPE)
        except FileNotFoundError as e:
            raise StorageError(f"Field data not found: {blob}") from e
        if values.size != grid.size:
            raise StorageError(
                f"Field data has the wrong length: {blob}",
                detail=f"{values.size} values, expected {grid.size}",
            )
        return ComplexField(values.reshape(grid.shape).astype(np.complex128), grid)

    def exists(self, name: str) -> bool:
        return all(path.exists() for path in self._paths(name))

    def save_slice(self, name: str, slice_: DensitySlice) -> Path:
        """Write a density slice as raw float64 with its sidecar."""
        blob, sidecar_path = self._paths(name)
        axes = [
            SliceAxis(name=axis, start=float(coords[0]), stop=float(coords[-1]), count=len(coords))
            for axis, coords in slice_.axes
        ]
        sidecar = SliceSidecar(
            plane=slice_.plane,
            index=slice_.index,
            time=slice_.time,
            shape=list(slice_.values.shape),
            axes=axes,
        )
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            blob.write_bytes(np.ascontiguousarray(slice_.values, dtype=REAL_DTYPE).tobytes())
            sidecar_path.write_text(sidecar.model_dump_json(indent=2), encoding="utf-8")
        except OSError as e:
            logger.error(f"Failed to write slice {name}: {e}")
            raise StorageError(f"Failed to write slice file {blob}", detail=str(e)) from e
        return blob

    def load_slice(self, name: str) -> tuple:
        """(values, SliceSidecar)"""
        blob, sidecar_path = self._paths(name)
        try:
            sidecar = SliceSidecar.model_validate_json(sidecar_path.read_text(encoding="utf-8"))
            values = np.fromfile(blob, dtype=REAL_DTYPE)
        except FileNotFoundError as e:
            raise StorageError(f"Slice file not found: {name}") from e
        except PydanticValidationError as e:
            raise StorageError(f"Malformed slice sidecar: {sidecar_path}", detail=str(e)) from e
        return values.reshape(sidecar.shape), sidecar
