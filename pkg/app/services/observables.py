"""Physical diagnostics recorded during propagation."""

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from app.exceptions import ValidationError
from app.models.grid import ComplexField
from app.services.grid_service import (
    atom_number,
    boundary_density_ratio,
    center_of_mass,
    inner_product,
)

logger = logging.getLogger(__name__)

SERIES_COLUMNS = ["t_ms", "peak_density_um3", "atoms_total", "atoms_in_Z", "com_z_um"]


@dataclass(frozen=True)
class CylinderRegion:
    """Cylinder of given radius and half length around the z axis (internal lengths)."""

    radius: float = 0.75
    half_length: float = 7.5

    def __post_init__(self):
        if not (self.radius > 0 and self.half_length > 0):
            raise ValidationError(
                "Cylinder dimensions must be positive",
                detail=f"radius={self.radius}, half_length={self.half_length}",
            )


@dataclass
class DensitySlice:
    values: np.ndarray
    plane: str
    index: int
    axes: tuple  # (name, coordinates) for the two remaining axes
    time: float = 0.0


@dataclass
class ObservableSeries:
    times: list = field(default_factory=list)
    peak_density: list = field(default_factory=list)
    atoms_total: list = field(default_factory=list)
    atoms_in_Z: list = field(default_factory=list)
    com_z: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.times)

    def to_frame(self, time_to_ms: float = 1.0) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "t_ms": np.asarray(self.times) * time_to_ms,
                "peak_density_um3": self.peak_density,
                "atoms_total": self.atoms_total,
                "atoms_in_Z": self.atoms_in_Z,
                "com_z_um": self.com_z,
            },
            columns=SERIES_COLUMNS,
        )


def peak_density(psi: ComplexField) -> float:
    return float(np.max(psi.density))


def region_mask(psi: ComplexField, region: CylinderRegion) -> np.ndarray:
    grid = psi.grid
    if 2 * region.radius > min(grid.Lx, grid.Ly) or 2 * region.half_length > grid.Lz:
        raise ValidationError(
            "Cylinder region exceeds the computational box",
            detail=f"{region} in box {grid.lengths}",
        )
    X, Y, Z = grid.mesh
    return (X**2 + Y**2 <= region.radius**2) & (np.abs(Z) <= region.half_length)


def atoms_in_region(psi: ComplexField, region: CylinderRegion) -> float:
    """Atoms at grid points inside the cylinder (sharp indicator)."""
    mask = region_mask(psi, region)
    return float(np.sum(psi.density[mask])) * psi.grid.dV


def density_slice(psi: ComplexField, plane: str, time: float = 0.0) -> DensitySlice:
    """Density on the plane y=0 or z=0, at the grid index nearest coordinate zero."""
    grid = psi.grid
    _, iy, iz = grid.origin_index()
    rho = psi.density
    if plane == "y=0":
        return DensitySlice(rho[:, iy, :].copy(), plane, iy, (("x", grid.x), ("z", grid.z)), time)
    if plane == "z=0":
        return DensitySlice(rho[:, :, iz].copy(), plane, iz, (("x", grid.x), ("y", grid.y)), time)
    raise ValidationError("Unknown slice plane", detail=plane)


def boundary_ratio(psi: ComplexField) -> float:
    """Peak density on the box faces relative to the overall peak."""
    return boundary_density_ratio(psi.density)


def overlap_with_target(psi: ComplexField, psi_d: ComplexField) -> float:
    """|<psi_d, psi>| in atom-number units."""
    return abs(inner_product(psi_d, psi))


def half_max_extents(slice_: DensitySlice) -> tuple:
    """Extents of the half-maximum region along the two slice axes."""
    values = slice_.values
    above = values >= 0.5 * values.max()
    (_, first), (_, second) = slice_.axes
    rows = np.flatnonzero(above.any(axis=1))
    cols = np.flatnonzero(above.any(axis=0))
    d_first = first[1] - first[0]
    d_second = second[1] - second[0]
    return (
        (first[rows[-1]] - first[rows[0]]) + d_first,
        (second[cols[-1]] - second[cols[0]]) + d_second,
    )


class ObservableRecorder:
    """Propagation observer collecting an ObservableSeries."""

    def __init__(self, region: CylinderRegion):
        self.region = region
        self.series = ObservableSeries()

    def __call__(self, step: int, t: float, psi: ComplexField):
        self.series.times.append(t)
        self.series.peak_density.append(peak_density(psi))
        self.series.atoms_total.append(atom_number(psi))
        self.series.atoms_in_Z.append(atoms_in_region(psi, self.region))
        self.series.com_z.append(float(center_of_mass(psi)[2]))


def relative_fluctuation(values) -> float:
    """(max - min) / mean of a series."""
    values = np.asarray(values, dtype=float)
    mean = float(np.mean(values))
    if mean == 0:
        return 0.0
    return float((values.max() - values.min()) / mean)

