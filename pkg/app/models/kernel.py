from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from app.models.constants import PolarizationAxis
from app.models.grid import Grid3D

DFT_CONVENTION = "unnormalized-forward"


@dataclass(frozen=True, eq=False)
class TruncatedKernelSpectrum:
    """Fourier multipliers of the truncated free-space kernel on the padded grid.

    multiplier acts on zero-padded densities of shape (2Jx, 2Jy, 2Jz) and
    yields the free-space Newtonian potential. nn_multiplier, when present,
    yields the second directional derivative along polarization of that
    potential.
    """

    grid: Grid3D
    multiplier: np.ndarray
    L_trunc: float
    oversampling: int
    polarization: Optional[PolarizationAxis] = None
    nn_multiplier: Optional[np.ndarray] = None

    @cached_property
    def half_multiplier(self) -> np.ndarray:
        return np.ascontiguousarray(self.multiplier[..., : self.grid.Jz + 1])

    @cached_property
    def half_nn_multiplier(self) -> Optional[np.ndarray]:
        if self.nn_multiplier is None:
            return None
        return np.ascontiguousarray(self.nn_multiplier[..., : self.grid.Jz + 1])

    @property
    def has_directional(self) -> bool:
        return self.nn_multiplier is not None
