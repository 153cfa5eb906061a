"""Run configuration document passed with --config."""

import json
import math
from pathlib import Path
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic import ValidationError as PydanticValidationError

from app.exceptions import ConfigurationError
from app.models.control import ControlBounds, ControlEndpoints
from app.models.optimizer import OptimizerConfig

TWO_PI = 2.0 * math.pi
MODES = ("multilevel", "direct-level-4", "sum-of-sines")


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SpeciesBlock(_Block):
    """Atomic species and atom number"""
    mass_u: float = Field(163.93, gt=0, description="Atom mass in atomic mass units")
    magnetic_moment_muB: float = Field(9.93, ge=0, description="Magnetic moment in Bohr magnetons")
    L3_m6_per_s: float = Field(1.2e-41, ge=0, description="Three-body loss coefficient")
    N0: float = Field(1.0e4, gt=0, description="Atom number of the initial and target states")
    polarization: List[float] = Field([0.0, 0.0, 1.0], min_length=3, max_length=3)


class GridBlock(_Block):
    """Computational box and discretization"""
    Lx_um: float = Field(12.0, gt=0)
    Ly_um: float = Field(12.0, gt=0)
    Lz_um: float = Field(24.0, gt=0)
    Jx: int = 72
    Jy: int = 72
    Jz: int = 64
    fine_Jx: int = 144
    fine_Jy: int = 144
    fine_Jz: int = 128
    dipolar_derivative: str = Field("free-space", pattern="^(free-space|periodic)$")

    @field_validator("Jx", "Jy", "Jz", "fine_Jx", "fine_Jy", "fine_Jz")
    @classmethod
    def _even(cls, value: int) -> int:
        if value < 8 or value % 2:
            raise ValueError("grid point counts must be even and at least 8")
        return value


class SolverBlock(_Block):
    """Real-time propagation"""
    dt_ms: float = Field(0.005, gt=0)
    fine_dt_ms: float = Field(0.0025, gt=0)
    T_ms: float = Field(2.0, gt=0)
    hold_ms: float = Field(8.0, ge=0, description="Free evolution after T with frozen controls")
    record_stride: int = Field(1, ge=1)
    snapshot_times_ms: Optional[List[float]] = Field(
        None, description="Absolute snapshot times; defaults to T, T+1, T+2, T+4, T+8"
    )
    boundary_warn_threshold: float = Field(1e-10, gt=0)


class GroundStateBlock(_Block):
    """Imaginary-time relaxation"""
    dt_ms: float = Field(0.005, gt=0)
    tol: float = Field(1e-10, gt=0)
    max_steps: int = Field(100_000, ge=1)
    energy_stride: int = Field(10, ge=1)
    recenter_stride: int = Field(100, ge=1)
    seed_trap_Hz: float = Field(10.0, gt=0, description="Isotropic trap of the first droplet stage")
    droplet_seed_widths_um: List[float] = Field([0.4, 0.4, 1.5], min_length=3, max_length=3)


class ControlsBlock(_Block):
    """Control endpoints, bounds and knot ladder"""
    a_s_initial_a0: float = 130.0
    a_s_final_a0: float = 80.0
    omega_rho_initial_Hz: float = 70.0
    omega_rho_final_Hz: float = 0.0
    omega_z_initial_Hz: float = 52.5
    omega_z_final_Hz: float = 0.0
    a_s_lower_a0: float = 80.0
    a_s_upper_a0: float = 130.0
    omega_rho_lower_Hz: float = 0.0
    omega_rho_upper_Hz: float = 318.3
    omega_z_lower_Hz: float = 0.0
    omega_z_upper_Hz: float = 318.3
    levels: List[int] = Field([1, 2, 3, 4], min_length=1)

    @field_validator("levels")
    @classmethod
    def _ladder(cls, levels: List[int]) -> List[int]:
        if any(level < 1 or level > 4 for level in levels) or levels != sorted(set(levels)):
            raise ValueError("levels must be strictly increasing values in 1..4")
        return levels


class OptimizerBlock(_Block):
    """Optimization budget and algorithm"""
    mode: str = Field("multilevel", description=f"One of {', '.join(MODES)}")
    eval_budget: int = Field(2500, ge=1)
    iters_per_level: int = Field(15, ge=1)
    fd_step: float = Field(1e-3, gt=0)
    penalty_weight: float = Field(1e3, gt=0)
    sines_modes: int = Field(9, ge=1)
    seed: int = 0
    random_start: bool = False

    @field_validator("mode")
    @classmethod
    def _mode(cls, mode: str) -> str:
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        return mode


class PerturbationBlock(_Block):
    """Robustness study"""
    N0: float = Field(9000.0, gt=0)
    endpoint_factors: List[float] = Field([1.03, 0.97, 1.03, 0.97], min_length=4, max_length=4)
    noise_sigma: float = Field(0.03, ge=0)
    seed: int = 0


class RunConfig(_Block):
    """Complete configuration of a run; every key carries its unit"""
    species: SpeciesBlock = Field(default_factory=SpeciesBlock)
    grid: GridBlock = Field(default_factory=GridBlock)
    solver: SolverBlock = Field(default_factory=SolverBlock)
    groundstate: GroundStateBlock = Field(default_factory=GroundStateBlock)
    controls: ControlsBlock = Field(default_factory=ControlsBlock)
    optimizer: OptimizerBlock = Field(default_factory=OptimizerBlock)
    perturbation: PerturbationBlock = Field(default_factory=PerturbationBlock)
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def _horizon_fits_steps(self) -> "RunConfig":
        for dt in (self.solver.dt_ms, self.solver.fine_dt_ms):
            for span in (self.solver.T_ms, self.solver.hold_ms):
                steps = span / dt
                if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
                    raise ValueError(f"{span} ms is not an integer multiple of dt = {dt} ms")
        return self

    @classmethod
    def load(cls, path) -> "RunConfig":
        """
        Read and validate a JSON configuration file.

        Raises:
            ConfigurationError: If the file is missing, not JSON or invalid
        """
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigurationError(f"Configuration file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Configuration file is not valid JSON: {path}", detail=str(e)) from e
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        try:
            return cls.model_validate(data)
        except PydanticValidationError as e:
            raise ConfigurationError("Invalid run configuration", detail=str(e)) from e

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True)

    # -- resolved views -------------------------------------------------------

    def grid_shape(self, fine: bool = False) -> tuple:
        g = self.grid
        return (g.fine_Jx, g.fine_Jy, g.fine_Jz) if fine else (g.Jx, g.Jy, g.Jz)

    def dt_ms(self, fine: bool = False) -> float:
        return self.solver.fine_dt_ms if fine else self.solver.dt_ms

    def snapshot_times(self) -> List[float]:
        if self.solver.snapshot_times_ms is not None:
            return list(self.solver.snapshot_times_ms)
        T = self.solver.T_ms
        return [T + offset for offset in (0.0, 1.0, 2.0, 4.0, 8.0)]

    def endpoints(self) -> ControlEndpoints:
        c = self.controls
        return ControlEndpoints(
            a_s_i=c.a_s_initial_a0,
            a_s_f=c.a_s_final_a0,
            w_rho_i=TWO_PI * c.omega_rho_initial_Hz,
            w_rho_f=TWO_PI * c.omega_rho_final_Hz,
            w_z_i=TWO_PI * c.omega_z_initial_Hz,
            w_z_f=TWO_PI * c.omega_z_final_Hz,
        )

    def bounds(self) -> ControlBounds:
        c = self.controls
        return ControlBounds(
            a_s_lower=c.a_s_lower_a0,
            a_s_upper=c.a_s_upper_a0,
            w_rho_lower=TWO_PI * c.omega_rho_lower_Hz,
            w_rho_upper=TWO_PI * c.omega_rho_upper_Hz,
            w_z_lower=TWO_PI * c.omega_z_lower_Hz,
            w_z_upper=TWO_PI * c.omega_z_upper_Hz,
        )

    def optimizer_config(self, seed: Optional[int] = None) -> OptimizerConfig:
        o = self.optimizer
        return OptimizerConfig(
            iters_per_level=o.iters_per_level,
            eval_budget=o.eval_budget,
            fd_step=o.fd_step,
            algorithm="nelder-mead-penalty" if o.mode == "sum-of-sines" else "projected-quasi-newton",
            penalty_weight=o.penalty_weight,
            seed=o.seed if seed is None else seed,
            levels=tuple(self.controls.levels),
            sines_modes=o.sines_modes,
        )
