"""Strang-split spectral time stepping of the generalized GPE."""

import logging
import math
from dataclasses import replace
from typing import Callable, Iterable, Optional

import numpy as np
from scipy import fft

from app.config import settings
from app.exceptions import (
    CollapseError,
    ConvergenceError,
    NumericFaultError,
    ValidationError,
)
from app.models.constants import ControlSample, ModelParams
from app.models.grid import ComplexField, Grid3D
from app.models.kernel import TruncatedKernelSpectrum
from app.models.solver import GroundStateConfig, GroundStateResult, SolverConfig, Trajectory
from app.services.dipolar_kernel import dipolar_potential
from app.services.grid_service import (
    atom_number,
    boundary_density_ratio,
    center_of_mass,
    normalize_to,
    shift_field,
)

logger = logging.getLogger(__name__)

Observer = Callable[[int, float, ComplexField], None]


class FrozenControls:
    """Control source returning the same sample at every time."""

    def __init__(self, sample: ControlSample):
        self._sample = sample

    def sample(self, t: float) -> ControlSample:
        if t < 0:
            raise ValidationError("Controls are undefined before t = 0", detail=f"t={t}")
        return self._sample


def step_count(T: float, dt: float) -> int:
    """Number of steps N with N dt = T; T must be an integer multiple of dt."""
    if T < 0:
        raise ValidationError("Horizon must be non-negative", detail=f"T={T}")
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(1.0, abs(T)):
        raise ValidationError(
            "Horizon is not an integer multiple of the time step",
            detail=f"T={T}, dt={dt}, T/dt={T / dt}",
        )
    return n


class GPESolver:
    """Time evolution of the generalized GPE on one grid.

    The dipolar term is skipped when kernel is None or g_dd is zero.
    """

    def __init__(
        self,
        model: ModelParams,
        grid: Grid3D,
        kernel: Optional[TruncatedKernelSpectrum] = None,
        dipolar_derivative: str = "free-space",
        boundary_warn_threshold: Optional[float] = None,
        workers: int = None,
    ):
        if kernel is not None and kernel.grid != grid:
            raise ValidationError(
                "Kernel grid does not match the solver grid",
                detail=f"{kernel.grid} vs {grid}",
            )
        self.model = model
        self.grid = grid
        self.kernel = kernel
        self.dipolar_derivative = dipolar_derivative
        self.boundary_warn_threshold = boundary_warn_threshold
        self.workers = settings.fft_workers if workers is None else workers
        self._kinetic_cache = {}

    # -- potential terms ------------------------------------------------------

    def external_potential(self, sample: ControlSample) -> np.ndarray:
        X, Y, Z = self.grid.mesh
        return 0.5 * (sample.omega_rho**2 * (X**2 + Y**2) + sample.omega_z**2 * Z**2)

    def dipolar_term(self, psi: ComplexField) -> np.ndarray:
        if self.kernel is None or self.model.g_dd == 0.0:
            return np.zeros(self.grid.shape)
        return dipolar_potential(
            psi,
            self.kernel,
            self.model.polarization,
            self.model.g_dd,
            derivative=self.dipolar_derivative,
            warn_threshold=self.boundary_warn_threshold,
            workers=self.workers,
        )

    def effective_potential(
        self,
        psi: ComplexField,
        t: float,
        controls,
        include_loss: bool = True,
    ) -> np.ndarray:
        """
        V_eff = V_ext + g|psi|^2 + Phi + gamma_qf |psi|^3 - i (hbar L3 / 2) |psi|^4.

        Args:
            psi: Current state
            t: Time at which the controls are sampled
            controls: Object with sample(t) -> ControlSample
            include_loss: Add the three-body loss term

        Returns:
            Complex potential whose imaginary part is non-positive
        """
        sample = controls.sample(t)
        rho = psi.density
        potential = (
            self.external_potential(sample)
            + sample.g * rho
            + self.dipolar_term(psi)
            + sample.gamma_qf * rho**1.5
        )
        if include_loss and self.model.loss_L3 > 0:
            return potential - 1j * (0.5 * self.model.hbar * self.model.loss_L3) * rho**2
        return potential.astype(np.complex128)

    # -- sub-steps ------------------------------------------------------------

    def _kinetic_factor(self, dt: float, imaginary: bool) -> np.ndarray:
        key = (dt, imaginary)
        factor = self._kinetic_cache.get(key)
        if factor is None:
            exponent = 0.5 * self.model.hbar * self.grid.k_squared * dt
            factor = np.exp(-exponent) if imaginary else np.exp(-1j * exponent)
            self._kinetic_cache = {key: factor}
        return factor

    def _check_finite(self, values: np.ndarray, substep: str, t: float):
        if not np.all(np.isfinite(values)):
            logger.error(f"Non-finite values after {substep} at t={t:.6g}")
            raise NumericFaultError(
                f"Numeric fault in {substep}",
                detail=f"NaN or Inf at t={t:.6g}",
                substep=substep,
            )

    def _potential_half_step(
        self, values: np.ndarray, t: float, dt: float, controls, imaginary: bool, substep: str
    ) -> np.ndarray:
        field = ComplexField(values, self.grid)
        potential = self.effective_potential(field, t, controls, include_loss=not imaginary)
        if imaginary:
            factor = np.exp(-potential.real * (0.5 * dt / self.model.hbar))
        else:
            factor = np.exp(-1j * potential * (0.5 * dt / self.model.hbar))
        values = values * factor
        self._check_finite(values, substep, t)
        return values

    def _kinetic_step(self, values: np.ndarray, dt: float, imaginary: bool, t: float) -> np.ndarray:
        values_hat = fft.fftn(values, workers=self.workers)
        values = fft.ifftn(values_hat * self._kinetic_factor(dt, imaginary), workers=self.workers)
        self._check_finite(values, "kinetic step", t)
        return values

    def strang_step(
        self, psi: ComplexField, t: float, dt: float, controls, imaginary: bool = False
    ) -> ComplexField:
        """
        One Strang step: potential half-step at t, kinetic step, potential half-step at t + dt.

        In imaginary time dt is replaced by -i dt and the loss term is dropped.

        Raises:
            NumericFaultError: If a sub-step produces NaN or Inf
        """
        values = self._potential_half_step(
            psi.values, t, dt, controls, imaginary, "first potential half-step"
        )
        values = self._kinetic_step(values, dt, imaginary, t)
        values = self._potential_half_step(
            values, t + dt, dt, controls, imaginary, "second potential half-step"
        )
        return ComplexField(values, self.grid)

    # -- real-time propagation ------------------------------------------------

    def _record(
        self, step: int, t: float, psi: ComplexField, trajectory: Trajectory, observers, threshold
    ):
        trajectory.times.append(t)
        if threshold is not None:
            ratio = boundary_density_ratio(psi.density)
            if ratio > threshold:
                if not trajectory.boundary_warnings:
                    logger.warning(
                        f"Boundary density ratio {ratio:.3g} exceeds "
                        f"{threshold:.1g} at t={t:.4g}"
                    )
                trajectory.boundary_warnings.append((t, ratio))
        for observer in observers:
            observer(step, t, psi)

    def propagate(
        self,
        psi0: ComplexField,
        controls,
        T: float,
        config: SolverConfig,
        observers: Iterable[Observer] = (),
        t0: float = 0.0,
        snapshot_times: Iterable[float] = (),
    ) -> tuple:
        """
        Apply N = T/dt Strang steps starting at time t0.

        Observers run at step 0 and every record_stride steps. Snapshots are
        stored for the steps nearest to each requested absolute time.

        Returns:
            (final state, Trajectory)

        Raises:
            ValidationError: If T is not an integer multiple of dt
            NumericFaultError: If a sub-step produces NaN or Inf
        """
        observers = list(observers)
        n_steps = step_count(T, config.dt)
        snapshot_steps = {}
        for ts in snapshot_times:
            k = int(round((ts - t0) / config.dt))
            if 0 <= k <= n_steps:
                snapshot_steps.setdefault(k, []).append(ts)

        trajectory = Trajectory()
        psi = psi0
        self._record(0, t0, psi, trajectory, observers, config.boundary_warn_threshold)
        if 0 in snapshot_steps:
            trajectory.snapshots[t0] = psi.copy()

        for step in range(1, n_steps + 1):
            t_prev = t0 + (step - 1) * config.dt
            psi = self.strang_step(psi, t_prev, config.dt, controls)
            t = t0 + step * config.dt
            if step % config.record_stride == 0:
                self._record(
                    step, t, psi, trajectory, observers, config.boundary_warn_threshold
                )
            if step in snapshot_steps:
                trajectory.snapshots[t] = psi.copy()

        trajectory.steps = n_steps
        logger.debug(f"Propagated {n_steps} steps from t={t0:.4g} to t={t0 + T:.4g}")
        return psi, trajectory

    # -- energies -------------------------------------------------------------

    def _kinetic_energy(self, psi: ComplexField) -> float:
        psi_hat = fft.fftn(psi.values, workers=self.workers)
        return (
            0.5
            * self.model.hbar**2
            * float(np.sum(self.grid.k_squared * np.abs(psi_hat) ** 2))
            * self.grid.dV
            / self.grid.size
        )

    def energy_functional(self, psi: ComplexField, sample: ControlSample) -> float:
        """Conservative energy (per atom mass) of psi for fixed control values."""
        rho = psi.density
        if not np.any(rho):
            return 0.0
        density_terms = (
            self.external_potential(sample) * rho
            + 0.5 * sample.g * rho**2
            + 0.5 * self.dipolar_term(psi) * rho
            + 0.4 * sample.gamma_qf * rho**2.5
        )
        return self._kinetic_energy(psi) + float(np.sum(density_terms)) * self.grid.dV

    def chemical_potential(self, psi: ComplexField, sample: ControlSample) -> float:
        """<H_GP>/N with the nonlinear terms at full weight."""
        rho = psi.density
        n = atom_number(psi)
        if n == 0:
            raise ValidationError("Chemical potential of a zero field is undefined")
        density_terms = (
            self.external_potential(sample) * rho
            + sample.g * rho**2
            + self.dipolar_term(psi) * rho
            + sample.gamma_qf * rho**2.5
        )
        return (self._kinetic_energy(psi) + float(np.sum(density_terms)) * self.grid.dV) / n

    # -- imaginary time -------------------------------------------------------

    def imaginary_time_ground_state(
        self,
        psi_init: ComplexField,
        controls,
        N_target: float,
        config: GroundStateConfig,
        t: float = 0.0,
    ) -> GroundStateResult:
        """
        Relax psi_init to the lowest-energy state at fixed atom number.

        Args:
            psi_init: Initial guess (any normalization)
            controls: Control source, sampled at the fixed time t
            N_target: Atom number enforced after every step
            config: Time step, tolerance, step limit and strides
            t: Time at which the controls are frozen

        Returns:
            GroundStateResult with the state, energy and energy history

        Raises:
            ConvergenceError: If the relative energy change per step stays above tol
            CollapseError: If the peak density runs away
        """
        sample = controls.sample(t)
        frozen = FrozenControls(sample)
        psi = normalize_to(psi_init, N_target)
        energy = self.energy_functional(psi, sample)
        history = [energy]
        peak_limit = config.collapse_density_factor * float(np.max(psi.density))
        logger.info(
            f"Imaginary-time relaxation: N={N_target:.6g}, dt={config.dt:.3g}, tol={config.tol:.1g}"
        )

        for step in range(1, config.max_steps + 1):
            psi = self.strang_step(psi, t, config.dt, frozen, imaginary=True)
            psi = normalize_to(psi, N_target)
            if config.recenter_stride and step % config.recenter_stride == 0:
                psi = normalize_to(shift_field(psi, -center_of_mass(psi)), N_target)
            if float(np.max(psi.density)) > peak_limit:
                logger.error(f"Collapse detected after {step} imaginary-time steps")
                raise CollapseError(
                    "Imaginary-time propagation collapsed",
                    detail=f"peak density exceeded {peak_limit:.3g} at step {step}",
                    energy_history=history,
                )
            if step % config.energy_stride:
                continue
            new_energy = self.energy_functional(psi, sample)
            history.append(new_energy)
            change = abs(new_energy - energy) / (
                max(abs(new_energy), np.finfo(float).tiny) * config.energy_stride
            )
            energy = new_energy
            if change < config.tol:
                mu = self.chemical_potential(psi, sample)
                logger.info(
                    f"Imaginary time converged after {step} steps: E={energy:.10g}, mu={mu:.10g}"
                )
                return GroundStateResult(
                    psi=psi,
                    energy=energy,
                    chemical_potential=mu,
                    steps=step,
                    energy_history=history,
                )

        logger.error(f"Imaginary time did not converge in {config.max_steps} steps")
        raise ConvergenceError(
            "Imaginary-time propagation did not converge",
            detail=f"{config.max_steps} steps, last energies {history[-3:]}",
            energy_history=history,
        )

    def self_bound_ground_state(
        self,
        psi_seed: ComplexField,
        model_sample: Callable[[float], ControlSample],
        seed_omega: float,
        N_target: float,
        config: GroundStateConfig,
        recenter_stride: int = 100,
    ) -> GroundStateResult:
        """
        Ground state with the trap switched off.

        A droplet is first relaxed in a weak isotropic trap of frequency
        seed_omega, then relaxed again with the trap off while the center of
        mass is moved back to the origin every recenter_stride steps.

        Args:
            model_sample: Maps a trap frequency to the ControlSample to relax in
        """
        seeded = self.imaginary_time_ground_state(
            psi_seed, FrozenControls(model_sample(seed_omega)), N_target, config
        )
        free_config = replace(config, recenter_stride=recenter_stride)
        return self.imaginary_time_ground_state(
            seeded.psi, FrozenControls(model_sample(0.0)), N_target, free_config
        )


def gaussian_state(grid: Grid3D, widths, N: float, center=(0.0, 0.0, 0.0)) -> ComplexField:
    """Gaussian wavefunction with density widths (standard deviations) and atom number N."""
    wx, wy, wz = (float(w) for w in widths)
    cx, cy, cz = (float(c) for c in center)
    X, Y, Z = grid.mesh
    values = np.exp(
        -((X - cx) ** 2) / (4 * wx**2) - (Y - cy) ** 2 / (4 * wy**2) - (Z - cz) ** 2 / (4 * wz**2)
    )
    return normalize_to(ComplexField(values.astype(np.complex128), grid), N)


def oscillator_widths(hbar: float, sample: ControlSample, floor: float) -> tuple:
    """Density widths of the non-interacting trap ground state, at least floor."""
    def width(omega: float) -> float:
        if omega <= 0:
            return floor
        return max(math.sqrt(hbar / (2.0 * omega)), floor)

    return (width(sample.omega_rho), width(sample.omega_rho), width(sample.omega_z))


def compute_initial_state(
    solver: GPESolver,
    controls,
    N_target: float,
    config: GroundStateConfig,
    width_floor: float = 0.5,
) -> GroundStateResult:
    """Trapped ground state for the controls at t = 0, from an oscillator Gaussian guess."""
    sample = controls.sample(0.0)
    widths = oscillator_widths(solver.model.hbar, sample, width_floor)
    guess = gaussian_state(solver.grid, widths, N_target)
    return solver.imaginary_time_ground_state(guess, controls, N_target, config)


def compute_target_state(
    solver: GPESolver,
    a_s: float,
    seed_omega: float,
    N_target: float,
    config: GroundStateConfig,
    seed_widths,
    recenter_stride: int = 100,
) -> GroundStateResult:
    """
    Self-bound droplet at scattering length a_s (internal units) with the trap off.

    Args:
        seed_omega: Isotropic trap frequency of the first relaxation stage
        seed_widths: Density widths of the Gaussian guess
    """
    model = solver.model
    guess = gaussian_state(solver.grid, seed_widths, N_target)
    return solver.self_bound_ground_state(
        guess,
        lambda omega: model.control_sample(a_s, omega, omega),
        seed_omega,
        N_target,
        config,
        recenter_stride=recenter_stride,
    )
