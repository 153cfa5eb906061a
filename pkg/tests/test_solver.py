"""Tests for the split-step solver and imaginary-time relaxation."""

import math
from unittest.mock import Mock

import numpy as np
import pytest

from app.exceptions import ConvergenceError, NumericFaultError, ValidationError
from app.models.constants import ControlSample, ModelParams, PolarizationAxis
from app.models.grid import ComplexField
from app.models.solver import GroundStateConfig, SolverConfig
from app.services.dipolar_kernel import precompute_truncated_kernel
from app.services.grid_service import atom_number, build_grid, center_of_mass, inner_product
from app.services.oracles import gaussian_density
from app.services.solver import (
    FrozenControls,
    GPESolver,
    compute_initial_state,
    gaussian_state,
    step_count,
)


def trap(omega: float, g: float = 0.0, omega_z: float = None) -> FrozenControls:
    omega_z = omega if omega_z is None else omega_z
    return FrozenControls(ControlSample(a_s=0.0, omega_rho=omega, omega_z=omega_z, g=g, gamma_qf=0.0))


class RampedTrap:
    """Trap whose frequency grows linearly in time."""

    def __init__(self, g: float):
        self.g = g

    def sample(self, t: float) -> ControlSample:
        omega = 1.0 + 0.5 * t
        return ControlSample(a_s=0.0, omega_rho=omega, omega_z=omega, g=self.g, gamma_qf=0.0)


@pytest.fixture
def unit_model():
    """hbar/m = 1 without dipoles or losses."""
    return ModelParams(hbar=1.0, g_dd=0.0, a_dd=0.0, loss_L3=0.0, N0=1.0)


@pytest.fixture
def small_solver(unit_model):
    return GPESolver(unit_model, build_grid(8.0, 8.0, 8.0, 16, 16, 16))


def test_step_count():
    """Test the step count for a horizon that is a multiple of dt."""
    assert step_count(2.0, 0.005) == 400
    assert step_count(0.0, 0.005) == 0


@pytest.mark.parametrize("T, dt", [(1.0, 0.3), (-1.0, 0.1)])
def test_step_count_rejects_bad_horizon(T, dt):
    """Test that a non-multiple or negative horizon is rejected."""
    with pytest.raises(ValidationError, match="Horizon"):
        step_count(T, dt)


def test_zero_horizon_returns_initial_state(small_solver):
    """Test that T = 0 performs no steps."""
    psi0 = gaussian_state(small_solver.grid, (0.7, 0.7, 0.7), 1.0)
    psi, trajectory = small_solver.propagate(psi0, trap(1.0), 0.0, SolverConfig(dt=0.01))
    assert np.array_equal(psi.values, psi0.values)
    assert trajectory.steps == 0
    assert trajectory.times == [0.0]


def test_propagate_calls_observers(small_solver):
    """Test step count and observer calls with record_stride."""
    psi0 = gaussian_state(small_solver.grid, (0.7, 0.7, 0.7), 1.0)
    observer = Mock()
    _, trajectory = small_solver.propagate(
        psi0, trap(1.0), 2.0, SolverConfig(dt=0.005, record_stride=100), observers=[observer]
    )
    assert trajectory.steps == 400
    assert observer.call_count == 5
    steps = [c.args[0] for c in observer.call_args_list]
    assert steps == [0, 100, 200, 300, 400]
    assert trajectory.time_array[-1] == pytest.approx(2.0)


def test_snapshots_are_kept(small_solver):
    """Test that snapshots are stored at the requested times."""
    psi0 = gaussian_state(small_solver.grid, (0.7, 0.7, 0.7), 1.0)
    _, trajectory = small_solver.propagate(
        psi0, trap(1.0), 0.1, SolverConfig(dt=0.01), snapshot_times=[0.0, 0.05, 0.5]
    )
    assert sorted(trajectory.snapshots) == pytest.approx([0.0, 0.05])


def test_norm_is_conserved_without_loss(small_solver):
    """Test that the atom number is conserved by real-time steps without losses."""
    psi0 = gaussian_state(small_solver.grid, (0.6, 0.7, 0.8), 1.0, center=(0.3, 0.0, -0.2))
    psi, _ = small_solver.propagate(psi0, trap(1.5, g=5.0), 1.0, SolverConfig(dt=0.01))
    assert atom_number(psi) == pytest.approx(1.0, rel=1e-12)


def test_norm_is_conserved_with_dipoles():
    """Test that 400 real-time steps with the dipolar term keep the atom number."""
    model = ModelParams(hbar=1.0, g_dd=0.5, a_dd=0.0, loss_L3=0.0, N0=1.0)
    grid = build_grid(8.0, 8.0, 8.0, 16, 16, 16)
    solver = GPESolver(model, grid, kernel=precompute_truncated_kernel(grid, model.polarization))
    psi0 = gaussian_state(grid, (0.6, 0.7, 0.9), 1.0, center=(0.2, -0.1, 0.0))
    initial = atom_number(psi0)
    psi, trajectory = solver.propagate(psi0, trap(1.5, g=2.0), 2.0, SolverConfig(dt=0.005))
    assert trajectory.steps == 400
    assert abs(atom_number(psi) - initial) / initial < 1e-11


def test_loss_reduces_atom_number():
    """Test that three-body loss decreases the atom number monotonically."""
    model = ModelParams(hbar=1.0, g_dd=0.0, a_dd=0.0, loss_L3=50.0, N0=1.0)
    solver = GPESolver(model, build_grid(8.0, 8.0, 8.0, 16, 16, 16))
    psi0 = gaussian_state(solver.grid, (0.5, 0.5, 0.5), 1.0)
    counts = []
    solver.propagate(
        psi0,
        trap(1.0),
        0.5,
        SolverConfig(dt=0.01),
        observers=[lambda step, t, psi: counts.append(atom_number(psi))],
    )
    assert counts[-1] < counts[0]
    assert np.all(np.diff(counts) < 0)


def test_loss_potential_is_absorbing():
    """Test that the loss term only adds a non-positive imaginary part."""
    model = ModelParams(hbar=1.0, g_dd=0.0, a_dd=0.0, loss_L3=2.0, N0=1.0)
    solver = GPESolver(model, build_grid(8.0, 8.0, 8.0, 16, 16, 16))
    psi = gaussian_state(solver.grid, (0.5, 0.5, 0.5), 1.0)
    potential = solver.effective_potential(psi, 0.0, trap(1.0))
    assert np.all(potential.imag <= 0.0)
    expected = -0.5 * 2.0 * psi.density**2
    assert np.allclose(potential.imag, expected, rtol=1e-14, atol=0.0)


def test_nan_is_reported_with_substep(small_solver):
    """Test that a NaN in the first potential half-step raises a numeric fault."""
    psi0 = gaussian_state(small_solver.grid, (0.7, 0.7, 0.7), 1.0)
    with pytest.raises(NumericFaultError) as error:
        small_solver.propagate(psi0, trap(1.0, g=float("nan")), 0.1, SolverConfig(dt=0.01))
    assert error.value.substep == "first potential half-step"


def test_kernel_must_match_grid(unit_model):
    """Test that a kernel for another grid is rejected."""
    kernel = precompute_truncated_kernel(build_grid(1.0, 1.0, 1.0, 8, 8, 8))
    with pytest.raises(ValidationError, match="Kernel grid"):
        GPESolver(unit_model, build_grid(2.0, 2.0, 2.0, 8, 8, 8), kernel=kernel)


def test_free_dispersion_of_gaussian(unit_model):
    """Test the width of a freely expanding Gaussian against the closed form."""
    grid = build_grid(20.0, 1.0, 1.0, 64, 8, 8)
    solver = GPESolver(unit_model, grid)
    sigma0 = 0.5
    X, _, _ = grid.mesh
    values = np.broadcast_to(np.exp(-(X**2) / (4 * sigma0**2)), grid.shape).astype(np.complex128)
    psi0 = ComplexField(values, grid)

    psi, _ = solver.propagate(psi0, trap(0.0), 1.0, SolverConfig(dt=0.01))
    rho = psi.density
    width = math.sqrt(float(np.sum(X**2 * rho) / np.sum(rho)))
    expected = sigma0 * math.sqrt(1 + (1.0 / (2 * sigma0**2)) ** 2)
    assert width == pytest.approx(expected, rel=1e-9)


def test_coherent_state_returns_after_one_period(unit_model):
    """Test that a displaced ground state of a harmonic trap returns after one period."""
    omega = 2 * math.pi
    grid = build_grid(8.0, 6.0, 6.0, 64, 48, 48)
    solver = GPESolver(unit_model, grid)
    w = math.sqrt(1.0 / (2 * omega))
    psi0 = gaussian_state(grid, (w, w, w), 1.0, center=(1.0, 0.0, 0.0))

    psi, _ = solver.propagate(psi0, trap(omega), 1.0, SolverConfig(dt=1 / 400))
    assert abs(inner_product(psi0, psi)) == pytest.approx(1.0, abs=1e-6)
    assert center_of_mass(psi) == pytest.approx([1.0, 0.0, 0.0], abs=1e-3)


def test_non_interacting_ground_state_energy(unit_model):
    """Test E = mu = 3/2 hbar omega for the isotropic oscillator."""
    grid = build_grid(12.0, 12.0, 12.0, 32, 32, 32)
    solver = GPESolver(unit_model, grid)
    config = GroundStateConfig(dt=0.005, tol=1e-12, max_steps=20_000, energy_stride=10)
    result = solver.imaginary_time_ground_state(
        gaussian_state(grid, (0.6, 0.6, 0.6), 1.0), trap(1.0), 1.0, config
    )
    assert result.energy == pytest.approx(1.5, rel=1e-8)
    assert result.chemical_potential == pytest.approx(1.5, rel=1e-8)
    assert atom_number(result.psi) == pytest.approx(1.0, rel=1e-12)


def test_ground_state_is_stationary(unit_model):
    """Test that the relaxed state barely changes under real-time propagation."""
    grid = build_grid(12.0, 12.0, 12.0, 32, 32, 32)
    solver = GPESolver(unit_model, grid)
    config = GroundStateConfig(dt=0.005, tol=1e-12, max_steps=20_000, energy_stride=10)
    controls = trap(1.0, g=3.0)
    ground = solver.imaginary_time_ground_state(
        gaussian_state(grid, (0.7, 0.7, 0.7), 1.0), controls, 1.0, config
    ).psi

    psi, _ = solver.propagate(ground, controls, 1.0, SolverConfig(dt=0.005))
    change = np.max(np.abs(psi.density - ground.density))
    assert change < 1e-4 * np.max(ground.density)


def test_thomas_fermi_chemical_potential(unit_model):
    """Test mu against the Thomas-Fermi value in the strongly repulsive regime."""
    mu_tf = 30.0
    radius = math.sqrt(2 * mu_tf)
    g = 8 * math.pi / 15 * mu_tf * radius**3
    grid = build_grid(24.0, 24.0, 24.0, 48, 48, 48)
    solver = GPESolver(unit_model, grid)
    config = GroundStateConfig(dt=0.01, tol=1e-9, max_steps=20_000, energy_stride=10)
    result = solver.imaginary_time_ground_state(
        gaussian_state(grid, (3.5, 3.5, 3.5), 1.0), trap(1.0, g=g), 1.0, config
    )
    assert result.chemical_potential == pytest.approx(mu_tf, rel=1e-2)


def test_imaginary_time_energy_decreases(small_solver):
    """Test that the energy history is non-increasing."""
    config = GroundStateConfig(dt=0.01, tol=1e-10, max_steps=5_000, energy_stride=1)
    result = small_solver.imaginary_time_ground_state(
        gaussian_state(small_solver.grid, (1.2, 0.5, 0.9), 1.0), trap(1.0, g=5.0), 1.0, config
    )
    history = np.array(result.energy_history)
    assert np.all(np.diff(history) <= 1e-7 * np.abs(history[1:]))
    assert history[-1] < history[0]


def test_imaginary_time_reports_non_convergence(small_solver):
    """Test that running out of steps raises with the energy history attached."""
    config = GroundStateConfig(dt=0.01, tol=1e-14, max_steps=5)
    with pytest.raises(ConvergenceError) as error:
        small_solver.imaginary_time_ground_state(
            gaussian_state(small_solver.grid, (1.2, 0.5, 0.9), 1.0), trap(1.0), 1.0, config
        )
    assert len(error.value.energy_history) == 6


def test_initial_state_from_controls(unit_model):
    """Test the trapped initial state helper for a non-interacting model."""
    grid = build_grid(12.0, 12.0, 12.0, 32, 32, 32)
    solver = GPESolver(unit_model, grid)
    config = GroundStateConfig(dt=0.005, tol=1e-12, max_steps=20_000, energy_stride=10)
    result = compute_initial_state(solver, trap(1.0), 2.0, config)
    assert atom_number(result.psi) == pytest.approx(2.0, rel=1e-12)
    assert result.energy == pytest.approx(3.0, rel=1e-8)


def test_second_order_self_convergence(unit_model):
    """Test that halving dt reduces the time-stepping error fourfold."""
    solver = GPESolver(unit_model, build_grid(8.0, 8.0, 8.0, 16, 16, 16))
    psi0 = gaussian_state(solver.grid, (0.7, 0.7, 0.7), 1.0, center=(0.3, 0.0, 0.0))
    finals = [
        solver.propagate(psi0, RampedTrap(g=10.0), 0.5, SolverConfig(dt=dt))[0].values
        for dt in (0.01, 0.005, 0.0025)
    ]
    coarse = np.linalg.norm(finals[0] - finals[1])
    fine = np.linalg.norm(finals[1] - finals[2])
    assert math.log2(coarse / fine) == pytest.approx(2.0, abs=0.3)


def test_isotropic_density_has_no_dipolar_energy():
    """Test that the dipolar energy of a spherically symmetric density vanishes."""
    axis = PolarizationAxis((0.0, 0.0, 1.0))
    model = ModelParams(hbar=1.0, g_dd=1.0, a_dd=1.0, loss_L3=0.0, N0=1.0, polarization=axis)
    grid = build_grid(1.0, 1.0, 1.0, 32, 32, 32)
    solver = GPESolver(model, grid, kernel=precompute_truncated_kernel(grid, axis))
    rho = gaussian_density(0.07, 1.0, (0.0, 0.0, 0.0), grid)
    psi = ComplexField(np.sqrt(rho).astype(np.complex128), grid)

    dipolar_energy = 0.5 * float(np.sum(solver.dipolar_term(psi) * rho)) * grid.dV
    contact_scale = float(np.sum(rho**2)) * grid.dV
    assert abs(dipolar_energy) < 1e-8 * contact_scale


def test_dipolar_term_is_skipped_without_kernel(small_solver):
    """Test that no kernel means no dipolar potential."""
    psi = gaussian_state(small_solver.grid, (0.7, 0.7, 0.7), 1.0)
    assert np.all(small_solver.dipolar_term(psi) == 0.0)
