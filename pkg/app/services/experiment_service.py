"""Experiment recipes behind the command-line subcommands."""

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from app.config import settings
from app.exceptions import ConvergenceError, ValidationError
from app.models.bspline import BSplineCurve, KnotVector
from app.models.constants import ModelParams, PolarizationAxis, SpeciesParams, UnitSystem
from app.models.control import ControlBounds, ControlEndpoints
from app.models.grid import ComplexField, Grid3D
from app.models.kernel import TruncatedKernelSpectrum
from app.models.solver import GroundStateConfig, SolverConfig
from app.repositories.field_repository import FieldRepository
from app.repositories.kernel_cache_repository import KernelCacheRepository
from app.repositories.run_repository import RunRepository
from app.schemas.controls_file import ControlsDocument, CurveDocument
from app.schemas.manifest import RunManifest, Timings
from app.schemas.run_config import RunConfig
from app.services.control_service import (
    ControlSet,
    PerturbedControls,
    export_trajectories,
    linear_controls,
    random_initial_coefficients,
    sum_of_sines_controls,
)
from app.services.dipolar_kernel import (
    choose_oversampling,
    dipolar_potential,
    dipolar_potential_naive,
    precompute_truncated_kernel,
)
from app.services.grid_service import atom_number, build_grid
from app.services.observables import (
    CylinderRegion,
    ObservableRecorder,
    density_slice,
    half_max_extents,
    overlap_with_target,
    peak_density,
    relative_fluctuation,
)
from app.services.optimizer_service import (
    SUM_OF_SINES_LEVEL,
    CostEvaluator,
    ProblemSpec,
    direct_optimize,
    multilevel_optimize,
    sum_of_sines_optimize,
)
from app.services.oracles import gaussian_density, gaussian_dipolar_reference
from app.services.solver import GPESolver, compute_initial_state, compute_target_state

logger = logging.getLogger(__name__)

NOISE_SCALE_NOTE = "per-trajectory maximum of each perturbed control on [0, T]"

# (name, box lengths, Gaussian widths)
BENCH_CASES = (
    ("unit", (1.0, 1.0, 1.0), (0.06, 0.06, 0.09)),
    ("zeta2", (12.0, 12.0, 24.0), (0.9, 0.9, 1.8)),
)
BENCH_POINT_COUNTS = (16, 24, 32, 48, 64)
SLICE_PLANES = (("y=0", "xz"), ("z=0", "xy"))


@dataclass
class ExperimentContext:
    """Physical model and discretization resolved from a RunConfig.

    The kernel is attached by load_kernel, after the run manifest is on disk.
    """

    config: RunConfig
    fine: bool
    units: UnitSystem
    model: ModelParams
    grid: Grid3D
    endpoints: ControlEndpoints
    bounds: ControlBounds
    T: float
    hold: float
    solver_config: SolverConfig
    groundstate_config: GroundStateConfig
    kernel: Optional[TruncatedKernelSpectrum] = None
    kernel_hash: Optional[str] = None

    def ms(self, value_ms: float) -> float:
        return self.units.to_internal(value_ms * 1e-3, time=1)

    def to_ms(self, value: float) -> float:
        return self.units.to_si(value, time=1) * 1e3

    def load_kernel(self) -> TruncatedKernelSpectrum:
        """Read the kernel from the kernel cache, or precompute and store it."""
        if self.kernel is None:
            grid, polarization = self.grid, self.model.polarization
            self.kernel, self.kernel_hash = KernelCacheRepository().get_or_compute(
                grid,
                polarization,
                lambda: precompute_truncated_kernel(grid, polarization),
            )
        return self.kernel

    def solver(self, model: ModelParams = None) -> GPESolver:
        return GPESolver(
            model or self.model,
            self.grid,
            self.load_kernel(),
            dipolar_derivative=self.config.grid.dipolar_derivative,
        )

    def linear(self) -> ControlSet:
        return linear_controls(self.endpoints, self.T, self.model)


@dataclass
class StageClock:
    """Wall times of named stages."""

    started: float = field(default_factory=time.perf_counter)
    stages: dict = field(default_factory=dict)
    _mark: float = field(default_factory=time.perf_counter)

    def lap(self, name: str):
        now = time.perf_counter()
        self.stages[name] = now - self._mark
        self._mark = now

    def timings(self, manifest_hash: str, kernel_cache_hash: Optional[str] = None) -> Timings:
        return Timings(
            manifest_hash=manifest_hash,
            kernel_cache_hash=kernel_cache_hash,
            stages_s=self.stages,
            total_s=time.perf_counter() - self.started,
        )


def build_context(config: RunConfig, fine: bool = False) -> ExperimentContext:
    """
    Resolve units and grid for a run.

    The kernel is not touched here; call ExperimentContext.load_kernel once
    the manifest is written.
    """
    s = config.species
    species = SpeciesParams.from_lab_units(s.mass_u, s.magnetic_moment_muB, s.L3_m6_per_s)
    units = UnitSystem.for_species(species)
    model = ModelParams.from_species(species, N0=s.N0, polarization=PolarizationAxis(tuple(s.polarization)))

    g = config.grid
    lengths = [units.to_internal(L * 1e-6, length=1) for L in (g.Lx_um, g.Ly_um, g.Lz_um)]
    grid = build_grid(*lengths, *config.grid_shape(fine))

    def ms(value_ms):
        return units.to_internal(value_ms * 1e-3, time=1)

    gs = config.groundstate
    context = ExperimentContext(
        config=config,
        fine=fine,
        units=units,
        model=model,
        grid=grid,
        endpoints=config.endpoints(),
        bounds=config.bounds(),
        T=ms(config.solver.T_ms),
        hold=ms(config.solver.hold_ms),
        solver_config=SolverConfig(
            dt=ms(config.dt_ms(fine)),
            record_stride=config.solver.record_stride,
            boundary_warn_threshold=config.solver.boundary_warn_threshold,
        ),
        groundstate_config=GroundStateConfig(
            dt=ms(gs.dt_ms),
            tol=gs.tol,
            max_steps=gs.max_steps,
            energy_stride=gs.energy_stride,
        ),
    )
    logger.info(
        f"Run context: grid {grid.shape} on {grid.lengths} um, dt={context.solver_config.dt:.4g} ms, "
        f"T={context.T:.4g} ms, N0={model.N0:.6g}"
    )
    return context


def _manifest(
    command: str,
    context: Optional[ExperimentContext],
    config: RunConfig,
    seeds: dict = None,
    inputs: dict = None,
    notes: dict = None,
    fine: bool = False,
) -> RunManifest:
    grid = {}
    if context is not None:
        grid = {
            "shape": list(context.grid.shape),
            "box_um": list(context.grid.lengths),
            "oversampling": choose_oversampling(context.grid),
        }
    return RunManifest(
        command=command,
        config=config.model_dump(mode="json"),
        seeds=seeds or {},
        code_version=settings.code_version,
        fine=fine,
        grid=grid,
        endpoints=asdict(context.endpoints) if context else {},
        bounds=asdict(context.bounds) if context else {},
        inputs={key: str(value) for key, value in (inputs or {}).items()},
        notes=notes or {},
    )


def _load_states(context: ExperimentContext, states_dir: Optional[Path], out_dir: Path) -> tuple:
    """(psi0, psi_d, states directory) from a states index."""
    directory = Path(states_dir or out_dir)
    index = RunRepository(directory).read_states_index()
    fields = FieldRepository(directory)
    psi0 = fields.load(index["psi0"], context.grid)
    psi_d = fields.load(index["psi_d"], context.grid)
    return psi0, psi_d, directory


def controls_document(
    controls: ControlSet,
    coefficients,
    level: int,
    T_ms: float,
    normalized_cost: float = None,
    time_to_ms: float = 1.0,
) -> ControlsDocument:
    """Controls file content; knot times are written in ms."""
    if level == SUM_OF_SINES_LEVEL:
        return ControlsDocument(
            parameterization="sum-of-sines",
            T_ms=T_ms,
            coefficients=list(map(float, coefficients)),
            normalized_cost=normalized_cost,
        )
    return ControlsDocument(
        parameterization="bspline",
        T_ms=T_ms,
        level=level,
        coefficients=list(map(float, coefficients)),
        curves=[
            CurveDocument(
                degree=curve.degree,
                knots=[k * time_to_ms for k in curve.knots.knots],
                coeffs=curve.coeffs.tolist(),
            )
            for curve in controls.curves
        ],
        normalized_cost=normalized_cost,
    )


def load_controls(context: ExperimentContext, controls_arg: Optional[str]) -> tuple:
    """
    Control set named on the command line: "linear" (or nothing) or a controls file.

    Returns:
        (ControlSet, source description)

    Raises:
        ValidationError: If the controls were optimized for another horizon
    """
    if controls_arg in (None, "linear"):
        return context.linear(), "linear"
    document = RunRepository.read_controls(controls_arg)
    if abs(document.T_ms - context.config.solver.T_ms) > 1e-12 * max(1.0, document.T_ms):
        raise ValidationError(
            "Controls were built for a different horizon",
            detail=f"file T={document.T_ms} ms, config T={context.config.solver.T_ms} ms",
        )
    if document.parameterization == "sum-of-sines":
        controls = sum_of_sines_controls(
            np.asarray(document.coefficients), context.endpoints, context.T, context.model
        )
    else:
        curves = tuple(
            BSplineCurve(
                KnotVector(np.asarray(c.knots) * context.ms(1.0), c.degree), np.asarray(c.coeffs)
            )
            for c in document.curves
        )
        controls = ControlSet(curves=curves, endpoints=context.endpoints, T=context.T, model=context.model)
    return controls, str(controls_arg)


def _propagate_with_observables(
    context: ExperimentContext,
    solver: GPESolver,
    psi0: ComplexField,
    controls,
    fields: FieldRepository,
    manifest_hash: str,
) -> tuple:
    """Propagate over [0, T + hold]; returns (psi at T, ObservableSeries, slice paths)."""
    snapshot_times = [context.ms(t) for t in context.config.snapshot_times()]
    recorder = ObservableRecorder(CylinderRegion())
    _, trajectory = solver.propagate(
        psi0,
        controls,
        context.T + context.hold,
        context.solver_config,
        observers=[recorder],
        snapshot_times=sorted(set(snapshot_times + [context.T])),
    )
    slices = []
    for t, psi in sorted(trajectory.snapshots.items()):
        t_ms = context.to_ms(t)
        for plane, tag in SLICE_PLANES:
            name = f"slice_{tag}_{t_ms:.4f}ms_{manifest_hash}"
            slices.append(fields.save_slice(name, density_slice(psi, plane, time=t_ms)))
    psi_T = _snapshot_near(trajectory.snapshots, context.T)
    return psi_T, recorder.series, slices


def _snapshot_near(snapshots: dict, t: float) -> ComplexField:
    if not snapshots:
        raise ValidationError("No snapshots were recorded")
    nearest = min(snapshots, key=lambda s: abs(s - t))
    return snapshots[nearest]


def _post_horizon_fluctuation(frame: pd.DataFrame, T_ms: float) -> float:
    after = frame.loc[frame["t_ms"] > T_ms + 1e-9, "peak_density_um3"]
    return relative_fluctuation(after) if len(after) else 0.0


# -- commands -------------------------------------------------------------------


def run_groundstate(config: RunConfig, out_dir, fine: bool = False) -> dict:
    """
    Compute the initial trapped state psi0 and the self-bound target psi_d.

    Returns:
        Summary with energies, chemical potentials, peak densities and file paths

    Raises:
        ConvergenceError: After the energy history has been written next to the manifest
    """
    clock = StageClock()
    context = build_context(config, fine)
    clock.lap("setup")
    run = RunRepository(out_dir)
    manifest_hash = run.write_manifest(_manifest("groundstate", context, config, fine=fine))
    context.load_kernel()
    clock.lap("kernel")
    solver = context.solver()
    gs = config.groundstate

    try:
        initial = compute_initial_state(solver, context.linear(), context.model.N0, context.groundstate_config)
        clock.lap("initial_state")
        target = compute_target_state(
            solver,
            context.model.a_s_from_a0(context.endpoints.a_s_f),
            context.model.omega_from_si(2 * math.pi * gs.seed_trap_Hz),
            context.model.N0,
            context.groundstate_config,
            seed_widths=[context.units.to_internal(w * 1e-6, length=1) for w in gs.droplet_seed_widths_um],
            recenter_stride=gs.recenter_stride,
        )
        clock.lap("target_state")
    except ConvergenceError as e:
        history = pd.DataFrame({"step": np.arange(len(e.energy_history)), "energy": e.energy_history})
        run.write_table(history, "energy_history", manifest_hash)
        raise

    fields = FieldRepository(out_dir)
    names = {"psi0": f"psi0_{manifest_hash}", "psi_d": f"psi_d_{manifest_hash}"}
    fields.save(names["psi0"], initial.psi, label="initial trapped ground state")
    fields.save(names["psi_d"], target.psi, label="self-bound droplet")
    run.write_states_index(names, manifest_hash)
    run.write_timings(clock.timings(manifest_hash, context.kernel_hash))

    summary = {
        "manifest_hash": manifest_hash,
        "psi0": {
            "energy": initial.energy,
            "chemical_potential": initial.chemical_potential,
            "peak_density": peak_density(initial.psi),
            "steps": initial.steps,
        },
        "psi_d": {
            "energy": target.energy,
            "chemical_potential": target.chemical_potential,
            "peak_density": peak_density(target.psi),
            "steps": target.steps,
        },
    }
    logger.info(
        f"Ground states stored: peak density psi0 {summary['psi0']['peak_density']:.6g}, "
        f"psi_d {summary['psi_d']['peak_density']:.6g} um^-3"
    )
    return summary


def run_propagate(
    config: RunConfig,
    out_dir,
    controls: Optional[str] = None,
    states_dir=None,
    fine: bool = False,
) -> dict:
    """Propagate psi0 under the given controls over [0, T] and the free hold."""
    clock = StageClock()
    context = build_context(config, fine)
    control_set, source = load_controls(context, controls)
    run = RunRepository(out_dir)
    psi0, psi_d, directory = _load_states(context, states_dir, Path(out_dir))
    manifest_hash = run.write_manifest(
        _manifest("propagate", context, config, inputs={"controls": source, "states": directory}, fine=fine)
    )
    clock.lap("setup")
    context.load_kernel()
    clock.lap("kernel")

    fields = FieldRepository(out_dir)
    psi_T, series, slices = _propagate_with_observables(
        context, context.solver(), psi0, control_set, fields, manifest_hash
    )
    clock.lap("propagation")

    frame = series.to_frame(time_to_ms=context.to_ms(1.0))
    run.write_table(frame, "series", manifest_hash)
    times = context.solver_config.dt * np.arange(int(round(context.T / context.solver_config.dt)) + 1)
    run.write_table(export_trajectories(control_set, times), "control_trajectories", manifest_hash)
    cost = (atom_number(psi_d) - overlap_with_target(psi_T, psi_d)) ** 2
    fluctuation = _post_horizon_fluctuation(frame, config.solver.T_ms)
    width_x, width_z = half_max_extents(density_slice(psi_T, "y=0"))
    run.write_timings(clock.timings(manifest_hash, context.kernel_hash))
    logger.info(f"Cost at T: {cost:.6g}; post-T peak-density fluctuation {fluctuation:.3%}")
    return {
        "manifest_hash": manifest_hash,
        "cost": cost,
        "post_T_fluctuation": fluctuation,
        "half_max_extent_um": {"x": width_x, "z": width_z},
        "series_length": len(frame),
        "slices": [str(path) for path in slices],
    }


def run_optimize(
    config: RunConfig,
    out_dir,
    mode: Optional[str] = None,
    seed: Optional[int] = None,
    states_dir=None,
    fine: bool = False,
) -> dict:
    """Optimize the controls with the multilevel, direct or sum-of-sines strategy."""
    clock = StageClock()
    mode = mode or config.optimizer.mode
    if mode not in ("multilevel", "direct-level-4", "sum-of-sines"):
        raise ValidationError("Unknown optimization mode", detail=mode)
    opt_config = replace(
        config.optimizer_config(seed),
        algorithm="nelder-mead-penalty" if mode == "sum-of-sines" else "projected-quasi-newton",
    )
    context = build_context(config, fine)
    run = RunRepository(out_dir)
    psi0, psi_d, directory = _load_states(context, states_dir, Path(out_dir))
    manifest_hash = run.write_manifest(
        _manifest(
            "optimize",
            context,
            config,
            seeds={"optimizer": opt_config.seed},
            inputs={"states": directory, "mode": mode},
            fine=fine,
        )
    )
    clock.lap("setup")
    context.load_kernel()
    clock.lap("kernel")

    problem = ProblemSpec(
        model=context.model,
        grid=context.grid,
        kernel=context.kernel,
        psi0=psi0,
        psi_d=psi_d,
        T=context.T,
        solver_config=replace(context.solver_config, record_stride=int(round(context.T / context.solver_config.dt))),
        endpoints=context.endpoints,
        bounds=context.bounds,
        dipolar_derivative=config.grid.dipolar_derivative,
    )
    evaluator = CostEvaluator(problem, opt_config.eval_budget)
    if mode == "multilevel":
        c0 = None
        if config.optimizer.random_start:
            c0 = random_initial_coefficients(
                opt_config.levels[0], context.bounds, context.endpoints, opt_config.seed, T=context.T
            )[0]
        coefficients, controls, history = multilevel_optimize(evaluator, opt_config, c0=c0)
    elif mode == "direct-level-4":
        coefficients, controls, history = direct_optimize(evaluator, opt_config, level=4)
    else:
        coefficients, controls, history = sum_of_sines_optimize(evaluator, opt_config)
    clock.lap("optimization")

    best = history.best_record()
    normalized = best.cost / history.normalization
    run.write_history(history.to_frame(), manifest_hash)
    run.write_controls(
        controls_document(
            controls,
            coefficients,
            best.level,
            config.solver.T_ms,
            normalized,
            time_to_ms=context.to_ms(1.0),
        ),
        manifest_hash,
    )
    times = context.solver_config.dt * np.arange(int(round(context.T / context.solver_config.dt)) + 1)
    run.write_table(export_trajectories(controls, times), "control_trajectories", manifest_hash)
    run.write_timings(clock.timings(manifest_hash, context.kernel_hash))
    logger.info(
        f"Optimization ({mode}) finished after {len(history)} evaluations: "
        f"J/J_linear = {normalized:.6g}"
    )
    return {
        "manifest_hash": manifest_hash,
        "mode": mode,
        "evaluations": len(history),
        "J_linear": history.normalization,
        "best_normalized_cost": normalized,
        "controls_file": str(run.path("controls", manifest_hash, "json")),
    }


def _bench_error(reference: np.ndarray, values: np.ndarray) -> float:
    return float(np.max(np.abs(values - reference)) / np.max(np.abs(reference)))


def kernel_bench_frame(point_counts=BENCH_POINT_COUNTS, cases=BENCH_CASES) -> pd.DataFrame:
    """
    Truncated-kernel versus naive-kernel errors of the dipolar potential of Gaussians.

    Errors are measured on the grid lines through the origin along x and z,
    relative to the largest magnitude of the reference there.
    """
    n = PolarizationAxis()
    rows = []
    for name, lengths, sigma in cases:
        for J in point_counts:
            grid = build_grid(*lengths, J, J, J)
            rho = gaussian_density(sigma, 1.0, (0.0, 0.0, 0.0), grid)
            psi = ComplexField(np.sqrt(rho).astype(np.complex128), grid)
            ix, iy, iz = grid.origin_index()
            probes = np.concatenate(
                [
                    np.column_stack([grid.x, np.full(J, grid.y[iy]), np.full(J, grid.z[iz])]),
                    np.column_stack([np.full(J, grid.x[ix]), np.full(J, grid.y[iy]), grid.z]),
                ]
            )
            reference = gaussian_dipolar_reference(sigma, 1.0, (0.0, 0.0, 0.0), n, 1.0, probes)

            kernel = precompute_truncated_kernel(grid, n)
            truncated = dipolar_potential(psi, kernel, n, 1.0)
            naive = dipolar_potential_naive(psi, n, 1.0)
            for method, phi in (("truncated", truncated), ("naive", naive)):
                values = np.concatenate([phi[:, iy, iz], phi[ix, iy, :]])
                rows.append(
                    {
                        "box": name,
                        "J": J,
                        "oversampling": kernel.oversampling,
                        "method": method,
                        "max_rel_error": _bench_error(reference, values),
                    }
                )
            logger.info(f"Kernel bench {name} J={J}: {rows[-2]['max_rel_error']:.3g} (truncated), "
                        f"{rows[-1]['max_rel_error']:.3g} (naive)")
    return pd.DataFrame(rows, columns=["box", "J", "oversampling", "method", "max_rel_error"])


def convergence_slope(frame: pd.DataFrame, box: str, method: str) -> float:
    """Least-squares slope of log(error) against log(J)."""
    rows = frame[(frame["box"] == box) & (frame["method"] == method)]
    slope, _ = np.polyfit(np.log(rows["J"]), np.log(rows["max_rel_error"]), 1)
    return float(slope)


def run_kernel_bench(config: RunConfig, out_dir, point_counts=BENCH_POINT_COUNTS) -> dict:
    """Sweep grid sizes for the Gaussian oracles and write the error table."""
    clock = StageClock()
    run = RunRepository(out_dir)
    manifest_hash = run.write_manifest(
        _manifest("kernel-bench", None, config, notes={"point_counts": str(list(point_counts))})
    )
    frame = kernel_bench_frame(point_counts)
    clock.lap("bench")
    run.write_table(frame, "kernel_bench", manifest_hash)
    run.write_timings(clock.timings(manifest_hash))
    slopes = {box: convergence_slope(frame, box, "naive") for box, _, _ in BENCH_CASES}
    for box, slope in slopes.items():
        logger.info(f"Naive kernel convergence slope on the {box} box: {slope:.2f}")
    return {"manifest_hash": manifest_hash, "naive_slopes": slopes, "rows": len(frame)}


def run_perturb(
    config: RunConfig,
    out_dir,
    controls: Optional[str] = None,
    states_dir=None,
    seed: Optional[int] = None,
    fine: bool = False,
) -> dict:
    """
    Robustness run: fewer atoms, scaled endpoints and noisy controls.

    psi0 is recomputed at the perturbed atom number in the trap of the
    noise-free systematic controls at t = 0. With unit factors, zero noise
    and the nominal atom number the stored psi0 is used unchanged.
    """
    clock = StageClock()
    p = config.perturbation
    seed = p.seed if seed is None else seed
    context = build_context(config, fine)
    base, source = load_controls(context, controls)
    run = RunRepository(out_dir)
    psi0, psi_d, directory = _load_states(context, states_dir, Path(out_dir))
    manifest_hash = run.write_manifest(
        _manifest(
            "perturb",
            context,
            config,
            seeds={"noise": seed},
            inputs={"controls": source, "states": directory},
            notes={"noise_scale": NOISE_SCALE_NOTE},
            fine=fine,
        )
    )
    clock.lap("setup")
    context.load_kernel()
    clock.lap("kernel")

    nominal = ProblemSpec(
        model=context.model,
        grid=context.grid,
        kernel=context.kernel,
        psi0=psi0,
        psi_d=psi_d,
        T=context.T,
        solver_config=context.solver_config,
        endpoints=context.endpoints,
        bounds=context.bounds,
        dipolar_derivative=config.grid.dipolar_derivative,
    )
    J_linear = CostEvaluator(nominal, budget=1).compute_normalization()
    clock.lap("normalization")

    degenerate = (
        all(f == 1.0 for f in p.endpoint_factors)
        and p.noise_sigma == 0.0
        and p.N0 == context.model.N0
    )
    if degenerate:
        perturbed, start, solver = base, psi0, context.solver()
    else:
        perturbed = PerturbedControls(
            base,
            factors=tuple(p.endpoint_factors),
            noise_sigma=p.noise_sigma,
            seed=seed,
            dt=context.solver_config.dt,
        )
        solver = context.solver(context.model.with_N0(p.N0))
        start = compute_initial_state(solver, perturbed.systematic, p.N0, context.groundstate_config).psi
    clock.lap("initial_state")

    fields = FieldRepository(out_dir)
    psi_T, series, _ = _propagate_with_observables(context, solver, start, perturbed, fields, manifest_hash)
    clock.lap("propagation")

    frame = series.to_frame(time_to_ms=context.to_ms(1.0))
    run.write_table(frame, "series", manifest_hash)
    times = context.solver_config.dt * np.arange(int(round(context.T / context.solver_config.dt)) + 1)
    run.write_table(export_trajectories(perturbed, times), "control_trajectories", manifest_hash)
    cost = (atom_number(psi_d) - overlap_with_target(psi_T, psi_d)) ** 2
    result = {
        "cost": cost,
        "J_linear": J_linear,
        "normalized_cost": cost / J_linear,
        "post_T_fluctuation": _post_horizon_fluctuation(frame, config.solver.T_ms),
        "N0": p.N0,
        "seed": seed,
    }
    run.write_json(result, "perturbation", manifest_hash)
    run.write_timings(clock.timings(manifest_hash, context.kernel_hash))
    logger.info(f"Perturbed run: J/J_linear = {result['normalized_cost']:.6g}")
    return {"manifest_hash": manifest_hash, **result}
