"""Tests for field files, the kernel cache and run directories."""

import hashlib
import json

import numpy as np
import pandas as pd
import pytest

from app.exceptions import StorageError
from app.models.constants import PolarizationAxis
from app.models.grid import ComplexField
from app.models.optimizer import ConvergenceHistory
from app.repositories.field_repository import FieldRepository
from app.repositories.kernel_cache_repository import KernelCacheRepository, git_blob_hash
from app.repositories.run_repository import RunRepository
from app.schemas.controls_file import ControlsDocument, CurveDocument
from app.schemas.manifest import RunManifest, Timings
from app.services.dipolar_kernel import precompute_truncated_kernel
from app.services.grid_service import build_grid
from app.services.observables import density_slice

AXIS_Z = PolarizationAxis((0.0, 0.0, 1.0))


@pytest.fixture
def grid():
    return build_grid(4.0, 4.0, 8.0, 8, 8, 16)


@pytest.fixture
def field(grid):
    rng = np.random.default_rng(9)
    values = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    return ComplexField(values, grid)


@pytest.fixture
def manifest():
    return RunManifest(command="optimize", config={"T_ms": 2.0}, seeds={"optimizer": 0}, code_version="1.0.0")


def test_field_round_trip_is_bitwise(tmp_path, field):
    """Test that a stored field reads back with identical bits."""
    repository = FieldRepository(tmp_path)
    blob = repository.save("psi0", field, label="initial state", time=0.0)
    assert blob.stat().st_size == 16 * field.grid.size

    loaded = repository.load("psi0")
    assert loaded.values.tobytes() == field.values.tobytes()
    assert loaded.grid == field.grid
    sidecar = repository.read_sidecar("psi0")
    assert sidecar.shape == [8, 8, 16]
    assert sidecar.dtype == "complex f64 interleaved"
    assert sidecar.endianness == "little"
    assert sidecar.label == "initial state"


def test_field_layout_is_c_order(tmp_path, field):
    """Test that the binary layout is interleaved little-endian complex in C order."""
    FieldRepository(tmp_path).save("psi", field)
    raw = np.fromfile(tmp_path / "psi.bin", dtype="<f8")
    assert raw[0] == field.values[0, 0, 0].real
    assert raw[1] == field.values[0, 0, 0].imag
    assert raw[2] == field.values[0, 0, 1].real


def test_field_on_other_grid_is_rejected(tmp_path, field):
    """Test that loading onto a different grid fails."""
    repository = FieldRepository(tmp_path)
    repository.save("psi", field)
    with pytest.raises(StorageError, match="different grid"):
        repository.load("psi", build_grid(4.0, 4.0, 8.0, 8, 8, 8))


def test_missing_field(tmp_path):
    """Test that a missing sidecar raises a storage error."""
    repository = FieldRepository(tmp_path)
    assert not repository.exists("psi")
    with pytest.raises(StorageError, match="not found"):
        repository.load("psi")


def test_truncated_field_data(tmp_path, field):
    """Test that a short binary file is rejected."""
    repository = FieldRepository(tmp_path)
    blob = repository.save("psi", field)
    blob.write_bytes(blob.read_bytes()[:64])
    with pytest.raises(StorageError, match="wrong length"):
        repository.load("psi")


def test_slice_round_trip(tmp_path, field):
    """Test that density slices are stored as float64 with axes in the sidecar."""
    repository = FieldRepository(tmp_path)
    slice_ = density_slice(field, "y=0", time=1.5)
    repository.save_slice("slice_y0", slice_)
    values, sidecar = repository.load_slice("slice_y0")
    assert np.array_equal(values, slice_.values)
    assert sidecar.plane == "y=0"
    assert [axis.name for axis in sidecar.axes] == ["x", "z"]
    assert sidecar.axes[1].count == 16


def test_git_blob_hash_matches_git():
    """Test the blob hash against the value git reports for 'hello world\\n'."""
    assert git_blob_hash(b"hello world\n") == "3b18e512dba79e4c8300dd08aeb37f8e728b8dad"


def test_kernel_cache_round_trip(tmp_path, grid):
    """Test a cache miss, a store and a bitwise reload."""
    repository = KernelCacheRepository(tmp_path)
    assert repository.load(grid, AXIS_Z) is None

    kernel = precompute_truncated_kernel(grid, AXIS_Z)
    content_hash = repository.save(kernel)
    loaded, loaded_hash = repository.load(grid, AXIS_Z)
    assert loaded_hash == content_hash
    assert np.array_equal(loaded.multiplier, kernel.multiplier)
    assert np.array_equal(loaded.nn_multiplier, kernel.nn_multiplier)
    assert loaded.polarization.matches(AXIS_Z)


def test_kernel_cache_key_depends_on_polarization(tmp_path, grid):
    """Test that a kernel stored without polarization is not returned with one."""
    repository = KernelCacheRepository(tmp_path)
    repository.save(precompute_truncated_kernel(grid))
    assert repository.load(grid) is not None
    assert repository.load(grid, AXIS_Z) is None


def test_kernel_cache_computes_once(tmp_path, grid, mocker):
    """Test that get_or_compute only computes on a miss."""
    repository = KernelCacheRepository(tmp_path)
    compute = mocker.Mock(side_effect=lambda: precompute_truncated_kernel(grid, AXIS_Z))
    _, first = repository.get_or_compute(grid, AXIS_Z, compute)
    _, second = repository.get_or_compute(grid, AXIS_Z, compute)
    assert compute.call_count == 1
    assert first == second


def test_corrupt_kernel_blob(tmp_path, grid):
    """Test that a truncated cache blob is reported."""
    repository = KernelCacheRepository(tmp_path)
    repository.save(precompute_truncated_kernel(grid))
    blob = next(tmp_path.glob("*.bin"))
    blob.write_bytes(b"\0" * 8)
    with pytest.raises(StorageError, match="wrong size"):
        repository.load(grid)


def test_manifest_hash_ignores_creation_time(manifest):
    """Test that identical runs share a manifest hash."""
    later = manifest.model_copy(update={"created_at": "2030-01-01T00:00:00+00:00"})
    assert later.content_hash() == manifest.content_hash()
    assert len(manifest.content_hash()) == 12
    other = manifest.model_copy(update={"seeds": {"optimizer": 1}})
    assert other.content_hash() != manifest.content_hash()


def test_manifest_is_written_once(tmp_path, manifest):
    """Test that a second write with the same content reuses the file."""
    repository = RunRepository(tmp_path)
    manifest_hash = repository.write_manifest(manifest)
    path = repository.path("optimize", manifest_hash, "manifest.json")
    before = path.read_bytes()

    again = manifest.model_copy(update={"created_at": "2030-01-01T00:00:00+00:00"})
    assert repository.write_manifest(again) == manifest_hash
    assert path.read_bytes() == before
    assert repository.read_manifest(path).config == {"T_ms": 2.0}


def test_manifest_with_foreign_content_is_not_overwritten(tmp_path, manifest):
    """Test that a file at the manifest path with other content is refused."""
    repository = RunRepository(tmp_path)
    manifest_hash = manifest.content_hash()
    path = repository.path("optimize", manifest_hash, "manifest.json")
    path.write_text(
        manifest.model_copy(update={"notes": {"edited": "yes"}}).model_dump_json(), encoding="utf-8"
    )
    with pytest.raises(StorageError, match="Refusing to overwrite"):
        repository.write_manifest(manifest)


def test_history_round_trip(tmp_path):
    """Test that history costs survive the CSV exactly."""
    history = ConvergenceHistory(normalization=3.0)
    for k, cost in enumerate((2.0 / 3.0, 0.1, np.pi)):
        history.append(1 + k // 2, [0.0], cost, 12.5, k == 2)
    repository = RunRepository(tmp_path)
    path = repository.write_history(history.to_frame(), "abc123def456")
    assert path.name == "history_abc123def456.csv"

    frame = repository.read_history(path)
    assert frame["J"].tolist() == history.costs.tolist()
    assert frame["fault_flag"].tolist() == [0, 0, 1]
    assert frame["best_so_far"].iloc[-1] == 0.1 / 3.0


def test_history_with_missing_columns(tmp_path):
    """Test that a table without the history columns is rejected."""
    repository = RunRepository(tmp_path)
    path = repository.write_table(pd.DataFrame({"k": [1]}), "history", "0" * 12)
    with pytest.raises(StorageError, match="lacks columns"):
        repository.read_history(path)


def test_controls_document_round_trip(tmp_path):
    """Test writing and reading a controls file."""
    document = ControlsDocument(
        parameterization="bspline",
        T_ms=2.0,
        level=1,
        coefficients=[1 / 3, 2 / 3] * 3,
        curves=[CurveDocument(degree=3, knots=[0, 0, 0, 0, 2, 2, 2, 2], coeffs=[0, 1 / 3, 2 / 3, 1])] * 3,
        normalized_cost=1.0,
    )
    repository = RunRepository(tmp_path)
    path = repository.write_controls(document, "f" * 12)
    assert RunRepository.read_controls(path) == document


def test_malformed_controls_file(tmp_path):
    """Test that an invalid parameterization is rejected."""
    path = tmp_path / "controls.json"
    path.write_text('{"parameterization": "splines", "T_ms": 2.0, "coefficients": []}')
    with pytest.raises(StorageError, match="Malformed controls file"):
        RunRepository.read_controls(path)


def test_states_index(tmp_path):
    """Test the ground-state index of a run directory."""
    repository = RunRepository(tmp_path)
    repository.write_states_index({"psi0": "psi0_abc", "psi_d": "psi_d_abc"}, "abc")
    index = RunRepository(tmp_path / "elsewhere").read_states_index(tmp_path)
    assert index == {"manifest_hash": "abc", "psi0": "psi0_abc", "psi_d": "psi_d_abc"}


def test_missing_states_index(tmp_path):
    """Test the hint given when no ground states exist."""
    with pytest.raises(StorageError, match="No ground states") as error:
        RunRepository(tmp_path).read_states_index()
    assert "groundstate" in error.value.detail


def test_timings_file(tmp_path):
    """Test that timings are written next to the manifest hash."""
    repository = RunRepository(tmp_path)
    path = repository.write_timings(Timings(manifest_hash="abc", stages_s={"propagate": 1.5}, total_s=2.0))
    assert path.name == "timings_abc.json"
    assert Timings.model_validate_json(path.read_text()).total_s == 2.0


def test_cache_key_is_sha256_of_header(tmp_path, grid):
    """Test that the cache key hashes the canonical header and changes with the grid."""
    repository = KernelCacheRepository(tmp_path)
    header = repository.header_for(grid, AXIS_Z)
    payload = json.dumps(header.model_dump(mode="json"), sort_keys=True).encode("utf-8")
    assert header.cache_key() == hashlib.sha256(payload).hexdigest()
    other = repository.header_for(build_grid(4.0, 4.0, 8.0, 8, 8, 8), AXIS_Z)
    assert other.cache_key() != header.cache_key()
