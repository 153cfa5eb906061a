"""Repository for the files of one run directory."""

import json
import logging
from pathlib import Path
from typing import Dict, Optional

import pandas as pd
from pydantic import ValidationError as PydanticValidationError

from app.exceptions import StorageError
from app.models.optimizer import HISTORY_COLUMNS
from app.schemas.controls_file import ControlsDocument
from app.schemas.manifest import RunManifest, Timings

logger = logging.getLogger(__name__)

STATES_INDEX = "states.json"


class RunRepository:
    """
    Output files of a run, all named <stem>_<manifest hash>.<ext>.

    The manifest is written first and never rewritten; a second write with
    different content is refused.
    """

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)

    def path(self, stem: str, manifest_hash: str, ext: str) -> Path:
        return self.out_dir / f"{stem}_{manifest_hash}.{ext}"

    def _write_text(self, path: Path, text: str) -> Path:
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8")
        except OSError as e:
            logger.error(f"Failed to write {path}: {e}")
            raise StorageError(f"Failed to write {path}", detail=str(e)) from e
        logger.info(f"Wrote {path}")
        return path

    def _write_frame(self, frame: pd.DataFrame, path: Path) -> Path:
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            frame.to_csv(path, index=False, float_format="%.17g")
        except OSError as e:
            logger.error(f"Failed to write {path}: {e}")
            raise StorageError(f"Failed to write {path}", detail=str(e)) from e
        logger.info(f"Wrote {path} ({len(frame)} rows)")
        return path

    # -- manifest -------------------------------------------------------------

    def write_manifest(self, manifest: RunManifest) -> str:
        """
        Write the manifest and return its hash.

        Raises:
            StorageError: If a different manifest with the same hash already exists
        """
        manifest_hash = manifest.content_hash()
        path = self.path(manifest.command, manifest_hash, "manifest.json")
        if path.exists():
            existing = self.read_manifest(path)
            if existing.content_hash() != manifest_hash:
                raise StorageError("Refusing to overwrite an existing manifest", detail=str(path))
            logger.info(f"Manifest {path.name} already present; reusing it")
            return manifest_hash
        self._write_text(path, manifest.model_dump_json(indent=2))
        return manifest_hash

    def read_manifest(self, path) -> RunManifest:
        try:
            return RunManifest.model_validate_json(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise StorageError(f"Manifest not found: {path}") from e
        except PydanticValidationError as e:
            raise StorageError(f"Malformed manifest: {path}", detail=str(e)) from e

    def write_timings(self, timings: Timings) -> Path:
        return self._write_text(
            self.path("timings", timings.manifest_hash, "json"), timings.model_dump_json(indent=2)
        )

    # -- tables ---------------------------------------------------------------

    def write_history(self, frame: pd.DataFrame, manifest_hash: str, stem: str = "history") -> Path:
        return self._write_frame(frame, self.path(stem, manifest_hash, "csv"))

    def read_history(self, path) -> pd.DataFrame:
        frame = self.read_table(path)
        missing = [column for column in HISTORY_COLUMNS if column not in frame.columns]
        if missing:
            raise StorageError(f"History file lacks columns {missing}", detail=str(path))
        return frame

    def write_table(self, frame: pd.DataFrame, stem: str, manifest_hash: str) -> Path:
        return self._write_frame(frame, self.path(stem, manifest_hash, "csv"))

    def read_table(self, path) -> pd.DataFrame:
        try:
            return pd.read_csv(path, float_precision="round_trip")
        except FileNotFoundError as e:
            raise StorageError(f"Table not found: {path}") from e
        except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise StorageError(f"Malformed table: {path}", detail=str(e)) from e

    # -- controls -------------------------------------------------------------

    def write_controls(self, document: ControlsDocument, manifest_hash: str) -> Path:
        return self._write_text(
            self.path("controls", manifest_hash, "json"), document.model_dump_json(indent=2)
        )

    @staticmethod
    def read_controls(path) -> ControlsDocument:
        try:
            return ControlsDocument.model_validate_json(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise StorageError(f"Controls file not found: {path}") from e
        except PydanticValidationError as e:
            raise StorageError(f"Malformed controls file: {path}", detail=str(e)) from e

    # -- ground states --------------------------------------------------------

    def write_states_index(self, names: Dict[str, str], manifest_hash: str) -> Path:
        """Record which field files hold the ground states of this directory."""
        index = {"manifest_hash": manifest_hash, **names}
        return self._write_text(self.out_dir / STATES_INDEX, json.dumps(index, indent=2))

    def read_states_index(self, states_dir: Optional[Path] = None) -> dict:
        path = Path(states_dir or self.out_dir) / STATES_INDEX
        try:
            index = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise StorageError(
                f"No ground states found in {path.parent}",
                detail="run the groundstate command first or pass --states",
            ) from e
        except json.JSONDecodeError as e:
            raise StorageError(f"Malformed states index: {path}", detail=str(e)) from e
        for key in ("psi0", "psi_d"):
            if key not in index:
                raise StorageError(f"States index lacks {key}", detail=str(path))
        return index

    def write_json(self, payload: dict, stem: str, manifest_hash: str) -> Path:
        return self._write_text(
            self.path(stem, manifest_hash, "json"), json.dumps(payload, indent=2, sort_keys=True)
        )
