"""Pydantic schemas for the JSON documents read and written by runs"""

from app.schemas.controls_file import ControlsDocument, CurveDocument
from app.schemas.field_file import FieldSidecar, KernelCacheHeader, SliceAxis, SliceSidecar
from app.schemas.manifest import RunManifest, Timings
from app.schemas.run_config import RunConfig

__all__ = [
    # Configuration
    "RunConfig",
    # Manifest
    "RunManifest",
    "Timings",
    # Field files
    "FieldSidecar",
    "SliceAxis",
    "SliceSidecar",
    "KernelCacheHeader",
    # Controls
    "ControlsDocument",
    "CurveDocument",
]
