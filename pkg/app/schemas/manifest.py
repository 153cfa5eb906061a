"""Run manifest and timings documents."""

import hashlib
import json
from datetime import datetime, timezone
from typing import Any, Dict, Optional

from pydantic import BaseModel, Field

MANIFEST_HASH_LENGTH = 12


class RunManifest(BaseModel):
    """Everything needed to reproduce a run; written before any heavy compute"""
    command: str = Field(..., description="Subcommand that produced the run")
    config: Dict[str, Any] = Field(..., description="Resolved run configuration")
    seeds: Dict[str, int] = Field(default_factory=dict)
    code_version: str = Field(..., description="Package version")
    fine: bool = False
    grid: Dict[str, Any] = Field(default_factory=dict)
    endpoints: Dict[str, float] = Field(default_factory=dict)
    bounds: Dict[str, float] = Field(default_factory=dict)
    inputs: Dict[str, str] = Field(default_factory=dict, description="Files read by the run")
    notes: Dict[str, str] = Field(default_factory=dict)
    created_at: str = Field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    def content_hash(self) -> str:
        """Hash of the manifest without its creation time, so identical runs share it."""
        payload = json.dumps(
            self.model_dump(mode="json", exclude={"created_at"}), sort_keys=True
        ).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:MANIFEST_HASH_LENGTH]


class Timings(BaseModel):
    """Wall times of a run, written when it finishes"""
    manifest_hash: str
    kernel_cache_hash: Optional[str] = Field(None, description="Git-style hash of the kernel blob the run used")
    stages_s: Dict[str, float] = Field(default_factory=dict)
    total_s: float = 0.0
