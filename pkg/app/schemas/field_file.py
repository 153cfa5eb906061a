"""JSON sidecars of binary field files and the kernel cache header."""

import hashlib
import json
from typing import Dict, List, Optional

from pydantic import BaseModel, Field

FIELD_DTYPE = "complex f64 interleaved"
SLICE_DTYPE = "f64"
ENDIANNESS = "little"


class FieldSidecar(BaseModel):
    """Describes a raw little-endian complex128 array in C order"""
    shape: List[int] = Field(..., min_length=3, max_length=3)
    box: List[float] = Field(..., min_length=3, max_length=3, description="Box lengths")
    units: Dict[str, str] = Field(
        default_factory=lambda: {"length": "um", "time": "ms", "psi": "um^-3/2"}
    )
    dtype: str = FIELD_DTYPE
    endianness: str = ENDIANNESS
    label: str = ""
    atoms: Optional[float] = None
    time: Optional[float] = None


class SliceAxis(BaseModel):
    name: str
    start: float
    stop: float
    count: int


class SliceSidecar(BaseModel):
    """Describes a raw little-endian float64 density slice in C order"""
    plane: str
    index: int
    time: float
    shape: List[int] = Field(..., min_length=2, max_length=2)
    axes: List[SliceAxis]
    units: Dict[str, str] = Field(default_factory=lambda: {"length": "um", "time": "ms", "density": "um^-3"})
    dtype: str = SLICE_DTYPE
    endianness: str = ENDIANNESS


class KernelCacheHeader(BaseModel):
    """Header of a cached kernel blob; the cache key is the hash of this header"""
    Jx: int
    Jy: int
    Jz: int
    Lx: float
    Ly: float
    Lz: float
    oversampling: int
    dft_convention: str = "unnormalized-forward"
    endianness: str = ENDIANNESS
    dtype: str = "f64"
    polarization: Optional[List[float]] = None
    arrays: List[str] = Field(default_factory=lambda: ["multiplier"])

    def cache_key(self) -> str:
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()
