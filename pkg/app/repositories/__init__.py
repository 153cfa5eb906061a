"""Repository layer for run files and the kernel cache."""

from app.repositories.field_repository import FieldRepository
from app.repositories.kernel_cache_repository import KernelCacheRepository
from app.repositories.run_repository import RunRepository

__all__ = [
    "FieldRepository",
    "KernelCacheRepository",
    "RunRepository",
]
