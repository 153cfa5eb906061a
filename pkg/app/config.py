from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-level configuration settings loaded from environment variables."""

    # Application Configuration
    code_version: str = "1.0.0"

    # Logging Configuration
    log_level: str = "INFO"

    # Kernel Configuration
    kernel_cache_dir: str = ".kernel_cache"
    kernel_memory_limit_gb: float = 8.0

    # Parallelism
    fft_workers: int = -1  # scipy.fft worker count, -1 uses all cores
    gradient_workers: int = 1  # concurrent propagations per finite-difference gradient

    # Output Configuration
    output_dir: str = "runs"

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="DROPLET_",
        case_sensitive=False,
    )


# Global settings instance
settings = Settings()
