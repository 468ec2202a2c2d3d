"""
Centralized configuration using Pydantic Settings.
Loads from SUBSTLAB_* environment variables and .env file.
"""
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Library and CLI settings with environment variable support.
    """
    model_config = SettingsConfigDict(
        env_prefix="SUBSTLAB_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )

    # Logging
    LOG_LEVEL: str = "INFO"

    # Parallelism
    THREADS: int = Field(default=4, ge=1)

    # Budgets
    STATE_BUDGET: int = Field(default=2**20, gt=0)
    MATRIX_BUDGET: int = Field(default=2**26, gt=0)

    # Numerics
    POWER_TOL: float = Field(default=1e-12, gt=0)
    POWER_MAX_ITER: int = Field(default=100_000, gt=0)
    CONSISTENCY_TOL: float = Field(default=1e-10, gt=0)
    GIBBS_ELL_MAX: int = Field(default=4, ge=0)

    # Monte Carlo
    MIXING_ROUNDS: int = Field(default=20, ge=0)

    # Reports
    FLOAT_DIGITS: int = Field(default=17, ge=1, le=17)

    @property
    def thread_count(self) -> int:
        """Worker threads for internal pools."""
        return max(1, self.THREADS)


# Global settings instance
settings = Settings()
