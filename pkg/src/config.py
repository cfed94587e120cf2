"""
Process settings for Aeolus.
Uses Pydantic's BaseSettings for environment variable loading and validation.
"""
from enum import Enum
from typing import Optional

from pydantic import BaseSettings, Field, validator


class CacheType(str, Enum):
    """Supported feature-cache backends."""
    MEMORY = "memory"
    DISK = "disk"
    NONE = "none"


class LogLevel(str, Enum):
    """Supported logging levels."""
    DEBUG = "DEBUG"
    INFO = "INFO"
    WARNING = "WARNING"
    ERROR = "ERROR"
    CRITICAL = "CRITICAL"


class Settings(BaseSettings):
    """Process-wide settings loaded from AEOLUS_* environment variables or .env."""

    # Logging settings
    LOG_LEVEL: LogLevel = Field(default=LogLevel.INFO, description="Logging level")
    LOG_FORMAT: str = Field(
        default="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        description="Log message format"
    )
    LOG_FILE: Optional[str] = Field(default=None, description="Optional rotating log file")

    # Feature cache settings
    CACHE_TYPE: CacheType = Field(default=CacheType.MEMORY, description="Feature cache backend")
    CACHE_MAXSIZE: int = Field(default=16, description="Maximum number of cached feature passes (MB for the disk cache)")
    CACHE_DIR: Optional[str] = Field(default=None, description="Directory for the disk cache")

    # Training settings
    TRAIN_WORKERS: int = Field(default=1, description="Threads used for sharded gradient evaluation")

    @validator("CACHE_MAXSIZE")
    def validate_cache_maxsize(cls, v: int) -> int:
        """Validate cache max size is positive."""
        if v <= 0:
            raise ValueError("CACHE_MAXSIZE must be positive")
        return v

    @validator("TRAIN_WORKERS")
    def validate_train_workers(cls, v: int) -> int:
        """Validate worker count is positive."""
        if v <= 0:
            raise ValueError("TRAIN_WORKERS must be positive")
        return v

    class Config:
        """Pydantic config."""
        env_file = ".env"
        env_prefix = "AEOLUS_"
        case_sensitive = True


# Create global settings instance
settings = Settings()
