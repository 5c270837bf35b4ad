from __future__ import annotations

from functools import lru_cache
from pathlib import Path
from typing import Literal

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Process-level settings for the scoring pipeline.

    Configuration Priority (highest to lowest):
    1. Environment variables (PSS_* names)
    2. Local .env file
    3. Default values defined in Field()

    Pipeline hyperparameters (patch size, N, k, learning rate, ...) are not
    settings; they live in PipelineConfig and come from a JSON config file
    plus CLI flags. PSS_CONFIG only names the default config file.
    """
    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
        env_prefix="",
        case_sensitive=False,
        populate_by_name=True,
    )

    app_name: str = Field(default="her2pss", alias="PSS_APP_NAME")
    environment: Literal["local", "dev", "ci", "prod"] = Field(
        default="local", alias="PSS_ENVIRONMENT"
    )
    log_level: str = Field(default="INFO", alias="PSS_LOG_LEVEL")
    log_format: Literal["text", "json"] = Field(
        default="text", alias="PSS_LOG_FORMAT"
    )

    threads: int = Field(
        default=1,
        ge=1,
        alias="PSS_THREADS",
        description="Upper bound on worker threads; outputs never depend on it",
    )
    config_path: Path | None = Field(
        default=None,
        alias="PSS_CONFIG",
        description="Default pipeline config JSON used when --config is absent",
    )


@lru_cache
def get_settings() -> Settings:
    return Settings()
