import json
import os
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.core.errors import ConfigError


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="M2D_", env_file=".env", case_sensitive=False, extra="ignore")

    # Application
    app_name: str = Field(default="Surround Depth")
    app_version: str = Field(default="1.0.0")
    debug: bool = Field(default=False)
    log_level: str = Field(default="INFO")

    # Parallelism: caps per-camera workers (env M2D_THREADS)
    threads: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)

    # CORS
    allowed_origins: List[str] = Field(default_factory=lambda: ["*"])

    # Output
    output_dir: str = Field(default="./runs")

    # Background jobs (HTTP surface)
    max_concurrent_tasks: int = Field(default=2, ge=1)
    task_timeout: int = Field(default=900)  # 15 minutes


settings = Settings()


def read_json_file(path: str | Path) -> Dict[str, Any]:
    """Read a JSON document, mapping I/O and syntax problems to ConfigError."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid JSON in {path}: {e}") from e


def load_model(model_cls, path: str | Path, overrides: Optional[Dict[str, Any]] = None):
    """Validate a JSON file into a pydantic model, relative paths resolved against the file."""
    data = read_json_file(path)
    if overrides:
        data.update(overrides)
    try:
        model = model_cls.model_validate(data, context={"base_dir": Path(path).resolve().parent})
    except ValidationError as e:
        raise ConfigError(f"Invalid config {path}: {e}") from e
    return model
