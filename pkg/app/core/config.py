from pathlib import Path
from typing import Dict, Optional, Union

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

from .exceptions import DataFormatError


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", case_sensitive=True, extra="ignore")

    # Results API Settings
    API_HOST: str = Field("0.0.0.0")
    API_PORT: int = Field(8000)
    API_SECRET_KEY: str = Field("")

    # Run registry
    DATABASE_URL: str = Field("sqlite:///./justdense_runs.db")

    # Experiment defaults
    OUTPUT_DIR: str = Field("runs")
    DEFAULT_SEED: int = Field(0)

    # Logging
    LOG_LEVEL: str = Field("INFO")
    LOG_FILE: str = Field("justdense.log")
    LOG_DIR: Optional[str] = Field("logs")


settings = Settings()


def read_key_value_file(path: Union[str, Path]) -> Dict[str, str]:
    """Parse a plain-text experiment config: ``key=value`` lines, ``#`` comments"""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataFormatError(f"cannot read config file: {e}", path=path) from e

    values: Dict[str, str] = {}
    for number, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataFormatError(f"expected key=value, got {raw.strip()!r}", path=path, line=number)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise DataFormatError("empty key", path=path, line=number)
        if key in values:
            raise DataFormatError(f"duplicate key {key!r}", path=path, line=number)
        values[key] = value
    return values
