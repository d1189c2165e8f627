from __future__ import annotations

import logging
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Настройки процесса, загружаемые из переменных окружения (префикс ZLIK_).
    Параметры эксперимента живут в JSON-конфиге, см. schemas/config.py.
    """
    LOG_LEVEL: str = "INFO"
    DEVICE: str = "cpu"
    NUM_THREADS: Optional[int] = None
    PROGRESS: bool = True

    API_KEY: Optional[str] = None
    SERVE_CHECKPOINT: Optional[str] = None
    SERVE_ALIGN_CHECKPOINT: Optional[str] = None
    SERVE_EMBED_TABLE: Optional[str] = None

    model_config = SettingsConfigDict(env_file=".env", env_prefix="ZLIK_", extra="ignore")


config = Settings()


def setup_logging(level: str | None = None) -> None:
    logging.basicConfig(
        level=(level or config.LOG_LEVEL).upper(),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    )
