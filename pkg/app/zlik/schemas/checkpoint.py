from __future__ import annotations

import enum
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict

from app.zlik.schemas.config import Variant

CHECKPOINT_VERSION = "zlik-ckpt-1"


class CheckpointKind(str, enum.Enum):
    ALIGNMENT = "alignment"
    KINO = "kino"


class CheckpointMeta(BaseModel):
    """Содержимое config.json каталога чекпоинта."""
    model_config = ConfigDict(extra="forbid")

    format_version: Literal["zlik-ckpt-1"] = CHECKPOINT_VERSION
    kind: CheckpointKind
    config: dict
    config_hash: str
    weights_hash: str = ""
    seed: int = 0
    dataset_hash: Optional[str] = None

    # alignment
    text_dim: Optional[int] = None
    embed_provider: Optional[str] = None

    # kino
    variant: Optional[Variant] = None
    align_hash: Optional[str] = None
    dimension_stage: bool = True
    trained_classes: Optional[list[str]] = None
    base_hash: Optional[str] = None
