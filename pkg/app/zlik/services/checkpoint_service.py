"""
Каталог чекпоинта: config.json (CheckpointMeta), weights.pt (state_dict), metrics.json.
"""
from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Optional

import torch
from pydantic import ValidationError
from torch import nn

from app.zlik.errors import DataFormatError, MissingArtifactError
from app.zlik.nn.align import AlignmentModel
from app.zlik.nn.kino import KinoModel, build_model
from app.zlik.schemas.checkpoint import CheckpointKind, CheckpointMeta
from app.zlik.schemas.config import AlignConfig, KinoConfig

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.json"
WEIGHTS_FILE = "weights.pt"
METRICS_FILE = "metrics.json"


def weights_hash(state_dict: dict[str, torch.Tensor]) -> str:
    """SHA-256 по отсортированным именам тензоров и их байтам."""
    h = hashlib.sha256()
    for name in sorted(state_dict):
        tensor = state_dict[name].detach().cpu().contiguous()
        h.update(name.encode("utf-8"))
        h.update(str(tuple(tensor.shape)).encode("ascii"))
        h.update(str(tensor.dtype).encode("ascii"))
        h.update(tensor.numpy().tobytes())
    return h.hexdigest()


def write_json(path: Path, data: Any) -> None:
    path.write_text(json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True), encoding="utf-8")


def save_checkpoint(
    path: str | Path,
    model: nn.Module,
    meta: CheckpointMeta,
    metrics: Optional[dict] = None,
) -> CheckpointMeta:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    state = {k: v.detach().cpu() for k, v in model.state_dict().items()}
    meta = meta.model_copy(update={"weights_hash": weights_hash(state)})
    torch.save(state, out / WEIGHTS_FILE)
    write_json(out / CONFIG_FILE, meta.model_dump(mode="json"))
    write_json(out / METRICS_FILE, metrics or {})
    logger.info("Checkpoint saved to %s (%s, weights %s)", out, meta.kind.value, meta.weights_hash[:12])
    return meta


def load_meta(path: str | Path) -> CheckpointMeta:
    p = Path(path) / CONFIG_FILE
    if not p.is_file():
        raise MissingArtifactError(f"Чекпоинт не найден: {Path(path)}")
    try:
        return CheckpointMeta.model_validate(json.loads(p.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, ValidationError) as e:
        raise DataFormatError(f"{p}: некорректный config.json чекпоинта: {e}") from e


def load_metrics(path: str | Path) -> dict:
    p = Path(path) / METRICS_FILE
    return json.loads(p.read_text(encoding="utf-8")) if p.is_file() else {}


def load_state(path: str | Path, meta: CheckpointMeta) -> dict[str, torch.Tensor]:
    p = Path(path) / WEIGHTS_FILE
    if not p.is_file():
        raise MissingArtifactError(f"Веса чекпоинта не найдены: {p}")
    state = torch.load(p, map_location="cpu", weights_only=True)
    if weights_hash(state) != meta.weights_hash:
        raise DataFormatError(f"{p}: хеш весов не совпадает с config.json")
    return state


def _expect_kind(meta: CheckpointMeta, kind: CheckpointKind, path: str | Path) -> None:
    if meta.kind != kind:
        raise DataFormatError(f"{path}: ожидается чекпоинт {kind.value}, получен {meta.kind.value}")


def load_alignment(path: str | Path) -> tuple[AlignmentModel, CheckpointMeta]:
    """Загружает модель выравнивания; h_σ заморожен."""
    meta = load_meta(path)
    _expect_kind(meta, CheckpointKind.ALIGNMENT, path)
    cfg = AlignConfig.model_validate(meta.config)
    model = AlignmentModel(cfg, text_dim=meta.text_dim)
    model.load_state_dict(load_state(path, meta))
    model.eval()
    model.freeze_text_head()
    return model, meta


def load_kino(path: str | Path) -> tuple[KinoModel, CheckpointMeta]:
    meta = load_meta(path)
    _expect_kind(meta, CheckpointKind.KINO, path)
    cfg = KinoConfig.model_validate(meta.config)
    model = build_model(cfg, dimension_stage=meta.dimension_stage)
    model.load_state_dict(load_state(path, meta))
    model.eval()
    return model, meta
