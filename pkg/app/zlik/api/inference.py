"""
HTTP-сервис инференса поверх обученных чекпоинтов.

Endpoints:
- GET /health: состояние сервиса и загруженная модель
- POST /embed: описание повреждения → z_x
- POST /predict: история + будущие управления (+ описание) → P будущих поз
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional

import numpy as np
from fastapi import Depends, FastAPI, Header, HTTPException, status
from pydantic import BaseModel, Field

from app.zlik.embed.providers import EmbeddingProvider, HashedEmbedder
from app.zlik.embed.table import load_embedding_table
from app.zlik.errors import LookupEmbeddingError, MissingArtifactError, ZlikError
from app.zlik.nn.align import AlignmentModel
from app.zlik.nn.kino import KinoModel, ModelInput, is_conditioned
from app.zlik.schemas.checkpoint import CheckpointMeta
from app.zlik.services import checkpoint_service
from app.zlik.services.alignment_service import damage_embedding
from app.zlik.services.kino_service import predict
from app.zlik.settings import config

logger = logging.getLogger(__name__)

app = FastAPI(title="zlik inference API", version="0.1.0")


@dataclass
class ServeState:
    model: KinoModel
    meta: CheckpointMeta
    align_model: Optional[AlignmentModel] = None
    provider: Optional[EmbeddingProvider] = None


class EmbedRequest(BaseModel):
    text: str = Field(..., min_length=1)


class EmbedResponse(BaseModel):
    z: List[float]
    source: str


class PredictRequest(BaseModel):
    history: List[List[float]]
    future_actions: List[List[float]]
    description: Optional[str] = None
    damage: Optional[List[float]] = None


class PredictResponse(BaseModel):
    variant: str
    states: List[List[float]]


class HealthResponse(BaseModel):
    status: str
    variant: Optional[str] = None
    weights_hash: Optional[str] = None


@lru_cache(maxsize=1)
def get_state() -> ServeState:
    """Загружает чекпоинты из ZLIK_SERVE_* при первом обращении."""
    if not config.SERVE_CHECKPOINT:
        raise MissingArtifactError("ZLIK_SERVE_CHECKPOINT не задан")
    model, meta = checkpoint_service.load_kino(config.SERVE_CHECKPOINT)
    state = ServeState(model=model, meta=meta)
    if config.SERVE_ALIGN_CHECKPOINT:
        state.align_model, align_meta = checkpoint_service.load_alignment(config.SERVE_ALIGN_CHECKPOINT)
        if config.SERVE_EMBED_TABLE:
            state.provider = load_embedding_table(config.SERVE_EMBED_TABLE, dim=align_meta.text_dim)
        else:
            state.provider = HashedEmbedder(dim=align_meta.text_dim)
    logger.info("Serving %s checkpoint %s", meta.variant.value, meta.weights_hash[:12])
    return state


def serve_state() -> ServeState:
    try:
        return get_state()
    except ZlikError as e:
        logger.error("Checkpoint load failed: %s", e)
        raise HTTPException(status_code=status.HTTP_503_SERVICE_UNAVAILABLE, detail=str(e))


def validate_api_key(
    api_key_underscore: Optional[str] = Header(None, alias="API_Key"),
    api_key_hyphen: Optional[str] = Header(None, alias="API-Key"),
) -> bool:
    """
    Проверка ключа из заголовка API_Key или API-Key. Без ZLIK_API_KEY проверка отключена.
    """
    if not config.API_KEY:
        return True
    provided = api_key_underscore or api_key_hyphen
    if not provided:
        logger.warning("Request rejected: missing API key header (API_Key or API-Key)")
        raise HTTPException(
            status_code=status.HTTP_401_UNAUTHORIZED,
            detail="API_Key header required",
        )
    if provided != config.API_KEY:
        logger.warning("Request rejected: invalid API key (%s***)", provided[:4])
        raise HTTPException(
            status_code=status.HTTP_403_FORBIDDEN,
            detail="Invalid API_Key",
        )
    return True


def _embed(state: ServeState, text: str) -> np.ndarray:
    if state.align_model is None or state.provider is None:
        raise HTTPException(
            status_code=status.HTTP_400_BAD_REQUEST,
            detail="Alignment checkpoint is not loaded (ZLIK_SERVE_ALIGN_CHECKPOINT)",
        )
    try:
        return damage_embedding(text, state.provider, state.align_model).z
    except LookupEmbeddingError as e:
        raise HTTPException(status_code=status.HTTP_404_NOT_FOUND, detail=str(e))
    except ValueError as e:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(e))


@app.get("/health", response_model=HealthResponse)
async def health() -> HealthResponse:
    try:
        state = get_state()
    except ZlikError:
        return HealthResponse(status="no-model")
    return HealthResponse(status="ok", variant=state.meta.variant.value, weights_hash=state.meta.weights_hash)


@app.post("/embed", response_model=EmbedResponse)
async def embed(
    body: EmbedRequest,
    _: bool = Depends(validate_api_key),
    state: ServeState = Depends(serve_state),
) -> EmbedResponse:
    z = _embed(state, body.text)
    return EmbedResponse(z=z.tolist(), source="text")


@app.post("/predict", response_model=PredictResponse)
async def predict_route(
    body: PredictRequest,
    _: bool = Depends(validate_api_key),
    state: ServeState = Depends(serve_state),
) -> PredictResponse:
    """
    history: H строк по 8 каналов; future_actions: P−1 строк (v, ω).
    Для zlik/monolithic нужен description или damage (вектор длины d_damage).
    """
    damage = None
    if is_conditioned(state.model.variant):
        if body.damage is not None:
            damage = np.asarray(body.damage, dtype=np.float64)
        elif body.description is not None:
            damage = _embed(state, body.description)
        else:
            raise HTTPException(
                status_code=status.HTTP_400_BAD_REQUEST,
                detail=f"Variant {state.model.variant.value} requires description or damage",
            )
    try:
        actions = np.asarray(body.future_actions, dtype=np.float64)
        if actions.size == 0:
            actions = actions.reshape(0, 2)
        inp = ModelInput(
            history=np.asarray(body.history, dtype=np.float64),
            future_actions=actions,
            damage=damage,
        )
        pred = predict(state.model, inp)
    except ValueError as e:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(e))
    return PredictResponse(variant=state.model.variant.value, states=pred.states.tolist())


def run(host: str = "0.0.0.0", port: int = 8000) -> None:
    import uvicorn
    uvicorn.run(app, host=host, port=port, log_config=None)


if __name__ == "__main__":
    run()
