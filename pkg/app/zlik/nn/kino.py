"""
Модель прямой кинодинамики, обусловленная эмбеддингом повреждения.

Конвейер формы: история (B, H, D) → сегменты (B, L, D, d) → + позиции + W_d·z →
двухстадийные слои внимания (по времени внутри канала, по каналам через роутеры) →
неавторегрессивный декодер с P позиционными запросами → (B, P, 6).

Варианты: zlik (с повреждением), clean (без W_d), monolithic (один токен на шаг,
обычный self-attention энкодер).
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from app.zlik.errors import DomainError, ShapeError
from app.zlik.nn.normalize import ChannelNormalizer
from app.zlik.schemas.config import KinoConfig, Variant

STATE_DIM = 6
ACTION_DIM = 2


@dataclass(frozen=True, eq=False)
class ModelInput:
    history: np.ndarray
    future_actions: np.ndarray
    damage: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        arrays = [self.history, self.future_actions]
        if self.damage is not None:
            arrays.append(self.damage)
        if not all(np.isfinite(a).all() for a in arrays):
            raise DomainError("Вход модели содержит нечисловые значения")


@dataclass(frozen=True, eq=False)
class Prediction:
    """Будущие позы (P, 6) в системе опорного состояния."""
    states: np.ndarray


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


class SegmentEmbedding(nn.Module):
    """E_seg: окна длины l_seg каждого канала → d_model (общие веса для всех каналов и позиций)."""

    def __init__(self, l_seg: int, d_model: int) -> None:
        super().__init__()
        self.l_seg = l_seg
        self.proj = nn.Linear(l_seg, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, h, d = x.shape
        if h % self.l_seg:
            raise ShapeError(f"H={h} не делится на L_seg={self.l_seg}")
        segs = x.transpose(1, 2).reshape(b, d, h // self.l_seg, self.l_seg)
        return self.proj(segs).permute(0, 2, 1, 3)


class ContextInjection(nn.Module):
    """Z⁽⁰⁾ = 𝐇 + E_pos + W_d·z; W_d отсутствует у варианта clean."""

    def __init__(self, n_segments: int, n_channels: int, d_model: int, d_damage: Optional[int]) -> None:
        super().__init__()
        self.pos = nn.Parameter(torch.zeros(1, n_segments, n_channels, d_model))
        nn.init.trunc_normal_(self.pos, std=0.02)
        self.d_damage = d_damage
        self.w_d = nn.Linear(d_damage, d_model, bias=False) if d_damage else None

    def forward(self, feat: torch.Tensor, damage: Optional[torch.Tensor] = None) -> torch.Tensor:
        out = feat + self.pos
        if self.w_d is None or damage is None:
            return out
        if damage.ndim != 2 or damage.shape[1] != self.d_damage:
            raise ShapeError(
                f"Эмбеддинг повреждения должен иметь форму (B, {self.d_damage}), получено {tuple(damage.shape)}"
            )
        return out + self.w_d(damage)[:, None, None, :]


class FeedForward(nn.Sequential):
    def __init__(self, d_model: int, d_ff: int, dropout: float) -> None:
        super().__init__(nn.Linear(d_model, d_ff), nn.GELU(), nn.Dropout(dropout), nn.Linear(d_ff, d_model))


class SegmentMerge(nn.Module):
    """Склейка w_size соседних сегментов в один токен (ключи/значения временной стадии)."""

    def __init__(self, d_model: int, w_size: int) -> None:
        super().__init__()
        self.w_size = w_size
        if w_size > 1:
            self.norm = nn.LayerNorm(w_size * d_model)
            self.proj = nn.Linear(w_size * d_model, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (N, L, d)
        if self.w_size == 1:
            return x
        n, length, d = x.shape
        pad = (-length) % self.w_size
        if pad:
            x = torch.cat([x, x[:, -pad:, :]], dim=1)
        merged = x.reshape(n, -1, self.w_size * d)
        return self.proj(self.norm(merged))


class TwoStageAttentionLayer(nn.Module):
    """
    Стадия 1: для каждого канала внимание сегментов к склеенным окнам W_size.
    Стадия 2: для каждого сегмента c роутеров собирают информацию от D каналов,
    каналы затем читают из роутеров (стоимость O(D·c)).
    """

    def __init__(self, cfg: KinoConfig, dimension_stage: bool = True) -> None:
        super().__init__()
        d, heads, p = cfg.d_model, cfg.heads, cfg.dropout
        self.dimension_stage = dimension_stage

        self.merge = SegmentMerge(d, cfg.w_size)
        self.time_attention = nn.MultiheadAttention(d, heads, dropout=p, batch_first=True)
        self.norm1 = nn.LayerNorm(d)
        self.ff1 = FeedForward(d, cfg.d_ff, p)
        self.norm2 = nn.LayerNorm(d)

        self.routers = nn.Parameter(torch.zeros(cfg.n_segments, cfg.router_count, d))
        nn.init.trunc_normal_(self.routers, std=0.02)
        self.dim_sender = nn.MultiheadAttention(d, heads, dropout=p, batch_first=True)
        self.dim_receiver = nn.MultiheadAttention(d, heads, dropout=p, batch_first=True)
        self.norm3 = nn.LayerNorm(d)
        self.ff2 = FeedForward(d, cfg.d_ff, p)
        self.norm4 = nn.LayerNorm(d)
        self.dropout = nn.Dropout(p)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, length, dims, d = x.shape

        time_in = x.permute(0, 2, 1, 3).reshape(b * dims, length, d)
        kv = self.merge(time_in)
        time_enc, _ = self.time_attention(time_in, kv, kv, need_weights=False)
        h = self.norm1(time_in + self.dropout(time_enc))
        h = self.norm2(h + self.dropout(self.ff1(h)))
        h = h.reshape(b, dims, length, d).permute(0, 2, 1, 3)
        if not self.dimension_stage:
            return h

        send = h.reshape(b * length, dims, d)
        routers = self.routers.repeat(b, 1, 1)
        buffer, _ = self.dim_sender(routers, send, send, need_weights=False)
        receive, _ = self.dim_receiver(send, buffer, buffer, need_weights=False)
        out = self.norm3(send + self.dropout(receive))
        out = self.norm4(out + self.dropout(self.ff2(out)))
        return out.reshape(b, length, dims, d)


class TwoStageEncoder(nn.Module):
    def __init__(self, cfg: KinoConfig, dimension_stage: bool = True) -> None:
        super().__init__()
        self.layers = nn.ModuleList(
            TwoStageAttentionLayer(cfg, dimension_stage) for _ in range(cfg.enc_layers)
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        for layer in self.layers:
            z = layer(z)
        return z


class QueryDecoder(nn.Module):
    """
    Неавторегрессивный декодер: P позиционных запросов, первые P−1 получают W_u·u,
    последний только позиционный. Маски нет: все P состояний предсказываются совместно.
    """

    def __init__(self, cfg: KinoConfig) -> None:
        super().__init__()
        self.p = cfg.p
        self.query_pos = nn.Parameter(torch.zeros(cfg.p, cfg.d_model))
        nn.init.trunc_normal_(self.query_pos, std=0.02)
        self.w_u = nn.Linear(ACTION_DIM, cfg.d_model, bias=False)
        self.layers = nn.ModuleList(
            nn.TransformerDecoderLayer(
                d_model=cfg.d_model,
                nhead=cfg.heads,
                dim_feedforward=cfg.d_ff,
                dropout=cfg.dropout,
                activation="gelu",
                batch_first=True,
            )
            for _ in range(cfg.dec_layers)
        )
        self.head = nn.Linear(cfg.d_model, STATE_DIM)

    def queries(self, future_actions: torch.Tensor) -> torch.Tensor:
        if future_actions.ndim != 3 or future_actions.shape[1:] != (self.p - 1, ACTION_DIM):
            raise ShapeError(
                f"Будущие действия должны иметь форму (B, {self.p - 1}, 2), получено {tuple(future_actions.shape)}"
            )
        actions = F.pad(self.w_u(future_actions), (0, 0, 0, 1))
        return self.query_pos.unsqueeze(0) + actions

    def forward(self, memory: torch.Tensor, future_actions: torch.Tensor) -> torch.Tensor:
        q = self.queries(future_actions)
        for layer in self.layers:
            q = layer(q, memory)
        return self.head(q)


class KinoModel(nn.Module, ABC):
    """Общий интерфейс вариантов: forward(history, future_actions, damage) → (B, P, 6)."""

    variant: Variant

    def __init__(self, cfg: KinoConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.normalizer = ChannelNormalizer(cfg.n_channels)
        self.decoder = QueryDecoder(cfg)

    def _check_history(self, history: torch.Tensor) -> None:
        if history.ndim != 3 or history.shape[1:] != (self.cfg.h, self.cfg.n_channels):
            raise ShapeError(
                f"История должна иметь форму (B, {self.cfg.h}, {self.cfg.n_channels}), получено {tuple(history.shape)}"
            )

    @abstractmethod
    def encode(self, history: torch.Tensor, damage: Optional[torch.Tensor]) -> torch.Tensor:
        """Память энкодера (B, N, d_model) для декодера."""

    def forward(
        self,
        history: torch.Tensor,
        future_actions: torch.Tensor,
        damage: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        self._check_history(history)
        memory = self.encode(self.normalizer(history), damage)
        return self.decoder(memory, future_actions)


class SegmentedKinoModel(KinoModel):
    """Варианты zlik и clean: сегментное вложение + двухстадийный энкодер."""

    def __init__(self, cfg: KinoConfig, dimension_stage: bool = True) -> None:
        super().__init__(cfg)
        self.variant = cfg.variant
        conditioned = cfg.variant == Variant.ZLIK
        self.segment_embed = SegmentEmbedding(cfg.l_seg, cfg.d_model)
        self.inject = ContextInjection(
            cfg.n_segments, cfg.n_channels, cfg.d_model, cfg.d_damage if conditioned else None
        )
        self.encoder = TwoStageEncoder(cfg, dimension_stage)

    def encode_cells(self, history: torch.Tensor, damage: Optional[torch.Tensor]) -> torch.Tensor:
        """M_enc в форме (B, L, D, d_model)."""
        if self.variant == Variant.ZLIK and damage is None:
            raise ShapeError("Вариант zlik требует эмбеддинг повреждения")
        z0 = self.inject(self.segment_embed(history), damage)
        return self.encoder(z0)

    def encode(self, history: torch.Tensor, damage: Optional[torch.Tensor]) -> torch.Tensor:
        cells = self.encode_cells(history, damage)
        b, length, dims, d = cells.shape
        return cells.reshape(b, length * dims, d)


def two_stage_encoder_parameters(cfg: KinoConfig) -> int:
    """Число параметров энкодерной части zlik: E_seg + E_pos + слои TSA."""
    emb = cfg.l_seg * cfg.d_model + cfg.d_model
    pos = cfg.n_segments * cfg.n_channels * cfg.d_model
    return emb + pos + count_parameters(TwoStageEncoder(cfg))


def monolithic_d_ff(cfg: KinoConfig) -> int:
    """
    Ширина FFN монолитного энкодера, при которой его число параметров совпадает
    с энкодерной частью zlik (при равных слоях, головах и d_model).
    """
    if cfg.monolithic_d_ff is not None:
        return cfg.monolithic_d_ff
    d, n = cfg.d_model, cfg.enc_layers
    target = two_stage_encoder_parameters(cfg)
    fixed = (cfg.n_channels * d + d) + cfg.h * d + n * (4 * d * d + 4 * d + 4 * d + d)
    return max(1, int(round((target - fixed) / (n * (2 * d + 1)))))


class MonolithicKinoModel(KinoModel):
    """Один токен на шаг (D-вектор целиком), стандартный энкодер с полным self-attention."""

    def __init__(self, cfg: KinoConfig) -> None:
        super().__init__(cfg)
        self.variant = Variant.MONOLITHIC
        self.token_embed = nn.Linear(cfg.n_channels, cfg.d_model)
        self.pos = nn.Parameter(torch.zeros(1, cfg.h, cfg.d_model))
        nn.init.trunc_normal_(self.pos, std=0.02)
        self.w_d = nn.Linear(cfg.d_damage, cfg.d_model, bias=False)
        layer = nn.TransformerEncoderLayer(
            d_model=cfg.d_model,
            nhead=cfg.heads,
            dim_feedforward=monolithic_d_ff(cfg),
            dropout=cfg.dropout,
            activation="gelu",
            batch_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=cfg.enc_layers, enable_nested_tensor=False)

    def encode(self, history: torch.Tensor, damage: Optional[torch.Tensor]) -> torch.Tensor:
        if damage is None:
            raise ShapeError("Вариант monolithic требует эмбеддинг повреждения")
        if damage.ndim != 2 or damage.shape[1] != self.cfg.d_damage:
            raise ShapeError(
                f"Эмбеддинг повреждения должен иметь форму (B, {self.cfg.d_damage}), получено {tuple(damage.shape)}"
            )
        x = self.token_embed(history) + self.pos + self.w_d(damage)[:, None, :]
        return self.encoder(x)


def build_model(cfg: KinoConfig, dimension_stage: bool = True) -> KinoModel:
    if cfg.variant == Variant.MONOLITHIC:
        return MonolithicKinoModel(cfg)
    return SegmentedKinoModel(cfg, dimension_stage)


def is_conditioned(variant: Variant) -> bool:
    return variant in (Variant.ZLIK, Variant.MONOLITHIC)

