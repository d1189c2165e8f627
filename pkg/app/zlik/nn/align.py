"""
Модули выравнивания: энкодер траектории, MLP-проекции h_σ (текст) и h_ζ (траектория).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import torch
from torch import nn

from app.zlik.core.types import HISTORY_CHANNELS
from app.zlik.errors import DomainError, ShapeError
from app.zlik.nn.normalize import ChannelNormalizer
from app.zlik.schemas.config import AlignConfig, ProjectionConfig, TrajEncoderConfig


@dataclass(frozen=True, eq=False)
class DamageEmbedding:
    """z_x (source="text") или z_τ (source="trajectory"), K чисел."""
    z: np.ndarray
    source: Literal["text", "trajectory"] = "text"

    def __post_init__(self) -> None:
        if not np.isfinite(self.z).all():
            raise DomainError("Эмбеддинг повреждения содержит нечисловые значения")


class TrajectoryEncoder(nn.Module):
    """
    Пошаговая линейная проекция + обучаемые позиции, self-attention, среднее по времени.
    Вход (B, H_align, 8), выход (B, hidden).
    """

    def __init__(self, h_align: int, cfg: TrajEncoderConfig, n_channels: int = len(HISTORY_CHANNELS)) -> None:
        super().__init__()
        self.h_align = h_align
        self.n_channels = n_channels
        self.input_proj = nn.Linear(n_channels, cfg.hidden)
        self.pos = nn.Parameter(torch.zeros(1, h_align, cfg.hidden))
        nn.init.trunc_normal_(self.pos, std=0.02)
        layer = nn.TransformerEncoderLayer(
            d_model=cfg.hidden,
            nhead=cfg.heads,
            dim_feedforward=cfg.ff,
            dropout=cfg.dropout,
            activation="gelu",
            batch_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=cfg.layers, enable_nested_tensor=False)

    def forward(self, hist: torch.Tensor) -> torch.Tensor:
        if hist.ndim != 3 or hist.shape[1:] != (self.h_align, self.n_channels):
            raise ShapeError(
                f"История должна иметь форму (B, {self.h_align}, {self.n_channels}), получено {tuple(hist.shape)}"
            )
        x = self.input_proj(hist) + self.pos
        return self.encoder(x).mean(dim=1)


class ProjectionHead(nn.Module):
    """MLP [in → hidden... → out] с BatchNorm + ReLU между слоями, последний слой линейный."""

    def __init__(self, in_dim: int, cfg: ProjectionConfig) -> None:
        super().__init__()
        self.in_dim = in_dim
        layers: list[nn.Module] = []
        prev = in_dim
        for width in cfg.hidden:
            layers += [nn.Linear(prev, width), nn.BatchNorm1d(width), nn.ReLU()]
            prev = width
        layers.append(nn.Linear(prev, cfg.out))
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"Вход проекции должен иметь форму (B, {self.in_dim}), получено {tuple(x.shape)}")
        return self.net(x)


class AlignmentModel(nn.Module):
    def __init__(self, cfg: AlignConfig, text_dim: int) -> None:
        super().__init__()
        self.text_dim = text_dim
        self.normalizer = ChannelNormalizer(len(HISTORY_CHANNELS))
        self.traj_encoder = TrajectoryEncoder(cfg.h_align, cfg.encoder)
        self.traj_head = ProjectionHead(cfg.encoder.hidden, cfg.projection)
        self.text_head = ProjectionHead(text_dim, cfg.projection)

    def encode_trajectory(self, hist: torch.Tensor) -> torch.Tensor:
        return self.traj_encoder(self.normalizer(hist))

    def project_trajectory(self, hist: torch.Tensor) -> torch.Tensor:
        """z_τ = h_ζ(encoder(τ))."""
        return self.traj_head(self.encode_trajectory(hist))

    def project_text(self, phi: torch.Tensor) -> torch.Tensor:
        """z_x = h_σ(φ(x))."""
        return self.text_head(phi)

    def forward(self, phi: torch.Tensor, hist: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.project_text(phi), self.project_trajectory(hist)

    def freeze_text_head(self) -> ProjectionHead:
        """Переводит h_σ в eval (статистики BatchNorm фиксированы) и отключает градиенты."""
        self.text_head.eval()
        for p in self.text_head.parameters():
            p.requires_grad_(False)
        return self.text_head
