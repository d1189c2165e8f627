from __future__ import annotations

import numpy as np
import torch
from torch import nn


class ChannelNormalizer(nn.Module):
    """
    Стандартизация входных каналов статистиками обучающей выборки.
    Статистики хранятся буферами и попадают в state_dict чекпоинта.
    """

    def __init__(self, n_channels: int, min_std: float = 1e-6) -> None:
        super().__init__()
        self.min_std = min_std
        self.register_buffer("mean", torch.zeros(n_channels))
        self.register_buffer("std", torch.ones(n_channels))

    @torch.no_grad()
    def set_stats(self, mean: np.ndarray | torch.Tensor, std: np.ndarray | torch.Tensor) -> None:
        mean = torch.as_tensor(mean, dtype=self.mean.dtype)
        std = torch.as_tensor(std, dtype=self.std.dtype).clamp_min(self.min_std)
        self.mean.copy_(mean)
        self.std.copy_(std)

    @torch.no_grad()
    def fit(self, x: np.ndarray | torch.Tensor) -> None:
        """x: (..., C). Среднее и std по всем осям, кроме последней."""
        x = torch.as_tensor(x, dtype=torch.float64).reshape(-1, self.mean.shape[0])
        self.set_stats(x.mean(dim=0), x.std(dim=0, unbiased=False))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return (x - self.mean) / self.std
