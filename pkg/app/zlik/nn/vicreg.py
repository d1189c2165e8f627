"""
VICReg: инвариантность (MSE), дисперсия (hinge на std по измерениям), ковариация
(сумма квадратов внедиагональных элементов).
"""
from __future__ import annotations

from typing import NamedTuple, Optional

import torch

from app.zlik.errors import DomainError, ShapeError
from app.zlik.schemas.config import VicRegWeights


class VicRegTerms(NamedTuple):
    total: torch.Tensor
    invariance: torch.Tensor
    variance_x: torch.Tensor
    variance_tau: torch.Tensor
    covariance_x: torch.Tensor
    covariance_tau: torch.Tensor

    @property
    def variance(self) -> torch.Tensor:
        return self.variance_x + self.variance_tau

    @property
    def covariance(self) -> torch.Tensor:
        return self.covariance_x + self.covariance_tau

    def as_floats(self) -> dict[str, float]:
        return {name: float(value.detach()) for name, value in self._asdict().items()}


def invariance_term(y_x: torch.Tensor, y_tau: torch.Tensor) -> torch.Tensor:
    """(1/N)·Σ‖y_x⁽ⁱ⁾ − y_τ⁽ⁱ⁾‖²."""
    return ((y_x - y_tau) ** 2).sum(dim=1).mean()


def variance_term(y: torch.Tensor, gamma: float, eps: float) -> torch.Tensor:
    std = torch.sqrt(y.var(dim=0) + eps)
    return torch.relu(gamma - std).mean()


def covariance_term(y: torch.Tensor) -> torch.Tensor:
    n, k = y.shape
    centered = y - y.mean(dim=0)
    cov = centered.T @ centered / (n - 1)
    off_diag = cov - torch.diag(torch.diagonal(cov))
    return (off_diag ** 2).sum() / k


def vicreg_loss(
    y_x: torch.Tensor,
    y_tau: torch.Tensor,
    weights: Optional[VicRegWeights] = None,
) -> VicRegTerms:
    weights = weights or VicRegWeights()
    if y_x.ndim != 2 or y_x.shape != y_tau.shape:
        raise ShapeError(f"Формы Y_x {tuple(y_x.shape)} и Y_τ {tuple(y_tau.shape)} должны совпадать (N, K)")
    if y_x.shape[0] < 2:
        raise DomainError(f"VICReg требует N ≥ 2, получено N={y_x.shape[0]}")

    s = invariance_term(y_x, y_tau)
    v_x = variance_term(y_x, weights.gamma, weights.eps)
    v_tau = variance_term(y_tau, weights.gamma, weights.eps)
    c_x = covariance_term(y_x)
    c_tau = covariance_term(y_tau)
    total = weights.lam * s + weights.mu * (v_x + v_tau) + weights.nu * (c_x + c_tau)
    return VicRegTerms(total, s, v_x, v_tau, c_x, c_tau)
