from __future__ import annotations

import math

import numpy as np

from app.zlik.schemas.config import SimConfig


def _ou_coefficients(theta: float, sigma: float, dt: float) -> tuple[float, float]:
    """Точная дискретизация OU: a' = a·decay + scale·ξ."""
    if theta == 0.0:
        return 1.0, sigma * math.sqrt(dt)
    decay = math.exp(-theta * dt)
    scale = sigma * math.sqrt((1.0 - decay * decay) / (2.0 * theta))
    return decay, scale


def random_walk_policy(
    rng: np.random.Generator,
    config: SimConfig,
    n_steps: int | None = None,
) -> np.ndarray:
    """
    Случайное блуждание по (v, ω): процесс Орнштейна–Уленбека с возвратом к нулю,
    обрезанный границами (v_max, ω_max). Возвращает (n_steps, 2).
    """
    n = config.episode_len if n_steps is None else n_steps
    if n <= 0:
        raise ValueError("episode_len должен быть > 0")
    dv, sv = _ou_coefficients(config.ou_theta, config.ou_sigma_v, config.dt)
    dw, sw = _ou_coefficients(config.ou_theta, config.ou_sigma_omega, config.dt)
    noise = rng.standard_normal((n, 2))

    actions = np.empty((n, 2), dtype=np.float64)
    v = w = 0.0
    for k in range(n):
        v = min(max(v * dv + sv * noise[k, 0], -config.v_max), config.v_max)
        w = min(max(w * dw + sw * noise[k, 1], -config.omega_max), config.omega_max)
        actions[k, 0] = v
        actions[k, 1] = w
    return actions
