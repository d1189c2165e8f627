"""
Угловая арифметика и переходы в относительные системы координат.

Входы модели: приращения между соседними шагами в системе предыдущей позы.
Цели модели: будущие позы в системе опорной позы s_t (опора фиксирована, не по цепочке).
roll/pitch сравниваются простой обёрнутой разностью без композиции SO(3).
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from app.zlik.core.types import Action, RelativeStep, State, Trajectory
from app.zlik.errors import DomainError, LengthError

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Приводит угол к (−π, π]. Значения уже из диапазона возвращаются без изменений."""
    if not math.isfinite(a):
        raise DomainError(f"Угол должен быть конечным, получено {a}")
    if -math.pi < a <= math.pi:
        return a
    r = math.fmod(a + math.pi, TWO_PI)
    if r < 0.0:
        r += TWO_PI
    r -= math.pi
    if r <= -math.pi:
        r = math.pi
    return r


def wrap_angles(a: np.ndarray) -> np.ndarray:
    """Векторная версия wrap_angle."""
    a = np.asarray(a, dtype=np.float64)
    if not np.isfinite(a).all():
        raise DomainError("Углы должны быть конечными")
    r = np.mod(a + np.pi, TWO_PI) - np.pi
    r = np.where(r <= -np.pi, np.pi, r)
    return np.where((a > -np.pi) & (a <= np.pi), a, r)


def relative_steps(prev: np.ndarray, nxt: np.ndarray) -> np.ndarray:
    """
    Построчный relative_step для массивов поз (..., 6) → (..., 6).
    """
    prev = np.asarray(prev, dtype=np.float64)
    nxt = np.asarray(nxt, dtype=np.float64)
    if prev.shape != nxt.shape or prev.shape[-1] != 6:
        raise LengthError(f"Ожидались позы одинаковой формы (..., 6): {prev.shape} vs {nxt.shape}")
    yaw = prev[..., 5]
    c, s = np.cos(yaw), np.sin(yaw)
    px = nxt[..., 0] - prev[..., 0]
    py = nxt[..., 1] - prev[..., 1]
    out = np.empty_like(prev)
    out[..., 0] = c * px + s * py
    out[..., 1] = -s * px + c * py
    out[..., 2] = nxt[..., 2] - prev[..., 2]
    out[..., 3:6] = wrap_angles(nxt[..., 3:6] - prev[..., 3:6])
    return out


def relative_step(prev: State, nxt: State) -> RelativeStep:
    row = relative_steps(prev.as_array(), nxt.as_array())
    return RelativeStep(*(float(v) for v in row))


def relative_history_array(traj: Trajectory) -> np.ndarray:
    """
    История в каналах (dx, dy, dz, droll, dpitch, dyaw, v, ω), форма (N−1, 8).

    Элемент k (k ≥ 1) — приращение s_{k−1} → s_k и действие u_k.
    """
    if len(traj) < 2:
        raise LengthError(f"Нужно минимум 2 состояния, получено {len(traj)}")
    rel = relative_steps(traj.states[:-1], traj.states[1:])
    return np.concatenate([rel, traj.actions[1:]], axis=1)


def to_relative_history(traj: Trajectory) -> list[tuple[RelativeStep, Action]]:
    arr = relative_history_array(traj)
    return [
        (RelativeStep(*(float(v) for v in row[:6])), Action(float(row[6]), float(row[7])))
        for row in arr
    ]


def relative_targets_array(anchor: np.ndarray, future: np.ndarray) -> np.ndarray:
    """Будущие позы (P, 6) в системе опорной позы anchor (6,)."""
    future = np.asarray(future, dtype=np.float64)
    if future.ndim != 2 or len(future) == 0:
        raise LengthError("Будущая последовательность поз пуста")
    anchor = np.broadcast_to(np.asarray(anchor, dtype=np.float64), future.shape)
    return relative_steps(anchor, future)


def to_relative_targets(anchor: State, future: Sequence[State]) -> np.ndarray:
    if len(future) == 0:
        raise LengthError("Будущая последовательность поз пуста")
    return relative_targets_array(anchor.as_array(), np.stack([s.as_array() for s in future]))


def to_world(anchor: State, relative: np.ndarray) -> np.ndarray:
    """Обратное к to_relative_targets: позы (P, 6) из системы anchor в мировую."""
    relative = np.asarray(relative, dtype=np.float64)
    c, s = math.cos(anchor.yaw), math.sin(anchor.yaw)
    out = np.empty_like(relative)
    out[:, 0] = anchor.x + c * relative[:, 0] - s * relative[:, 1]
    out[:, 1] = anchor.y + s * relative[:, 0] + c * relative[:, 1]
    out[:, 2] = anchor.z + relative[:, 2]
    out[:, 3:6] = wrap_angles(np.asarray(anchor.as_tuple()[3:6]) + relative[:, 3:6])
    return out


def integrate_history(first: State, history: np.ndarray) -> np.ndarray:
    """
    Восстанавливает позы по цепочке приращений истории, начиная с first.
    Возвращает (len(history) + 1, 6).
    """
    poses = np.empty((len(history) + 1, 6), dtype=np.float64)
    poses[0] = first.as_array()
    for k, row in enumerate(np.asarray(history, dtype=np.float64)):
        x, y, z, roll, pitch, yaw = poses[k]
        c, s = math.cos(yaw), math.sin(yaw)
        poses[k + 1, 0] = x + c * row[0] - s * row[1]
        poses[k + 1, 1] = y + s * row[0] + c * row[1]
        poses[k + 1, 2] = z + row[2]
        poses[k + 1, 3] = wrap_angle(roll + row[3])
        poses[k + 1, 4] = wrap_angle(pitch + row[4])
        poses[k + 1, 5] = wrap_angle(yaw + row[5])
    return poses
