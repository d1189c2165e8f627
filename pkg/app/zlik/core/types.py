from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from app.zlik.errors import DomainError, LengthError

DT_DEFAULT = 0.05  # 20 Гц
V_MAX_DEFAULT = 5.0
OMEGA_MAX_DEFAULT = 1.5

STATE_FIELDS = ("x", "y", "z", "roll", "pitch", "yaw")
ACTION_FIELDS = ("v", "omega")
HISTORY_CHANNELS = ("dx", "dy", "dz", "droll", "dpitch", "dyaw", "v", "omega")


def _check_finite(values: tuple[float, ...], what: str) -> None:
    if not all(math.isfinite(v) for v in values):
        raise DomainError(f"{what}: все поля должны быть конечными, получено {values}")


@dataclass(frozen=True, slots=True)
class State:
    """
    6-DoF поза: x, y, z в метрах; roll, pitch, yaw в радианах из (−π, π].
    """
    x: float
    y: float
    z: float
    roll: float
    pitch: float
    yaw: float

    def __post_init__(self) -> None:
        values = self.as_tuple()
        _check_finite(values, "State")
        for name in ("roll", "pitch", "yaw"):
            a = getattr(self, name)
            if not (-math.pi < a <= math.pi):
                raise DomainError(f"State.{name}={a} вне (−π, π]")

    def as_tuple(self) -> tuple[float, ...]:
        return (self.x, self.y, self.z, self.roll, self.pitch, self.yaw)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.as_tuple(), dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> State:
        a = [float(v) for v in arr]
        return cls(*a)


@dataclass(frozen=True, slots=True)
class Action:
    """Команда: линейная скорость v (м/с) и угловая ω (рад/с)."""
    v: float
    omega: float

    def __post_init__(self) -> None:
        _check_finite((self.v, self.omega), "Action")

    def check_bounds(self, v_max: float = V_MAX_DEFAULT, omega_max: float = OMEGA_MAX_DEFAULT) -> None:
        if abs(self.v) > v_max or abs(self.omega) > omega_max:
            raise DomainError(
                f"Action ({self.v}, {self.omega}) вне границ |v| ≤ {v_max}, |ω| ≤ {omega_max}"
            )

    def as_array(self) -> np.ndarray:
        return np.asarray((self.v, self.omega), dtype=np.float64)


@dataclass(frozen=True, slots=True)
class RelativeStep:
    """Приращение позы в системе координат предыдущего шага."""
    dx: float
    dy: float
    dz: float
    droll: float
    dpitch: float
    dyaw: float

    def as_tuple(self) -> tuple[float, ...]:
        return (self.dx, self.dy, self.dz, self.droll, self.dpitch, self.dyaw)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    Траектория: states (N, 6) и actions (N, 2) попарно по шагам, постоянный dt.
    Массивы копируются и помечаются read-only.
    """
    states: np.ndarray
    actions: np.ndarray
    dt: float = DT_DEFAULT

    def __post_init__(self) -> None:
        states = np.array(self.states, dtype=np.float64, copy=True)
        actions = np.array(self.actions, dtype=np.float64, copy=True)
        if states.ndim != 2 or states.shape[1] != 6:
            raise LengthError(f"states должны иметь форму (N, 6), получено {states.shape}")
        if actions.ndim != 2 or actions.shape[1] != 2:
            raise LengthError(f"actions должны иметь форму (N, 2), получено {actions.shape}")
        if len(states) != len(actions):
            raise LengthError(f"|states|={len(states)} != |actions|={len(actions)}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise DomainError(f"dt должен быть > 0, получено {self.dt}")
        if not (np.isfinite(states).all() and np.isfinite(actions).all()):
            raise DomainError("Траектория содержит нечисловые значения")
        states.setflags(write=False)
        actions.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)

    def __len__(self) -> int:
        return len(self.states)

    def state(self, i: int) -> State:
        return State.from_array(self.states[i])

    def action(self, i: int) -> Action:
        v, w = self.actions[i]
        return Action(float(v), float(w))
