from __future__ import annotations

import enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.zlik.errors import DamageSpecError


class DamageClass(str, enum.Enum):
    NO_DAMAGE = "no_damage"
    TIRE_PUNCTURE = "tire_puncture"
    TIRE_AND_SPRING = "tire_and_spring"
    MTPSB = "mtpsb"
    BROKEN_AXLE = "broken_axle"
    FALL = "fall"


class Wheel(int, enum.Enum):
    FL = 0
    FR = 1
    RL = 2
    RR = 3

    @property
    def is_front(self) -> bool:
        return self in (Wheel.FL, Wheel.FR)

    @property
    def is_left(self) -> bool:
        return self in (Wheel.FL, Wheel.RL)


DAMAGED_CLASSES = tuple(c for c in DamageClass if c != DamageClass.NO_DAMAGE)

# Соседние пары колёс: ось спереди/сзади и борт слева/справа (диагонали не соседние)
ADJACENT_PAIRS = (
    (Wheel.FL, Wheel.FR),
    (Wheel.RL, Wheel.RR),
    (Wheel.FL, Wheel.RL),
    (Wheel.FR, Wheel.RR),
)

Quad = tuple[float, float, float, float]


class DamageSpec(BaseModel):
    """
    Структурированное описание повреждения (ground truth).

    Порядок колёс в векторах степеней: FL, FR, RL, RR. axle_broken: (передняя, задняя).
    fall_height_m задаётся только для класса FALL.
    """
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    damage_class: DamageClass = Field(alias="class")
    tire_severity: Quad = (0.0, 0.0, 0.0, 0.0)
    spring_severity: Quad = (0.0, 0.0, 0.0, 0.0)
    axle_broken: tuple[bool, bool] = (False, False)
    fall_height_m: Optional[float] = None

    @field_validator("tire_severity", "spring_severity")
    @classmethod
    def _severity_range(cls, v: Quad) -> Quad:
        if any(not (0.0 <= s <= 1.0) for s in v):
            raise ValueError(f"степени повреждения должны лежать в [0, 1], получено {v}")
        return v

    @model_validator(mode="after")
    def _class_invariants(self) -> DamageSpec:
        tires = self.tire_severity
        springs = self.spring_severity
        tire_w = [i for i, s in enumerate(tires) if s > 0]
        spring_w = [i for i, s in enumerate(springs) if s > 0]
        axles = sum(self.axle_broken)
        cls_ = self.damage_class

        if cls_ != DamageClass.FALL and self.fall_height_m is not None:
            raise ValueError("fall_height_m допустим только для класса fall")
        if cls_ == DamageClass.NO_DAMAGE:
            if tire_w or spring_w or axles:
                raise ValueError("no_damage: все степени должны быть 0, оси целы")
        elif cls_ == DamageClass.TIRE_PUNCTURE:
            if len(tire_w) != 1 or spring_w or axles:
                raise ValueError("tire_puncture: ровно одна шина > 0, пружины 0, оси целы")
        elif cls_ == DamageClass.TIRE_AND_SPRING:
            if len(tire_w) != 1 or tire_w != spring_w or axles:
                raise ValueError("tire_and_spring: шина и пружина одного колеса, остальные 0")
        elif cls_ == DamageClass.MTPSB:
            both = {i for i in tire_w if i in spring_w}
            if not any(a in both and b in both for a, b in ADJACENT_PAIRS):
                raise ValueError("mtpsb: нужны ≥ 2 соседних колеса с шиной и пружиной > 0")
        elif cls_ == DamageClass.BROKEN_AXLE:
            if axles != 1 or tire_w or spring_w:
                raise ValueError("broken_axle: ровно одна сломанная ось, степени 0")
        elif cls_ == DamageClass.FALL:
            if self.fall_height_m is not None and self.fall_height_m < 0:
                raise ValueError("fall_height_m должен быть ≥ 0")
        return self

    @property
    def corner_severity(self) -> np.ndarray:
        """Суммарная степень (шина + пружина) по углам."""
        return np.asarray(self.tire_severity) + np.asarray(self.spring_severity)

    def to_json_dict(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)

    @classmethod
    def parse(cls, data: dict) -> DamageSpec:
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise DamageSpecError(str(e)) from e


def make_damage(**kwargs) -> DamageSpec:
    """Создаёт DamageSpec, превращая ошибки валидации в DamageSpecError."""
    if "damage_class" in kwargs:
        kwargs["class"] = kwargs.pop("damage_class")
    return DamageSpec.parse(kwargs)


def _severity(rng: np.random.Generator, random_severity: bool) -> float:
    if random_severity:
        return float(rng.uniform(0.5, 1.0))
    return 1.0


def sample_damage(
    damage_class: DamageClass,
    rng: np.random.Generator,
    random_severity: bool = False,
) -> DamageSpec:
    """
    Случайное повреждение заданного класса.

    Дискретные классы по умолчанию имеют степень 1.0 (random_severity → U[0.5, 1]).
    FALL: каждая из 8 компонент включается с p=0.5 со степенью U[0.3, 1], каждая ось с p=0.25,
    высота падения U[5, 15] м.
    """
    tires = [0.0] * 4
    springs = [0.0] * 4
    axles = [False, False]
    height = None

    if damage_class == DamageClass.TIRE_PUNCTURE:
        w = int(rng.integers(4))
        tires[w] = _severity(rng, random_severity)
    elif damage_class == DamageClass.TIRE_AND_SPRING:
        w = int(rng.integers(4))
        tires[w] = _severity(rng, random_severity)
        springs[w] = _severity(rng, random_severity)
    elif damage_class == DamageClass.MTPSB:
        a, b = ADJACENT_PAIRS[int(rng.integers(len(ADJACENT_PAIRS)))]
        for w in (a, b):
            tires[w] = _severity(rng, random_severity)
            springs[w] = _severity(rng, random_severity)
    elif damage_class == DamageClass.BROKEN_AXLE:
        axles[int(rng.integers(2))] = True
    elif damage_class == DamageClass.FALL:
        for w in range(4):
            if rng.random() < 0.5:
                tires[w] = float(rng.uniform(0.3, 1.0))
            if rng.random() < 0.5:
                springs[w] = float(rng.uniform(0.3, 1.0))
        axles = [bool(rng.random() < 0.25), bool(rng.random() < 0.25)]
        height = float(rng.uniform(5.0, 15.0))

    return DamageSpec(
        damage_class=damage_class,
        tire_severity=tuple(tires),
        spring_severity=tuple(springs),
        axle_broken=tuple(axles),
        fall_height_m=height,
    )
