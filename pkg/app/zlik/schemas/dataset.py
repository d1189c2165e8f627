"""
Формат датасета: JSONL с одной записью эпизода на строку + manifest.json.
"""
from __future__ import annotations

import enum
import json
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.zlik.core.types import Trajectory
from app.zlik.sim.damage import DamageClass, DamageSpec

FORMAT_VERSION = "zlik-ds-1"
EPISODES_FILE = "episodes.jsonl"
MANIFEST_FILE = "manifest.json"

U64_MAX = 2**64 - 1


class SeedStream(int, enum.Enum):
    """Поток сидов: два старших бита 64-битного сида эпизода."""
    TRAIN = 0
    TEST = 1
    FINETUNE = 2
    CONFUSION = 3


class EpisodeRecord(BaseModel):
    """
    Один собранный эпизод. Траектория воспроизводится из (damage, seed, sim-конфиг),
    описание из (damage, seed).
    """
    model_config = ConfigDict(
        extra="forbid", frozen=True, populate_by_name=True, arbitrary_types_allowed=True
    )

    episode_id: str
    damage_class: DamageClass = Field(alias="class")
    damage: DamageSpec
    description: str
    seed: int = Field(ge=0, le=U64_MAX)
    dt: float = Field(gt=0)
    states: np.ndarray
    actions: np.ndarray

    @field_validator("states", "actions", mode="before")
    @classmethod
    def _as_array(cls, v) -> np.ndarray:
        arr = np.asarray(v, dtype=np.float64)
        if arr.ndim == 1 and arr.size == 0:
            arr = arr.reshape(0, 0)
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _check(self) -> EpisodeRecord:
        if self.damage.damage_class != self.damage_class:
            raise ValueError(
                f"class={self.damage_class.value} не совпадает с damage.class={self.damage.damage_class.value}"
            )
        if len(self.states) != len(self.actions):
            raise ValueError("|states| != |actions|")
        if self.states.ndim != 2 or self.states.shape[1] != 6 or self.actions.shape[1:] != (2,):
            raise ValueError("states должны быть 6-векторами, actions 2-векторами")
        if not self.description:
            raise ValueError("description пуст")
        return self

    @property
    def trajectory(self) -> Trajectory:
        return Trajectory(states=self.states, actions=self.actions, dt=self.dt)

    @classmethod
    def from_trajectory(
        cls,
        episode_id: str,
        damage: DamageSpec,
        description: str,
        seed: int,
        traj: Trajectory,
    ) -> EpisodeRecord:
        return cls(
            episode_id=episode_id,
            damage_class=damage.damage_class,
            damage=damage,
            description=description,
            seed=seed,
            dt=traj.dt,
            states=traj.states,
            actions=traj.actions,
        )

    def to_json_line(self) -> str:
        # json.dumps пишет float через repr: точность round-trip
        data = {
            "episode_id": self.episode_id,
            "class": self.damage_class.value,
            "damage": self.damage.to_json_dict(),
            "description": self.description,
            "seed": self.seed,
            "dt": self.dt,
            "states": self.states.tolist(),
            "actions": self.actions.tolist(),
        }
        return json.dumps(data, ensure_ascii=False, separators=(",", ":"))


class DatasetSplit(BaseModel):
    train: list[str] = Field(default_factory=list)
    val: list[str] = Field(default_factory=list)


class DatasetManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    format_version: Literal["zlik-ds-1"] = FORMAT_VERSION
    seed: int = Field(ge=0, le=U64_MAX)
    stream: SeedStream
    sim_config: dict
    config_hash: str
    class_counts: dict[DamageClass, int]
    episodes: int
    steps: int
    split: DatasetSplit
