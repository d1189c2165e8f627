"""
Схема JSON-конфига эксперимента: секции sim / embed / align / kino / eval.

Все секции имеют значения по умолчанию (настольный профиль). Неизвестные ключи запрещены.
"""
from __future__ import annotations

import enum
import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.zlik.errors import ConfigError
from app.zlik.sim.damage import DamageClass

REFERENCE_MASS_KG = 1888.0


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _all_classes(n: int) -> dict[DamageClass, int]:
    return {c: n for c in DamageClass}


class SimConfig(_Section):
    dt: float = 0.05
    episode_len: int = 400

    k_v: float = 0.2
    k_omega: float = 0.3
    k_z: float = 0.02
    k_rp: float = 0.05
    axle_factor: float = 0.4
    v_cap_mtpsb: float = 1.0
    omega_wheel: float = 8.0

    noise_pos_std: float = 0.002
    noise_ang_std: float = 0.005

    v_max: float = 5.0
    omega_max: float = 1.5

    ou_theta: float = 0.5
    ou_sigma_v: float = 1.0
    ou_sigma_omega: float = 0.6

    random_severity: bool = False
    vehicle_mass_kg: float = REFERENCE_MASS_KG

    class_counts: dict[DamageClass, int] = Field(default_factory=lambda: _all_classes(600))
    val_fraction: float = 0.2
    workers: int = 1

    @model_validator(mode="after")
    def _check(self) -> SimConfig:
        if not self.dt > 0:
            raise ValueError("sim.dt должен быть > 0")
        if self.episode_len < 2:
            raise ValueError("sim.episode_len должен быть ≥ 2")
        coefs = (
            self.k_v, self.k_omega, self.k_z, self.k_rp, self.axle_factor, self.v_cap_mtpsb,
            self.omega_wheel, self.noise_pos_std, self.noise_ang_std, self.v_max, self.omega_max,
            self.ou_theta, self.ou_sigma_v, self.ou_sigma_omega,
        )
        if any(c < 0 for c in coefs):
            raise ValueError("коэффициенты симулятора должны быть ≥ 0")
        if self.vehicle_mass_kg <= 0:
            raise ValueError("sim.vehicle_mass_kg должен быть > 0")
        if any(n < 0 for n in self.class_counts.values()):
            raise ValueError("sim.class_counts должны быть ≥ 0")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("sim.val_fraction должен лежать в [0, 1)")
        if self.workers < 1:
            raise ValueError("sim.workers должен быть ≥ 1")
        return self

    @property
    def amplitude_scale(self) -> float:
        return (REFERENCE_MASS_KG / self.vehicle_mass_kg) ** 0.5


class EmbedConfig(_Section):
    provider: Literal["hashed", "table"] = "hashed"
    dim: int = 768
    table_path: Optional[str] = None

    @model_validator(mode="after")
    def _check(self) -> EmbedConfig:
        if self.dim <= 0:
            raise ValueError("embed.dim должен быть > 0")
        if self.provider == "table" and not self.table_path:
            raise ValueError("embed.table_path обязателен для provider=table")
        return self


class TrajEncoderConfig(_Section):
    layers: int = 3
    heads: int = 8
    hidden: int = 128
    ff: int = 512
    dropout: float = 0.2


class ProjectionConfig(_Section):
    hidden: tuple[int, ...] = (256, 256)
    out: int = 128


class VicRegWeights(_Section):
    lam: float = 25.0
    mu: float = 10.0
    nu: float = 0.1
    gamma: float = 1.0
    eps: float = 1e-4

    @model_validator(mode="after")
    def _check(self) -> VicRegWeights:
        if min(self.lam, self.mu, self.nu, self.gamma) < 0 or self.eps <= 0:
            raise ValueError("веса VICReg должны быть ≥ 0, eps > 0")
        return self


class OptimConfig(_Section):
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 50
    weight_decay: float = 0.0
    grad_clip: Optional[float] = None


class AlignConfig(_Section):
    h_align: int = 200
    window_stride: Optional[int] = None
    encoder: TrajEncoderConfig = TrajEncoderConfig()
    projection: ProjectionConfig = ProjectionConfig()
    vicreg: VicRegWeights = VicRegWeights()
    optimizer: OptimConfig = OptimConfig()

    @model_validator(mode="after")
    def _check(self) -> AlignConfig:
        if self.h_align < 1:
            raise ValueError("align.h_align должен быть ≥ 1")
        if self.projection.out <= 0:
            raise ValueError("align.projection.out (K) должен быть > 0")
        if self.encoder.hidden % self.encoder.heads:
            raise ValueError("align.encoder.hidden должен делиться на heads")
        return self

    @property
    def stride(self) -> int:
        return self.window_stride or max(1, self.h_align // 2)


class Variant(str, enum.Enum):
    ZLIK = "zlik"
    CLEAN = "clean"
    MONOLITHIC = "monolithic"


class KinoTrainConfig(_Section):
    lr: float = 5e-4
    batch_size: int = 256
    epochs: int = 30
    grad_clip: float = 1.0
    weight_decay: float = 0.0
    window_stride: int = 1
    max_windows_per_epoch: Optional[int] = None
    classes: Optional[list[DamageClass]] = None


class KinoConfig(_Section):
    h: int = 40
    p: int = 10
    l_seg: int = 4
    d_model: int = 256
    enc_layers: int = 3
    dec_layers: int = 4
    heads: int = 4
    router_count: int = 10
    d_ff: int = 512
    dropout: float = 0.2
    w_size: int = 2
    d_damage: int = 128
    n_channels: int = 8
    variant: Variant = Variant.ZLIK
    monolithic_d_ff: Optional[int] = None
    train: KinoTrainConfig = KinoTrainConfig()

    @model_validator(mode="after")
    def _check(self) -> KinoConfig:
        if self.h % self.l_seg:
            raise ValueError(f"kino.h={self.h} должен делиться на l_seg={self.l_seg}")
        if self.d_model % self.heads:
            raise ValueError(f"kino.d_model={self.d_model} должен делиться на heads={self.heads}")
        if self.p < 1 or self.w_size < 1 or self.router_count < 1:
            raise ValueError("kino.p, w_size, router_count должны быть ≥ 1")
        return self

    @property
    def n_segments(self) -> int:
        return self.h // self.l_seg


class EvalConfig(_Section):
    batch_size: int = 512
    window_stride: int = 1
    confusion_classes: list[DamageClass] = Field(
        default_factory=lambda: [
            DamageClass.BROKEN_AXLE,
            DamageClass.FALL,
            DamageClass.NO_DAMAGE,
            DamageClass.MTPSB,
        ]
    )
    models: list[Variant] = Field(
        default_factory=lambda: [Variant.ZLIK, Variant.CLEAN, Variant.MONOLITHIC]
    )
    clean_train_classes: list[DamageClass] = Field(default_factory=lambda: [DamageClass.NO_DAMAGE])
    finetune_classes: list[DamageClass] = Field(
        default_factory=lambda: [DamageClass.FALL, DamageClass.BROKEN_AXLE]
    )
    finetune_budgets_s: list[float] = Field(default_factory=lambda: [20.0, 300.0, 600.0])
    finetune_steps: int = 300
    finetune_lr: float = 1e-4
    finetune_batch_size: int = 64

    test_class_counts: dict[DamageClass, int] = Field(default_factory=lambda: _all_classes(100))
    test_vehicle_mass_kg: float = 1315.0

    train_dataset: Optional[str] = None
    test_dataset: Optional[str] = None
    confusion_dataset: Optional[str] = None
    align_checkpoint: Optional[str] = None
    checkpoints: dict[Variant, str] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check(self) -> EvalConfig:
        if len(self.confusion_classes) < 2:
            raise ValueError("eval.confusion_classes: нужно ≥ 2 классов")
        if any(b <= 0 for b in self.finetune_budgets_s):
            raise ValueError("eval.finetune_budgets_s должны быть > 0")
        return self


class ExperimentConfig(_Section):
    sim: SimConfig = SimConfig()
    embed: EmbedConfig = EmbedConfig()
    align: AlignConfig = AlignConfig()
    kino: KinoConfig = KinoConfig()
    eval: EvalConfig = EvalConfig()

    @classmethod
    def load(cls, path: str | Path | None) -> ExperimentConfig:
        """Читает JSON-конфиг; None → значения по умолчанию."""
        if path is None:
            return cls()
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"Конфиг не найден: {p}")
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"Конфиг {p} не является JSON: {e}") from e
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> ExperimentConfig:
        try:
            return cls.model_validate(raw)
        except ValidationError as e:
            raise ConfigError(f"Некорректный конфиг: {e}") from e


def canonical_json(model: BaseModel | dict) -> str:
    data = model.model_dump(mode="json") if isinstance(model, BaseModel) else model
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(model: BaseModel | dict) -> str:
    return hashlib.sha256(canonical_json(model).encode("utf-8")).hexdigest()
