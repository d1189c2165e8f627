"""
Обучение модели кинодинамики (MSE по относительным будущим позам) и дообучение на k секундах
данных после повреждения.
"""
from __future__ import annotations

import copy
import logging
import math
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import torch
import torch.nn.functional as F
from tqdm import tqdm

from app.zlik.embed.providers import EmbeddingProvider
from app.zlik.errors import ConfigError, DomainError
from app.zlik.nn.align import AlignmentModel
from app.zlik.nn.kino import KinoModel, ModelInput, Prediction, build_model, is_conditioned
from app.zlik.schemas.checkpoint import CheckpointKind, CheckpointMeta
from app.zlik.schemas.config import ExperimentConfig, KinoConfig, SimConfig, Variant, config_hash
from app.zlik.schemas.dataset import SeedStream
from app.zlik.services import checkpoint_service
from app.zlik.services.alignment_service import embed_descriptions
from app.zlik.services.dataset_service import Dataset, episode_seed, make_episode
from app.zlik.services.window_service import WindowBatch, WindowSet
from app.zlik.settings import config as settings
from app.zlik.sim.damage import DamageClass

logger = logging.getLogger(__name__)


def kino_windows(records, kcfg: KinoConfig, stride: int, descriptions: Optional[list[str]] = None) -> WindowSet:
    return WindowSet(records, h=kcfg.h, p=kcfg.p, stride=stride, descriptions=descriptions)


def damage_table(
    descriptions: list[str],
    variant: Variant,
    provider: Optional[EmbeddingProvider],
    align_model: Optional[AlignmentModel],
) -> Optional[torch.Tensor]:
    """z_x, вычисленные один раз на каждое различное описание; None для варианта clean."""
    if not is_conditioned(variant):
        return None
    if provider is None or align_model is None:
        raise ConfigError(f"Вариант {variant.value} требует чекпоинт выравнивания и провайдер эмбеддингов")
    return embed_descriptions(descriptions, provider, align_model)


def batch_damage(batch: WindowBatch, z_table: Optional[torch.Tensor]) -> Optional[torch.Tensor]:
    return None if z_table is None else z_table[batch.desc_idx]


def _step(model: KinoModel, batch: WindowBatch, z_table, optimizer, grad_clip: Optional[float]) -> float:
    pred = model(batch.history, batch.future_actions, batch_damage(batch, z_table))
    loss = F.mse_loss(pred, batch.targets)
    optimizer.zero_grad()
    loss.backward()
    if grad_clip:
        torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    return float(loss.detach())


@torch.no_grad()
def window_mse(model: KinoModel, ws: WindowSet, z_table, batch_size: int) -> float:
    model.eval()
    total, count = 0.0, 0
    for batch in ws.batches(batch_size):
        pred = model(batch.history, batch.future_actions, batch_damage(batch, z_table))
        total += float(F.mse_loss(pred, batch.targets, reduction="sum"))
        count += batch.targets.numel()
    return total / count if count else float("nan")


def train_kino(
    dataset: Dataset,
    cfg: ExperimentConfig,
    seed: int,
    provider: Optional[EmbeddingProvider] = None,
    align_model: Optional[AlignmentModel] = None,
    align_meta: Optional[CheckpointMeta] = None,
    variant: Optional[Variant] = None,
    classes: Optional[Iterable[DamageClass]] = None,
    dimension_stage: bool = True,
    out_dir: Optional[str | Path] = None,
) -> tuple[KinoModel, CheckpointMeta, dict]:
    kcfg = cfg.kino if variant is None else cfg.kino.model_copy(update={"variant": variant})
    tcfg = kcfg.train
    classes = list(classes) if classes is not None else tcfg.classes
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)

    if is_conditioned(kcfg.variant) and align_model is None:
        raise ConfigError(f"Для варианта {kcfg.variant.value} нужен чекпоинт выравнивания")
    if align_model is not None and is_conditioned(kcfg.variant):
        k_out = align_model.text_head.net[-1].out_features
        if k_out != kcfg.d_damage:
            raise ConfigError(f"kino.d_damage={kcfg.d_damage} не совпадает с размерностью z_x={k_out}")

    train_ws = kino_windows(dataset.select("train", classes), kcfg, tcfg.window_stride)
    val_ws = kino_windows(dataset.select("val", classes), kcfg, tcfg.window_stride)
    if len(train_ws) == 0:
        raise ConfigError("Нет обучающих окон для модели кинодинамики")
    z_train = damage_table(train_ws.descriptions, kcfg.variant, provider, align_model)
    z_val = damage_table(val_ws.descriptions, kcfg.variant, provider, align_model)
    logger.info(
        "Training %s: train windows=%s val windows=%s classes=%s",
        kcfg.variant.value, len(train_ws), len(val_ws), [c.value for c in train_ws.classes()],
    )

    model = build_model(kcfg, dimension_stage=dimension_stage)
    model.normalizer.set_stats(*train_ws.channel_stats())
    optimizer = torch.optim.AdamW(model.parameters(), lr=tcfg.lr, weight_decay=tcfg.weight_decay)

    limit = tcfg.max_windows_per_epoch
    n_epoch = min(len(train_ws), limit) if limit else len(train_ws)
    steps_per_epoch = math.ceil(n_epoch / tcfg.batch_size)
    history: list[dict] = []
    best_state = copy.deepcopy(model.state_dict())
    best_score, best_epoch = float("inf"), 0
    for epoch in range(1, tcfg.epochs + 1):
        model.train()
        losses = []
        batches = train_ws.batches(tcfg.batch_size, shuffle=True, rng=rng, limit=limit)
        for batch in tqdm(batches, total=steps_per_epoch, disable=not settings.PROGRESS, desc=f"{kcfg.variant.value} {epoch}"):
            losses.append(_step(model, batch, z_train, optimizer, tcfg.grad_clip))
        train_mse = float(np.mean(losses))
        val_mse = window_mse(model, val_ws, z_val, tcfg.batch_size) if len(val_ws) else None
        history.append({"epoch": epoch, "train_mse": train_mse, "val_mse": val_mse})
        logger.info("%s epoch %s: train_mse=%.5f val_mse=%s", kcfg.variant.value, epoch, train_mse, val_mse)
        score = val_mse if val_mse is not None else train_mse
        if score < best_score:
            best_score, best_epoch = score, epoch
            best_state = copy.deepcopy(model.state_dict())

    model.load_state_dict(best_state)
    model.eval()
    metrics = {"epochs": history, "best_epoch": best_epoch, "best_score": best_score}
    meta = CheckpointMeta(
        kind=CheckpointKind.KINO,
        config=kcfg.model_dump(mode="json"),
        config_hash=config_hash(kcfg),
        seed=seed,
        dataset_hash=dataset.manifest.config_hash,
        variant=kcfg.variant,
        align_hash=align_meta.weights_hash if (align_meta and is_conditioned(kcfg.variant)) else None,
        dimension_stage=dimension_stage,
        trained_classes=[c.value for c in train_ws.classes()],
    )
    if out_dir is not None:
        meta = checkpoint_service.save_checkpoint(out_dir, model, meta, metrics)
    return model, meta, metrics


def collect_finetune_windows(
    damage_class: DamageClass,
    seconds: float,
    sim_cfg: SimConfig,
    kcfg: KinoConfig,
    seed: int,
) -> WindowSet:
    """
    k секунд данных (k/dt опорных моментов) из свежих эпизодов класса, окна подряд.
    Каждый эпизод даёт не более episode_len моментов; меньшие бюджеты — префиксы больших.
    """
    total = int(round(seconds / sim_cfg.dt))
    if total <= 0:
        raise DomainError(f"Бюджет дообучения {seconds} с не даёт ни одного окна")
    chunk = sim_cfg.episode_len
    class_offset = list(DamageClass).index(damage_class) << 32
    records = []
    for i in range(math.ceil(total / chunk)):
        anchors = min(chunk, total - i * chunk)
        ep_cfg = sim_cfg.model_copy(update={"episode_len": anchors + kcfg.h + kcfg.p})
        s = episode_seed(seed, class_offset + i, SeedStream.FINETUNE)
        records.append(make_episode(f"finetune-{damage_class.value}-{i:04d}", damage_class, s, ep_cfg))
    return kino_windows(records, kcfg, stride=1)


def fine_tune(
    model: KinoModel,
    meta: CheckpointMeta,
    windows: WindowSet,
    steps: int,
    lr: float,
    batch_size: int,
    seed: int,
    z_table: Optional[torch.Tensor] = None,
    out_dir: Optional[str | Path] = None,
) -> tuple[KinoModel, CheckpointMeta]:
    """Продолжает MSE-обучение копии модели только на переданных окнах."""
    if len(windows) == 0:
        raise DomainError("Нет данных для дообучения")
    tuned = copy.deepcopy(model)
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    if steps > 0:
        tuned.train()
        optimizer = torch.optim.AdamW(tuned.parameters(), lr=lr)
        done = 0
        while done < steps:
            for batch in windows.batches(batch_size, shuffle=True, rng=rng):
                loss = _step(tuned, batch, z_table, optimizer, tuned.cfg.train.grad_clip)
                done += 1
                if done >= steps:
                    break
        logger.info("Fine-tuned %s steps on %s windows, last loss=%.5f", steps, len(windows), loss)
    tuned.eval()
    new_meta = meta.model_copy(update={
        "base_hash": meta.weights_hash,
        "weights_hash": checkpoint_service.weights_hash(tuned.state_dict()),
    })
    if out_dir is not None:
        new_meta = checkpoint_service.save_checkpoint(out_dir, tuned, new_meta, {"steps": steps})
    return tuned, new_meta


@torch.no_grad()
def predict(model: KinoModel, inp: ModelInput) -> Prediction:
    """Один вход без батча → (P, 6)."""
    model.eval()
    damage = None
    if inp.damage is not None and is_conditioned(model.variant):
        damage = torch.as_tensor(inp.damage, dtype=torch.float32)[None]
    out = model(
        torch.as_tensor(inp.history, dtype=torch.float32)[None],
        torch.as_tensor(inp.future_actions, dtype=torch.float32)[None],
        damage,
    )
    return Prediction(states=out[0].numpy().astype(np.float64))
