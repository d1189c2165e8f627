"""
Метрики и протоколы оценки: evaluate, матрица ошибок по описаниям, сравнение моделей.

Агрегаты считаются через math.fsum: результат не зависит от порядка суммирования.
"""
from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from app.zlik.embed.providers import EmbeddingProvider
from app.zlik.embed.table import build_provider
from app.zlik.errors import ConfigError, DataFormatError
from app.zlik.nn.align import AlignmentModel
from app.zlik.nn.kino import KinoModel, count_parameters
from app.zlik.schemas.checkpoint import CheckpointMeta
from app.zlik.schemas.config import ExperimentConfig, Variant, config_hash
from app.zlik.schemas.dataset import SeedStream
from app.zlik.schemas.report import DAMAGED, OVERALL, ConfusionMatrix, EvalCell, EvalReport, ReportBundle
from app.zlik.services import checkpoint_service
from app.zlik.services.alignment_service import train_alignment
from app.zlik.services.dataset_service import Dataset, generate_dataset, load_dataset
from app.zlik.services.kino_service import (
    batch_damage,
    collect_finetune_windows,
    damage_table,
    fine_tune,
    kino_windows,
    train_kino,
)
from app.zlik.services.window_service import CLASS_INDEX, WindowSet
from app.zlik.sim.damage import DAMAGED_CLASSES, DamageClass

logger = logging.getLogger(__name__)

BREAKDOWN_CLASSES = (DamageClass.FALL, DamageClass.MTPSB)


def _fsum_mean(values: np.ndarray) -> float:
    return math.fsum(values.tolist()) / len(values)


def _fsum_std(values: np.ndarray, mean: float) -> float:
    return math.sqrt(math.fsum(((values - mean) ** 2).tolist()) / len(values))


def make_cell(sq_err: np.ndarray) -> EvalCell:
    """sq_err: (W, P, 6) квадраты ошибок окон одной ячейки."""
    per_window = sq_err.mean(axis=(1, 2))
    per_window_dim = sq_err.mean(axis=1)
    mean = _fsum_mean(per_window)
    dim_means = [_fsum_mean(per_window_dim[:, j]) for j in range(sq_err.shape[2])]
    return EvalCell(
        mse_mean=mean,
        mse_std=_fsum_std(per_window, mean),
        per_dim_mean=dim_means,
        per_dim_std=[_fsum_std(per_window_dim[:, j], m) for j, m in enumerate(dim_means)],
        count=len(per_window),
    )


def aggregate_errors(sq_err: np.ndarray, class_idx: np.ndarray) -> tuple[dict[str, EvalCell], list[str]]:
    """
    Ячейки по классам + damaged + overall. Классы без окон возвращаются в списке absent.
    """
    cells: dict[str, EvalCell] = {}
    absent: list[str] = []
    for cls_ in DamageClass:
        mask = class_idx == CLASS_INDEX[cls_]
        if mask.any():
            cells[cls_.value] = make_cell(sq_err[mask])
        else:
            absent.append(cls_.value)
    damaged = np.isin(class_idx, [CLASS_INDEX[c] for c in DAMAGED_CLASSES])
    if damaged.any():
        cells[DAMAGED] = make_cell(sq_err[damaged])
    if len(class_idx):
        cells[OVERALL] = make_cell(sq_err)
    return cells, absent


@torch.no_grad()
def predict_errors(
    model: KinoModel,
    ws: WindowSet,
    z_table: Optional[torch.Tensor],
    batch_size: int,
    indices: Optional[np.ndarray] = None,
    desc_override: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Квадраты ошибок (W, P, 6) в системе опорного состояния.
    desc_override[k] — индекс описания для k-го окна из indices.
    """
    model.eval()
    idx = np.arange(len(ws)) if indices is None else np.asarray(indices, dtype=np.int64)
    out = np.empty((len(idx), ws.p, 6), dtype=np.float64)
    pos = 0
    for batch in ws.batches(batch_size, indices=idx):
        n = len(batch)
        if desc_override is not None and z_table is not None:
            damage = z_table[torch.from_numpy(np.asarray(desc_override[pos:pos + n], dtype=np.int64))]
        else:
            damage = batch_damage(batch, z_table)
        pred = model(batch.history, batch.future_actions, damage)
        out[pos:pos + n] = ((pred.double() - batch.targets.double()) ** 2).numpy()
        pos += n
    return out


def evaluate_windows(
    model: KinoModel,
    ws: WindowSet,
    z_table: Optional[torch.Tensor],
    batch_size: int,
    protocol: str = "evaluate",
    label: Optional[str] = None,
    meta: Optional[CheckpointMeta] = None,
    dataset_hash: str = "",
) -> EvalReport:
    sq = predict_errors(model, ws, z_table, batch_size)
    cells, absent = aggregate_errors(sq, ws.class_idx)
    for name, cell in cells.items():
        logger.info("%s [%s] %s: %.4f ± %.4f (n=%s)", protocol, label or model.variant.value, name,
                    cell.mse_mean, cell.mse_std, cell.count)
    return EvalReport(
        protocol=protocol,
        model=label or model.variant.value,
        variant=model.variant.value,
        weights_hash=meta.weights_hash if meta else "",
        config_hash=meta.config_hash if meta else config_hash(model.cfg),
        dataset_hash=dataset_hash,
        cells=cells,
        absent=absent,
        parameters=count_parameters(model),
    )


def evaluate(
    model: KinoModel,
    dataset: Dataset,
    cfg: ExperimentConfig,
    provider: Optional[EmbeddingProvider] = None,
    align_model: Optional[AlignmentModel] = None,
    meta: Optional[CheckpointMeta] = None,
    label: Optional[str] = None,
    classes: Optional[Sequence[DamageClass]] = None,
    protocol: str = "evaluate",
) -> EvalReport:
    ws = kino_windows(dataset.select(classes=classes), model.cfg, cfg.eval.window_stride)
    z_table = damage_table(ws.descriptions, model.variant, provider, align_model)
    return evaluate_windows(
        model, ws, z_table, cfg.eval.batch_size, protocol, label, meta, dataset.manifest.config_hash
    )


def confusion_experiment(
    model: KinoModel,
    dataset: Dataset,
    classes: Sequence[DamageClass],
    cfg: ExperimentConfig,
    seed: int,
    provider: Optional[EmbeddingProvider] = None,
    align_model: Optional[AlignmentModel] = None,
    label: Optional[str] = None,
) -> ConfusionMatrix:
    """
    Ячейка (i, j): испытания истинного класса j с описанием класса i. Для i ≠ j описание
    выбирается детерминированно по seed из пула описаний класса i; для i = j используется
    собственное описание окна.
    """
    classes = list(dict.fromkeys(classes))
    if len(classes) < 2:
        raise ConfigError("Матрица ошибок требует ≥ 2 классов")
    ws = kino_windows(dataset.select(classes=classes), model.cfg, cfg.eval.window_stride)
    z_table = damage_table(ws.descriptions, model.variant, provider, align_model)

    index_of = {c: np.flatnonzero(ws.class_idx == CLASS_INDEX[c]) for c in classes}
    pools = {c: np.unique(ws.desc_idx[idx]) for c, idx in index_of.items()}
    missing = [c.value for c, idx in index_of.items() if len(idx) == 0]
    if missing:
        raise DataFormatError(f"В датасете нет окон классов: {missing}")

    n = len(classes)
    mean = [[0.0] * n for _ in range(n)]
    std = [[0.0] * n for _ in range(n)]
    count = [[0] * n for _ in range(n)]
    for j, true_cls in enumerate(classes):
        idx = index_of[true_cls]
        for i, given_cls in enumerate(classes):
            if i == j:
                override = ws.desc_idx[idx]
            else:
                rng = np.random.default_rng(
                    np.random.SeedSequence([seed, CLASS_INDEX[given_cls], CLASS_INDEX[true_cls]])
                )
                override = rng.choice(pools[given_cls], size=len(idx))
            sq = predict_errors(model, ws, z_table, cfg.eval.batch_size, indices=idx, desc_override=override)
            cell = make_cell(sq)
            mean[i][j], std[i][j], count[i][j] = cell.mse_mean, cell.mse_std, cell.count
        logger.info("confusion: true=%s column=%s", true_cls.value, [round(mean[i][j], 4) for i in range(n)])
    return ConfusionMatrix(
        model=label or model.variant.value,
        classes=[c.value for c in classes],
        mean=mean,
        std=std,
        count=count,
        seed=seed,
    )


def budget_label(seconds: float) -> str:
    if seconds >= 60 and seconds % 60 == 0:
        return f"clean+ft {int(seconds // 60)}min"
    return f"clean+ft {seconds:g}s"


def _load_or_train_kino(
    variant: Variant,
    cfg: ExperimentConfig,
    seed: int,
    train_ds: Dataset,
    provider: EmbeddingProvider,
    align_model: AlignmentModel,
    align_meta: CheckpointMeta,
    out_dir: Path,
) -> tuple[KinoModel, CheckpointMeta]:
    path = cfg.eval.checkpoints.get(variant)
    if path is not None:
        model, meta = checkpoint_service.load_kino(path)
        if model.variant != variant:
            raise DataFormatError(f"{path}: вариант {model.variant.value}, ожидается {variant.value}")
        return model, meta
    classes = cfg.eval.clean_train_classes if variant == Variant.CLEAN else None
    model, meta, _ = train_kino(
        train_ds, cfg, seed,
        provider=provider, align_model=align_model, align_meta=align_meta,
        variant=variant, classes=classes, out_dir=out_dir / "checkpoints" / variant.value,
    )
    return model, meta


def resolve_train_dataset(cfg: ExperimentConfig, seed: int, out_dir: Path) -> Dataset:
    if cfg.eval.train_dataset:
        return load_dataset(cfg.eval.train_dataset)
    path = out_dir / "train"
    generate_dataset(cfg.sim, cfg.sim.class_counts, seed, path, stream=SeedStream.TRAIN)
    return load_dataset(path)


def resolve_test_dataset(cfg: ExperimentConfig, seed: int, out_dir: Path) -> Dataset:
    """Тестовый датасет из конфига или свежая генерация для тестового профиля машины."""
    if cfg.eval.test_dataset:
        return load_dataset(cfg.eval.test_dataset)
    sim = cfg.sim.model_copy(update={"vehicle_mass_kg": cfg.eval.test_vehicle_mass_kg})
    path = out_dir / "test"
    generate_dataset(sim, cfg.eval.test_class_counts, seed, path, stream=SeedStream.TEST, val_fraction=0.0)
    return load_dataset(path)


def compare_protocol(cfg: ExperimentConfig, seed: int, out_dir: str | Path) -> ReportBundle:
    """
    Обучает или загружает варианты из eval.models, дообучает clean на бюджетах
    eval.finetune_budgets_s для eval.finetune_classes и сводит всё в таблицу по классам.
    """
    out = Path(out_dir)
    train_ds = resolve_train_dataset(cfg, seed, out)
    test_ds = resolve_test_dataset(cfg, seed, out)
    provider = build_provider(cfg.embed)

    align_model = align_meta = None
    if any(v != Variant.CLEAN for v in cfg.eval.models):
        if cfg.eval.align_checkpoint:
            align_model, align_meta = checkpoint_service.load_alignment(cfg.eval.align_checkpoint)
        else:
            align_model, align_meta, _ = train_alignment(
                train_ds, cfg, provider, seed, out_dir=out / "checkpoints" / "align"
            )

    reports: list[EvalReport] = []
    models: dict[Variant, tuple[KinoModel, CheckpointMeta]] = {}
    for variant in cfg.eval.models:
        model, meta = _load_or_train_kino(variant, cfg, seed, train_ds, provider, align_model, align_meta, out)
        models[variant] = (model, meta)
        reports.append(evaluate(model, test_ds, cfg, provider, align_model, meta, protocol="compare"))

    rows = [v.value for v in cfg.eval.models]
    if Variant.CLEAN in models and cfg.eval.finetune_classes:
        base, base_meta = models[Variant.CLEAN]
        test_sim = test_ds.sim_config
        for seconds in sorted(cfg.eval.finetune_budgets_s):
            label = budget_label(seconds)
            cells = {}
            for cls_ in cfg.eval.finetune_classes:
                windows = collect_finetune_windows(cls_, seconds, test_sim, base.cfg, seed)
                tuned, _ = fine_tune(
                    base, base_meta, windows,
                    steps=cfg.eval.finetune_steps,
                    lr=cfg.eval.finetune_lr,
                    batch_size=cfg.eval.finetune_batch_size,
                    seed=seed,
                )
                report = evaluate(tuned, test_ds, cfg, classes=[cls_], label=label, protocol="compare")
                cells[cls_.value] = report.cells[cls_.value]
            reports.append(
                EvalReport(
                    protocol="compare",
                    model=label,
                    variant=Variant.CLEAN.value,
                    config_hash=base_meta.config_hash,
                    dataset_hash=test_ds.manifest.config_hash,
                    cells=cells,
                    absent=[c.value for c in DamageClass if c.value not in cells],
                    parameters=count_parameters(base),
                )
            )
            rows.append(label)

    return ReportBundle(
        protocol="compare",
        config_hash=config_hash(cfg),
        rows=rows,
        reports=reports,
        breakdown_classes=[c.value for c in BREAKDOWN_CLASSES],
    )

