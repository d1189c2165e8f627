"""
Обучение и оценка общего пространства повреждений (VICReg между h_σ(φ(x)) и h_ζ(enc(τ))).
"""
from __future__ import annotations

import copy
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from tqdm import tqdm

from app.zlik.embed.providers import EmbeddingProvider
from app.zlik.errors import ConfigError, LookupEmbeddingError
from app.zlik.nn.align import AlignmentModel, DamageEmbedding
from app.zlik.nn.vicreg import VicRegTerms, vicreg_loss
from app.zlik.schemas.checkpoint import CheckpointKind, CheckpointMeta
from app.zlik.schemas.config import ExperimentConfig, config_hash
from app.zlik.schemas.report import AlignmentEval
from app.zlik.services import checkpoint_service
from app.zlik.services.dataset_service import Dataset
from app.zlik.services.window_service import INDEX_CLASS, WindowSet
from app.zlik.settings import config as settings
from app.zlik.sim.damage import DamageClass

logger = logging.getLogger(__name__)

SYNONYM_PAIR = ("The front axle is broken.", "The front half-shaft has snapped.")
SYNONYM_CLASS = DamageClass.BROKEN_AXLE


def alignment_windows(records, cfg: ExperimentConfig) -> WindowSet:
    return WindowSet(records, h=cfg.align.h_align, p=0, stride=cfg.align.stride)


def text_features(provider: EmbeddingProvider, texts: Sequence[str]) -> torch.Tensor:
    return torch.from_numpy(provider.embed_many(texts))


@torch.no_grad()
def embed_descriptions(
    texts: Sequence[str],
    provider: EmbeddingProvider,
    model: AlignmentModel,
) -> torch.Tensor:
    """z_x для каждого описания, (n, K). Замороженный h_σ в eval-режиме."""
    if not texts:
        return torch.zeros(0, model.text_head.net[-1].out_features)
    model.text_head.eval()
    return model.project_text(text_features(provider, texts))


def damage_embedding(text: str, provider: EmbeddingProvider, model: AlignmentModel) -> DamageEmbedding:
    z = embed_descriptions([text], provider, model)[0]
    return DamageEmbedding(z=z.numpy().astype(np.float64), source="text")


def _mean_terms(terms: list[VicRegTerms]) -> dict[str, float]:
    if not terms:
        return {}
    rows = [t.as_floats() for t in terms]
    return {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}


@torch.no_grad()
def validation_terms(
    model: AlignmentModel,
    ws: WindowSet,
    phi: torch.Tensor,
    cfg: ExperimentConfig,
) -> dict[str, float]:
    model.eval()
    terms = []
    for batch in ws.batches(cfg.align.optimizer.batch_size):
        if len(batch) < 2:
            continue
        z_x, z_tau = model(phi[batch.desc_idx], batch.history)
        terms.append(vicreg_loss(z_x, z_tau, cfg.align.vicreg))
    return _mean_terms(terms)


def train_alignment(
    dataset: Dataset,
    cfg: ExperimentConfig,
    provider: EmbeddingProvider,
    seed: int,
    out_dir: Optional[str | Path] = None,
) -> tuple[AlignmentModel, CheckpointMeta, dict]:
    """
    Минимизирует VICReg по парам (описание, окно длины H_align). Сохраняет лучший по валидации
    чекпоинт; h_σ в нём заморожен.
    """
    align = cfg.align
    opt_cfg = align.optimizer
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)

    train_ws = alignment_windows(dataset.select("train"), cfg)
    val_ws = alignment_windows(dataset.select("val"), cfg)
    if len(train_ws) < opt_cfg.batch_size or opt_cfg.batch_size < 2:
        raise ConfigError(
            f"Окон для выравнивания {len(train_ws)} меньше одного батча ({opt_cfg.batch_size})"
        )
    logger.info("Alignment windows: train=%s val=%s", len(train_ws), len(val_ws))

    phi_train = text_features(provider, train_ws.descriptions)
    phi_val = text_features(provider, val_ws.descriptions)

    model = AlignmentModel(align, text_dim=provider.dim)
    model.normalizer.set_stats(*train_ws.channel_stats())
    optimizer = torch.optim.AdamW(model.parameters(), lr=opt_cfg.lr, weight_decay=opt_cfg.weight_decay)
    steps_per_epoch = len(train_ws) // opt_cfg.batch_size
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=max(1, opt_cfg.epochs * steps_per_epoch)
    )

    history: list[dict] = []
    best_state = copy.deepcopy(model.state_dict())
    best_score = float("inf")
    best_epoch = 0
    for epoch in range(1, opt_cfg.epochs + 1):
        model.train()
        epoch_terms = []
        batches = train_ws.batches(opt_cfg.batch_size, shuffle=True, rng=rng, drop_last=True)
        for batch in tqdm(batches, total=steps_per_epoch, disable=not settings.PROGRESS, desc=f"align {epoch}"):
            z_x, z_tau = model(phi_train[batch.desc_idx], batch.history)
            terms = vicreg_loss(z_x, z_tau, align.vicreg)
            optimizer.zero_grad()
            terms.total.backward()
            if opt_cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), opt_cfg.grad_clip)
            optimizer.step()
            scheduler.step()
            epoch_terms.append(terms)

        train_stats = _mean_terms(epoch_terms)
        val_stats = validation_terms(model, val_ws, phi_val, cfg) if len(val_ws) >= 2 else {}
        history.append({"epoch": epoch, "train": train_stats, "val": val_stats})
        logger.info(
            "align epoch %s: total=%.4f s=%.4f v=%.4f c=%.4f val_total=%s",
            epoch,
            train_stats["total"],
            train_stats["invariance"],
            train_stats["variance_x"] + train_stats["variance_tau"],
            train_stats["covariance_x"] + train_stats["covariance_tau"],
            f"{val_stats['total']:.4f}" if val_stats else "n/a",
        )
        score = val_stats.get("total", train_stats["total"])
        if score < best_score:
            best_score, best_epoch = score, epoch
            best_state = copy.deepcopy(model.state_dict())

    model.load_state_dict(best_state)
    model.eval()
    model.freeze_text_head()
    metrics = {"epochs": history, "best_epoch": best_epoch, "best_score": best_score}
    meta = CheckpointMeta(
        kind=CheckpointKind.ALIGNMENT,
        config=align.model_dump(mode="json"),
        config_hash=config_hash(align),
        seed=seed,
        dataset_hash=dataset.manifest.config_hash,
        text_dim=provider.dim,
        embed_provider=cfg.embed.provider,
    )
    if out_dir is not None:
        meta = checkpoint_service.save_checkpoint(out_dir, model, meta, metrics)
    return model, meta, metrics


def _cosine_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return F.normalize(a, dim=1) @ F.normalize(b, dim=1).T


def _centroids(z: torch.Tensor, labels: np.ndarray, classes: list[int]) -> torch.Tensor:
    return torch.stack([z[torch.from_numpy(labels == c)].mean(dim=0) for c in classes])


@torch.no_grad()
def evaluate_alignment(
    model: AlignmentModel,
    records,
    cfg: ExperimentConfig,
    provider: EmbeddingProvider,
    synonyms: Sequence[str] = SYNONYM_PAIR,
) -> AlignmentEval:
    """
    Удержанные окна: точность сопоставления z_x с центроидами z_τ по классам (и обратно),
    std z_x по измерениям, синонимическая привязка.
    """
    model.eval()
    ws = alignment_windows(records, cfg)
    if len(ws) == 0:
        raise ConfigError("Нет окон для оценки выравнивания")
    z_desc = embed_descriptions(ws.descriptions, provider, model)
    z_tau_parts = [model.project_trajectory(b.history) for b in ws.batches(cfg.align.optimizer.batch_size)]
    z_tau = torch.cat(z_tau_parts)
    z_x = z_desc[torch.from_numpy(ws.desc_idx)]
    labels = ws.class_idx
    classes = sorted(set(labels.tolist()))

    tau_centroids = _centroids(z_tau, labels, classes)
    x_centroids = _centroids(z_x, labels, classes)
    class_arr = np.asarray(classes)
    text_pred = class_arr[_cosine_matrix(z_x, tau_centroids).argmax(dim=1).numpy()]
    traj_pred = class_arr[_cosine_matrix(z_tau, x_centroids).argmax(dim=1).numpy()]

    std = z_x.std(dim=0) if len(z_x) > 1 else torch.zeros(z_x.shape[1])
    result = dict(
        windows=len(ws),
        classes=[INDEX_CLASS[c].value for c in classes],
        text_to_traj_accuracy=float(np.mean(text_pred == labels)),
        traj_to_text_accuracy=float(np.mean(traj_pred == labels)),
        z_x_std_min=float(std.min()),
        z_x_std=[float(v) for v in std],
    )

    try:
        z_syn = embed_descriptions(list(synonyms), provider, model)
    except LookupEmbeddingError as e:
        logger.warning("Synonym grounding skipped: %s", e)
        return AlignmentEval(**result)
    names = [INDEX_CLASS[c] for c in classes]
    others = [i for i, c in enumerate(names) if c != SYNONYM_CLASS]
    cos_to_centroids = _cosine_matrix(z_syn, x_centroids)
    result.update(
        synonym_texts=list(synonyms),
        synonym_cosine=float(_cosine_matrix(z_syn[:1], z_syn[1:2])[0, 0]),
        synonym_max_other_cosine=float(cos_to_centroids[:, others].max()) if others else None,
        synonym_nearest=[names[i].value for i in cos_to_centroids.argmax(dim=1).tolist()],
    )
    return AlignmentEval(**result)
