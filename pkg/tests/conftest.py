import os

os.environ.setdefault("ZLIK_PROGRESS", "false")

import numpy as np
import pytest
import torch

from app.zlik.embed import HashedEmbedder
from app.zlik.schemas.config import ExperimentConfig, KinoConfig
from app.zlik.services.alignment_service import train_alignment
from app.zlik.services.dataset_service import generate_dataset, load_dataset
from app.zlik.sim.damage import DamageClass

TINY_KINO = dict(
    h=8, p=3, l_seg=4, d_model=16, enc_layers=1, dec_layers=1, heads=2,
    router_count=2, d_ff=32, dropout=0.0, w_size=2, d_damage=4,
)


def tiny_config_dict() -> dict:
    return {
        "sim": {
            "episode_len": 80,
            "class_counts": {c.value: 3 for c in DamageClass},
            "val_fraction": 0.34,
        },
        "embed": {"dim": 32},
        "align": {
            "h_align": 16,
            "window_stride": 8,
            "encoder": {"layers": 1, "heads": 2, "hidden": 16, "ff": 32, "dropout": 0.0},
            "projection": {"hidden": [16], "out": 4},
            "optimizer": {"batch_size": 8, "epochs": 1},
        },
        "kino": {
            **TINY_KINO,
            "train": {"batch_size": 32, "epochs": 1, "window_stride": 4, "max_windows_per_epoch": 64},
        },
        "eval": {
            "batch_size": 64,
            "window_stride": 8,
            "test_class_counts": {c.value: 1 for c in DamageClass},
            "finetune_budgets_s": [1.0, 2.0],
            "finetune_steps": 2,
            "finetune_batch_size": 8,
        },
    }


@pytest.fixture
def tiny_cfg() -> ExperimentConfig:
    return ExperimentConfig.from_dict(tiny_config_dict())


@pytest.fixture
def tiny_kino_cfg() -> KinoConfig:
    return KinoConfig(**TINY_KINO)


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory):
    cfg = ExperimentConfig.from_dict(tiny_config_dict())
    path = tmp_path_factory.mktemp("data") / "train"
    generate_dataset(cfg.sim, cfg.sim.class_counts, 7, path)
    return path


@pytest.fixture
def tiny_dataset(tiny_dataset_dir):
    return load_dataset(tiny_dataset_dir)


def finite_difference_check(loss_fn, tensors, n_points=20, eps=1e-6, seed=0, min_grad=0.0):
    """
    Сравнивает градиенты autograd с центральными разностями в n_points случайных координатах.
    При min_grad > 0 координаты выбираются только среди тех, где |градиент| ≥ min_grad.
    Возвращает максимальную относительную ошибку.
    """
    tensors = list(tensors)
    for t in tensors:
        t.grad = None
    loss_fn().backward()
    grads = [torch.zeros_like(t) if t.grad is None else t.grad.detach().clone() for t in tensors]

    rng = np.random.default_rng(seed)
    if min_grad > 0:
        candidates = [
            (k, int(i))
            for k, g in enumerate(grads)
            for i in torch.nonzero(g.view(-1).abs() >= min_grad).flatten().tolist()
        ]
        assert len(candidates) >= n_points, f"только {len(candidates)} координат с |grad| ≥ {min_grad}"
        picks = [candidates[j] for j in rng.choice(len(candidates), size=n_points, replace=False)]
    else:
        picks = []
        for _ in range(n_points):
            k = int(rng.integers(len(tensors)))
            picks.append((k, int(rng.integers(tensors[k].numel()))))

    worst = 0.0
    for k, i in picks:
        t = tensors[k]
        flat = t.data.view(-1)
        orig = flat[i].item()
        with torch.no_grad():
            flat[i] = orig + eps
            plus = float(loss_fn())
            flat[i] = orig - eps
            minus = float(loss_fn())
            flat[i] = orig
        numeric = (plus - minus) / (2 * eps)
        analytic = float(grads[k].view(-1)[i])
        scale = max(abs(numeric), abs(analytic), 1e-6)
        worst = max(worst, abs(numeric - analytic) / scale)
    return worst


@pytest.fixture(scope="session")
def tiny_alignment_dir(tiny_dataset_dir, tmp_path_factory):
    cfg = ExperimentConfig.from_dict(tiny_config_dict())
    path = tmp_path_factory.mktemp("align")
    train_alignment(load_dataset(tiny_dataset_dir), cfg, HashedEmbedder(dim=cfg.embed.dim), seed=0, out_dir=path)
    return path
