import pytest
import torch

from app.zlik.embed import HashedEmbedder
from app.zlik.errors import ConfigError, ShapeError
from app.zlik.nn.align import AlignmentModel
from app.zlik.schemas.checkpoint import CheckpointKind
from app.zlik.schemas.config import ExperimentConfig
from app.zlik.services.alignment_service import (
    SYNONYM_PAIR,
    alignment_windows,
    damage_embedding,
    embed_descriptions,
    evaluate_alignment,
    train_alignment,
)
from app.zlik.services.checkpoint_service import load_alignment, load_metrics
from tests.conftest import tiny_config_dict


def test_model_shapes(tiny_cfg):
    model = AlignmentModel(tiny_cfg.align, text_dim=32).eval()
    phi = torch.randn(5, 32)
    hist = torch.randn(5, tiny_cfg.align.h_align, 8)
    z_x, z_tau = model(phi, hist)
    assert tuple(z_x.shape) == (5, 4) and tuple(z_tau.shape) == (5, 4)
    with pytest.raises(ShapeError):
        model.project_trajectory(torch.randn(5, tiny_cfg.align.h_align + 1, 8))
    with pytest.raises(ShapeError):
        model.project_text(torch.randn(5, 31))


def test_freeze_text_head(tiny_cfg):
    model = AlignmentModel(tiny_cfg.align, text_dim=32).train()
    head = model.freeze_text_head()
    assert not head.training
    assert all(not p.requires_grad for p in head.parameters())
    assert all(p.requires_grad for p in model.traj_head.parameters())


def test_trained_checkpoint_reloads(tiny_alignment_dir, tiny_dataset):
    model, meta = load_alignment(tiny_alignment_dir)
    assert meta.kind == CheckpointKind.ALIGNMENT and meta.text_dim == 32
    assert meta.dataset_hash == tiny_dataset.manifest.config_hash
    assert load_metrics(tiny_alignment_dir)["best_epoch"] == 1
    provider = HashedEmbedder(dim=32)
    texts = tiny_dataset.descriptions()[:3]
    first = embed_descriptions(texts, provider, model)
    again, _ = load_alignment(tiny_alignment_dir)
    torch.testing.assert_close(first, embed_descriptions(texts, provider, again))
    z = damage_embedding(texts[0], provider, model)
    assert z.z.shape == (4,) and z.source == "text"


def test_training_is_reproducible(tiny_dataset, tiny_cfg):
    provider = HashedEmbedder(dim=32)
    a, meta_a, _ = train_alignment(tiny_dataset, tiny_cfg, provider, seed=3)
    b, _, _ = train_alignment(tiny_dataset, tiny_cfg, provider, seed=3)
    texts = tiny_dataset.descriptions()[:2]
    torch.testing.assert_close(embed_descriptions(texts, provider, a), embed_descriptions(texts, provider, b))
    assert meta_a.weights_hash == ""


def test_evaluate_alignment(tiny_alignment_dir, tiny_dataset, tiny_cfg):
    model, _ = load_alignment(tiny_alignment_dir)
    result = evaluate_alignment(model, tiny_dataset.records, tiny_cfg, HashedEmbedder(dim=32))
    assert result.windows == len(alignment_windows(tiny_dataset.records, tiny_cfg))
    assert 0.0 <= result.text_to_traj_accuracy <= 1.0
    assert 0.0 <= result.traj_to_text_accuracy <= 1.0
    assert len(result.z_x_std) == 4 and result.z_x_std_min == min(result.z_x_std)
    assert result.synonym_texts == list(SYNONYM_PAIR)
    assert -1.0 <= result.synonym_cosine <= 1.0
    assert len(result.synonym_nearest) == 2


def test_too_few_windows_rejected(tiny_dataset):
    raw = tiny_config_dict()
    raw["align"]["optimizer"]["batch_size"] = 100_000
    with pytest.raises(ConfigError):
        train_alignment(tiny_dataset, ExperimentConfig.from_dict(raw), HashedEmbedder(dim=32), seed=0)


def test_no_windows_to_evaluate(tiny_alignment_dir, tiny_cfg):
    model, _ = load_alignment(tiny_alignment_dir)
    with pytest.raises(ConfigError):
        evaluate_alignment(model, [], tiny_cfg, HashedEmbedder(dim=32))
