import pytest

from app.zlik.embed import HashedEmbedder
from app.zlik.errors import ConfigError
from app.zlik.schemas.config import Variant
from app.zlik.services.checkpoint_service import load_alignment, load_kino, weights_hash
from app.zlik.services.kino_service import train_kino
from app.zlik.sim.damage import DamageClass


def test_clean_trains_on_selected_classes(tiny_dataset, tiny_cfg, tmp_path):
    model, meta, metrics = train_kino(
        tiny_dataset, tiny_cfg, seed=1, variant=Variant.CLEAN,
        classes=[DamageClass.NO_DAMAGE], out_dir=tmp_path / "clean",
    )
    assert meta.trained_classes == ["no_damage"]
    assert meta.align_hash is None and meta.variant == Variant.CLEAN
    assert len(metrics["epochs"]) == tiny_cfg.kino.train.epochs
    loaded, loaded_meta = load_kino(tmp_path / "clean")
    assert loaded_meta.weights_hash == meta.weights_hash == weights_hash(loaded.state_dict())


def test_training_is_reproducible(tiny_dataset, tiny_cfg):
    a, _, _ = train_kino(tiny_dataset, tiny_cfg, seed=4, variant=Variant.CLEAN)
    b, _, _ = train_kino(tiny_dataset, tiny_cfg, seed=4, variant=Variant.CLEAN)
    assert weights_hash(a.state_dict()) == weights_hash(b.state_dict())


def test_conditioned_variant_records_alignment(tiny_dataset, tiny_cfg, tiny_alignment_dir):
    align, align_meta = load_alignment(tiny_alignment_dir)
    _, meta, _ = train_kino(
        tiny_dataset, tiny_cfg, seed=2, provider=HashedEmbedder(dim=32),
        align_model=align, align_meta=align_meta, variant=Variant.ZLIK,
    )
    assert meta.align_hash == align_meta.weights_hash
    assert set(meta.trained_classes) == {c.value for c in DamageClass}


def test_conditioned_variant_needs_alignment(tiny_dataset, tiny_cfg):
    with pytest.raises(ConfigError):
        train_kino(tiny_dataset, tiny_cfg, seed=0, variant=Variant.ZLIK)
