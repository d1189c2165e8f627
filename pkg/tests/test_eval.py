import numpy as np
import pytest
import torch
from torch import nn

from app.zlik.embed import HashedEmbedder
from app.zlik.errors import ConfigError, DomainError
from app.zlik.nn.kino import build_model
from app.zlik.schemas.checkpoint import CheckpointKind, CheckpointMeta
from app.zlik.schemas.config import ExperimentConfig, Variant, config_hash
from app.zlik.schemas.report import DAMAGED, OVERALL
from app.zlik.services.checkpoint_service import load_alignment, weights_hash
from app.zlik.services.eval_service import (
    aggregate_errors,
    budget_label,
    compare_protocol,
    confusion_experiment,
    evaluate,
    evaluate_windows,
)
from app.zlik.services.kino_service import collect_finetune_windows, fine_tune, kino_windows
from app.zlik.services.window_service import CLASS_INDEX, WindowSet
from app.zlik.sim.damage import DAMAGED_CLASSES, DamageClass
from tests.conftest import tiny_config_dict

CONFUSION_CLASSES = [DamageClass.FALL, DamageClass.NO_DAMAGE, DamageClass.BROKEN_AXLE]


class ReplayModel(nn.Module):
    """Возвращает истинные цели окон подряд со сдвигом delta."""

    def __init__(self, ws: WindowSet, cfg, delta: float) -> None:
        super().__init__()
        self.cfg = cfg
        self.variant = Variant.CLEAN
        self.targets = torch.from_numpy(ws.targets(np.arange(len(ws))).astype(np.float64))
        self.delta = delta
        self.pos = 0

    def forward(self, history, future_actions, damage=None):
        n = history.shape[0]
        out = self.targets[self.pos:self.pos + n] + self.delta
        self.pos += n
        return out


def _brute_cell(sq: np.ndarray):
    per_window = sq.mean(axis=(1, 2))
    return per_window.mean(), per_window.std(), sq.mean(axis=1).mean(axis=0)


def test_aggregation_matches_brute_force():
    rng = np.random.default_rng(0)
    sq = rng.random((50, 3, 6)) ** 2
    labels = np.array([CLASS_INDEX[DamageClass.FALL]] * 20 + [CLASS_INDEX[DamageClass.NO_DAMAGE]] * 30)
    rng.shuffle(labels)
    cells, absent = aggregate_errors(sq, labels)

    assert set(cells) == {DamageClass.FALL.value, DamageClass.NO_DAMAGE.value, DAMAGED, OVERALL}
    assert set(absent) == {c.value for c in DamageClass} - {DamageClass.FALL.value, DamageClass.NO_DAMAGE.value}
    for key, mask in [
        (DamageClass.FALL.value, labels == CLASS_INDEX[DamageClass.FALL]),
        (DAMAGED, np.isin(labels, [CLASS_INDEX[c] for c in DAMAGED_CLASSES])),
        (OVERALL, np.ones(50, dtype=bool)),
    ]:
        mean, std, per_dim = _brute_cell(sq[mask])
        cell = cells[key]
        assert cell.count == mask.sum()
        assert cell.mse_mean == pytest.approx(mean, rel=1e-12)
        assert cell.mse_std == pytest.approx(std, rel=1e-12)
        np.testing.assert_allclose(cell.per_dim_mean, per_dim, rtol=1e-12)


def test_aggregation_ignores_window_order():
    rng = np.random.default_rng(1)
    sq = rng.random((40, 2, 6))
    labels = np.full(40, CLASS_INDEX[DamageClass.MTPSB])
    perm = rng.permutation(40)
    a, _ = aggregate_errors(sq, labels)
    b, _ = aggregate_errors(sq[perm], labels)
    assert a[OVERALL].mse_mean == b[OVERALL].mse_mean


def test_healthy_only_has_no_damaged_cell():
    sq = np.ones((3, 2, 6))
    cells, _ = aggregate_errors(sq, np.full(3, CLASS_INDEX[DamageClass.NO_DAMAGE]))
    assert DAMAGED not in cells and cells[OVERALL].mse_mean == 1.0
    cells, absent = aggregate_errors(np.zeros((0, 2, 6)), np.zeros(0, dtype=np.int64))
    assert cells == {} and len(absent) == len(DamageClass)


def test_constant_offset_gives_squared_error(tiny_dataset, tiny_kino_cfg):
    ws = kino_windows(tiny_dataset.records, tiny_kino_cfg, stride=8)
    report = evaluate_windows(ReplayModel(ws, tiny_kino_cfg, 0.5), ws, None, batch_size=7)
    assert report.model == "clean" and report.parameters == 0
    for cell in report.cells.values():
        assert cell.mse_mean == pytest.approx(0.25, abs=1e-9)
        assert cell.mse_std == pytest.approx(0.0, abs=1e-9)
    assert report.cells[OVERALL].count == len(ws)


def test_clean_confusion_rows_are_identical(tiny_dataset, tiny_cfg, tiny_kino_cfg):
    torch.manual_seed(0)
    clean = build_model(tiny_kino_cfg.model_copy(update={"variant": Variant.CLEAN}))
    cm = confusion_experiment(clean, tiny_dataset, CONFUSION_CLASSES, tiny_cfg, seed=1)
    assert cm.classes == [c.value for c in CONFUSION_CLASSES]
    assert cm.max_row_deviation() < 1e-6
    assert cm.model == "clean"


def test_confusion_diagonal_matches_evaluate(tiny_dataset, tiny_cfg, tiny_kino_cfg, tiny_alignment_dir):
    torch.manual_seed(0)
    model = build_model(tiny_kino_cfg)
    align, _ = load_alignment(tiny_alignment_dir)
    provider = HashedEmbedder(dim=32)
    cm = confusion_experiment(model, tiny_dataset, CONFUSION_CLASSES, tiny_cfg, seed=1,
                              provider=provider, align_model=align)
    report = evaluate(model, tiny_dataset, tiny_cfg, provider, align)
    for j, cls_ in enumerate(CONFUSION_CLASSES):
        assert cm.mean[j][j] == pytest.approx(report.cells[cls_.value].mse_mean, rel=1e-5)
        assert cm.count[j][j] == report.cells[cls_.value].count
    again = confusion_experiment(model, tiny_dataset, CONFUSION_CLASSES, tiny_cfg, seed=1,
                                 provider=provider, align_model=align)
    assert again.mean == cm.mean
    assert 0 <= cm.diagonal_wins() <= len(CONFUSION_CLASSES)


def test_confusion_needs_two_classes(tiny_dataset, tiny_cfg, tiny_kino_cfg):
    clean = build_model(tiny_kino_cfg.model_copy(update={"variant": Variant.CLEAN}))
    with pytest.raises(ConfigError):
        confusion_experiment(clean, tiny_dataset, [DamageClass.FALL, DamageClass.FALL], tiny_cfg, seed=0)


@pytest.mark.parametrize(
    "seconds, label",
    [(1.0, "clean+ft 1s"), (0.5, "clean+ft 0.5s"), (60.0, "clean+ft 1min"), (300.0, "clean+ft 5min"), (90.0, "clean+ft 90s")],
)
def test_budget_label(seconds, label):
    assert budget_label(seconds) == label


def test_finetune_windows_count_and_prefix(tiny_cfg, tiny_kino_cfg):
    small = collect_finetune_windows(DamageClass.FALL, 1.0, tiny_cfg.sim, tiny_kino_cfg, seed=3)
    large = collect_finetune_windows(DamageClass.FALL, 10.0, tiny_cfg.sim, tiny_kino_cfg, seed=3)
    assert len(small) == 20 and len(large) == 200
    idx = np.arange(20)
    np.testing.assert_array_equal(small.history(idx), large.history(idx))
    np.testing.assert_array_equal(small.targets(idx), large.targets(idx))
    assert set(large.class_idx.tolist()) == {CLASS_INDEX[DamageClass.FALL]}
    other = collect_finetune_windows(DamageClass.MTPSB, 1.0, tiny_cfg.sim, tiny_kino_cfg, seed=3)
    assert not np.array_equal(other.history(idx), small.history(idx))
    with pytest.raises(DomainError):
        collect_finetune_windows(DamageClass.FALL, 0.01, tiny_cfg.sim, tiny_kino_cfg, seed=3)


def test_fine_tune_copies_model(tiny_cfg, tiny_kino_cfg):
    cfg = tiny_kino_cfg.model_copy(update={"variant": Variant.CLEAN})
    base = build_model(cfg)
    meta = CheckpointMeta(
        kind=CheckpointKind.KINO,
        config=cfg.model_dump(mode="json"),
        config_hash=config_hash(cfg),
        weights_hash=weights_hash(base.state_dict()),
    )
    windows = collect_finetune_windows(DamageClass.FALL, 1.0, tiny_cfg.sim, cfg, seed=0)

    same, same_meta = fine_tune(base, meta, windows, steps=0, lr=1e-3, batch_size=8, seed=0)
    assert weights_hash(same.state_dict()) == meta.weights_hash
    assert same_meta.base_hash == same_meta.weights_hash == meta.weights_hash

    tuned, tuned_meta = fine_tune(base, meta, windows, steps=3, lr=1e-2, batch_size=8, seed=0)
    assert weights_hash(tuned.state_dict()) != meta.weights_hash
    assert tuned_meta.weights_hash == weights_hash(tuned.state_dict())
    assert tuned_meta.base_hash == meta.weights_hash
    assert weights_hash(base.state_dict()) == meta.weights_hash

    with pytest.raises(DomainError):
        fine_tune(base, meta, WindowSet([], h=cfg.h, p=cfg.p), steps=1, lr=1e-3, batch_size=8, seed=0)


def test_compare_protocol_end_to_end(tmp_path):
    cfg = ExperimentConfig.from_dict(tiny_config_dict())
    bundle = compare_protocol(cfg, seed=11, out_dir=tmp_path)
    assert bundle.rows == ["zlik", "clean", "monolithic", "clean+ft 1s", "clean+ft 2s"]
    assert [r.model for r in bundle.reports] == bundle.rows
    for variant in ("zlik", "clean", "monolithic"):
        assert OVERALL in bundle.report(variant).cells
    ft = bundle.report("clean+ft 2s")
    assert set(ft.cells) == {DamageClass.FALL.value, DamageClass.BROKEN_AXLE.value}
    assert (tmp_path / "train" / "manifest.json").is_file()
    assert (tmp_path / "checkpoints" / "zlik" / "weights.pt").is_file()
