"""
Генерация и загрузка датасетов эпизодов.

Сид эпизода 64-битный: два старших бита кодируют поток (train/test/finetune/confusion),
остальные 62 бита берутся из SeedSequence(master_seed, index, stream). Поэтому тестовые
сиды не пересекаются с обучающими по построению.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np
from pydantic import ValidationError
from tqdm import tqdm

from app.zlik.errors import DataFormatError, MissingArtifactError, ZlikError
from app.zlik.schemas.config import SimConfig, config_hash
from app.zlik.schemas.dataset import (
    EPISODES_FILE,
    FORMAT_VERSION,
    MANIFEST_FILE,
    DatasetManifest,
    DatasetSplit,
    EpisodeRecord,
    SeedStream,
)
from app.zlik.settings import config as settings
from app.zlik.sim.damage import DamageClass, DamageSpec, sample_damage
from app.zlik.sim.describe import describe_for_seed
from app.zlik.sim.dynamics import simulate_episode

logger = logging.getLogger(__name__)

_SEED_BITS = 62
_SEED_MASK = (1 << _SEED_BITS) - 1
_DAMAGE_SALT = 0xDA3A
_SPLIT_SALT = 0x5B17


def episode_seed(master_seed: int, index: int, stream: SeedStream) -> int:
    raw = int(np.random.SeedSequence([master_seed, index, int(stream)]).generate_state(1, np.uint64)[0])
    return (int(stream) << _SEED_BITS) | (raw & _SEED_MASK)


def seed_stream(seed: int) -> SeedStream:
    return SeedStream(seed >> _SEED_BITS)


def damage_for_seed(damage_class: DamageClass, seed: int, cfg: SimConfig) -> DamageSpec:
    rng = np.random.default_rng(np.random.SeedSequence([seed, _DAMAGE_SALT]))
    return sample_damage(damage_class, rng, random_severity=cfg.random_severity)


def make_episode(
    episode_id: str,
    damage_class: DamageClass,
    seed: int,
    cfg: SimConfig,
) -> EpisodeRecord:
    """Эпизод однозначно задаётся (класс, seed, cfg)."""
    damage = damage_for_seed(damage_class, seed, cfg)
    traj = simulate_episode(damage, seed, cfg)
    return EpisodeRecord.from_trajectory(
        episode_id=episode_id,
        damage=damage,
        description=describe_for_seed(damage, seed),
        seed=seed,
        traj=traj,
    )


def _make_episode_line(args: tuple[str, DamageClass, int, SimConfig]) -> str:
    return make_episode(*args).to_json_line()


def plan_episodes(
    class_counts: Mapping[DamageClass, int],
    seed: int,
    stream: SeedStream,
) -> list[tuple[str, DamageClass, int]]:
    """Список (episode_id, класс, сид) в фиксированном порядке классов."""
    plan = []
    index = 0
    prefix = stream.name.lower()
    for cls_ in DamageClass:
        n = int(class_counts.get(cls_, 0))
        if n < 0:
            raise ValueError(f"Число эпизодов класса {cls_.value} должно быть ≥ 0")
        for _ in range(n):
            plan.append((f"{prefix}-{index:06d}", cls_, episode_seed(seed, index, stream)))
            index += 1
    return plan


def split_episodes(
    plan: Iterable[tuple[str, DamageClass, int]],
    val_fraction: float,
    seed: int,
    stream: SeedStream,
) -> DatasetSplit:
    """Стратифицированное разбиение train/val по эпизодам внутри каждого класса."""
    by_class: dict[DamageClass, list[str]] = {}
    for episode_id, cls_, _ in plan:
        by_class.setdefault(cls_, []).append(episode_id)
    rng = np.random.default_rng(np.random.SeedSequence([seed, int(stream), _SPLIT_SALT]))
    train: list[str] = []
    val: list[str] = []
    for cls_ in DamageClass:
        ids = by_class.get(cls_, [])
        if not ids:
            continue
        order = rng.permutation(len(ids))
        n_val = int(round(len(ids) * val_fraction))
        val_set = {ids[i] for i in order[:n_val]}
        train.extend(i for i in ids if i not in val_set)
        val.extend(i for i in ids if i in val_set)
    return DatasetSplit(train=train, val=val)


def generate_dataset(
    cfg: SimConfig,
    class_counts: Mapping[DamageClass, int],
    seed: int,
    out_dir: str | Path,
    stream: SeedStream = SeedStream.TRAIN,
    val_fraction: Optional[float] = None,
) -> DatasetManifest:
    """
    Пишет <out_dir>/episodes.jsonl и <out_dir>/manifest.json.
    Байтовое содержимое зависит только от (cfg, class_counts, seed, stream).
    """
    out = Path(out_dir)
    plan = plan_episodes(class_counts, seed, stream)
    ids = [p[0] for p in plan]
    if len(set(ids)) != len(ids):
        raise ZlikError("Повторяющийся episode_id в плане генерации")
    val_fraction = cfg.val_fraction if val_fraction is None else val_fraction
    split = split_episodes(plan, val_fraction, seed, stream)

    counts = {c: int(class_counts.get(c, 0)) for c in DamageClass}
    logger.info(
        "Generating %s episodes (stream=%s, seed=%s): %s",
        len(plan), stream.name.lower(), seed, {c.value: n for c, n in counts.items()},
    )

    tasks = [(episode_id, cls_, s, cfg) for episode_id, cls_, s in plan]
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / EPISODES_FILE, "w", encoding="utf-8", newline="\n") as f:
            for line in _iter_lines(tasks, cfg.workers):
                f.write(line)
                f.write("\n")
        manifest = DatasetManifest(
            seed=seed,
            stream=stream,
            sim_config=cfg.model_dump(mode="json"),
            config_hash=config_hash(cfg),
            class_counts=counts,
            episodes=len(plan),
            steps=len(plan) * cfg.episode_len,
            split=split,
        )
        (out / MANIFEST_FILE).write_text(
            json.dumps(manifest.model_dump(mode="json"), ensure_ascii=False, indent=2, sort_keys=True),
            encoding="utf-8",
        )
    except OSError as e:
        raise ZlikError(f"Не удалось записать датасет в {out}: {e}") from e
    logger.info("Dataset written to %s (%s steps)", out, manifest.steps)
    return manifest


def _iter_lines(tasks: list, workers: int) -> Iterable[str]:
    progress = dict(total=len(tasks), disable=not settings.PROGRESS, desc="episodes", unit="ep")
    if workers <= 1 or len(tasks) < 2:
        for t in tqdm(tasks, **progress):
            yield _make_episode_line(t)
        return
    # map сохраняет порядок: файл не зависит от числа процессов
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from tqdm(pool.map(_make_episode_line, tasks, chunksize=8), **progress)


@dataclass
class Dataset:
    """Загруженный датасет: манифест + записи в порядке файла."""
    path: Path
    manifest: DatasetManifest
    records: list[EpisodeRecord]

    def __len__(self) -> int:
        return len(self.records)

    @property
    def sim_config(self) -> SimConfig:
        return SimConfig.model_validate(self.manifest.sim_config)

    def select(
        self,
        split: Optional[str] = None,
        classes: Optional[Iterable[DamageClass]] = None,
    ) -> list[EpisodeRecord]:
        """Записи из части train/val (None — все) и заданных классов (None — все)."""
        records = self.records
        if split is not None:
            wanted = set(getattr(self.manifest.split, split))
            records = [r for r in records if r.episode_id in wanted]
        if classes is not None:
            allowed = set(classes)
            records = [r for r in records if r.damage_class in allowed]
        return records

    def by_class(self, records: Optional[list[EpisodeRecord]] = None) -> dict[DamageClass, list[EpisodeRecord]]:
        out: dict[DamageClass, list[EpisodeRecord]] = {}
        for r in self.records if records is None else records:
            out.setdefault(r.damage_class, []).append(r)
        return out

    def descriptions(self) -> list[str]:
        """Различные описания в порядке первого появления."""
        return list(dict.fromkeys(r.description for r in self.records))


def resolve_dataset_dir(path: str | Path) -> Path:
    p = Path(path)
    if p.suffix == ".jsonl":
        p = p.parent
    return p


def load_manifest(path: str | Path) -> DatasetManifest:
    p = resolve_dataset_dir(path) / MANIFEST_FILE
    if not p.is_file():
        raise MissingArtifactError(f"Манифест датасета не найден: {p}")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{p}: некорректный JSON: {e}") from e
    version = raw.get("format_version") if isinstance(raw, dict) else None
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{p}: формат {version!r}, ожидается {FORMAT_VERSION!r}")
    try:
        return DatasetManifest.model_validate(raw)
    except ValidationError as e:
        raise DataFormatError(f"{p}: некорректный манифест: {e}") from e


def load_dataset(path: str | Path) -> Dataset:
    """Загружает датасет из каталога (или пути к episodes.jsonl) с проверкой формата."""
    root = resolve_dataset_dir(path)
    manifest = load_manifest(root)
    episodes_path = root / EPISODES_FILE
    if not episodes_path.is_file():
        raise MissingArtifactError(f"Файл эпизодов не найден: {episodes_path}")

    records: list[EpisodeRecord] = []
    seen: set[str] = set()
    with open(episodes_path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = EpisodeRecord.model_validate(json.loads(line))
            except (json.JSONDecodeError, ValidationError) as e:
                raise DataFormatError(f"{episodes_path}:{lineno}: некорректная запись: {e}") from e
            if record.episode_id in seen:
                raise DataFormatError(f"{episodes_path}:{lineno}: повторный episode_id {record.episode_id}")
            seen.add(record.episode_id)
            records.append(record)

    if len(records) != manifest.episodes:
        raise DataFormatError(
            f"{episodes_path}: {len(records)} эпизодов, в манифесте {manifest.episodes}"
        )
    logger.info("Loaded dataset %s: %s episodes", root, len(records))
    return Dataset(path=root, manifest=manifest, records=records)
