"""
Командная строка zlik: генерация данных, обучение, оценка, отчёты, сервис инференса.

Каждая подкоманда принимает --config, --seed и --out. Результаты пишутся во временный
каталог рядом с --out и переносятся в --out только после успешного завершения;
рядом кладётся run-manifest.json.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import shutil
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional, Sequence

import torch

from app.zlik import __version__
from app.zlik.embed.providers import EmbeddingProvider, HashedEmbedder
from app.zlik.embed.table import TABLE_FILE, build_provider, write_embedding_table
from app.zlik.errors import ConfigError, LookupEmbeddingError, ZlikError
from app.zlik.nn.align import AlignmentModel
from app.zlik.nn.kino import is_conditioned
from app.zlik.schemas.checkpoint import CheckpointMeta
from app.zlik.schemas.config import ExperimentConfig, Variant, config_hash
from app.zlik.schemas.dataset import U64_MAX, SeedStream
from app.zlik.schemas.report import ReportBundle
from app.zlik.services import checkpoint_service, report_service
from app.zlik.services.alignment_service import SYNONYM_PAIR, evaluate_alignment, train_alignment
from app.zlik.services.checkpoint_service import write_json
from app.zlik.services.dataset_service import generate_dataset, load_dataset
from app.zlik.services.eval_service import compare_protocol, confusion_experiment, evaluate
from app.zlik.services.kino_service import collect_finetune_windows, damage_table, fine_tune, train_kino
from app.zlik.settings import config as settings
from app.zlik.settings import setup_logging
from app.zlik.sim.damage import DamageClass

logger = logging.getLogger(__name__)

RUN_MANIFEST = "run-manifest.json"
ALIGN_EVAL_FILE = "alignment_eval.json"


def _seed(value: str) -> int:
    seed = int(value, 0)
    if not 0 <= seed <= U64_MAX:
        raise argparse.ArgumentTypeError("seed должен лежать в [0, 2^64)")
    return seed


def _load_alignment(path: Optional[str], provider: EmbeddingProvider) -> tuple[Optional[AlignmentModel], Optional[CheckpointMeta]]:
    if not path:
        return None, None
    model, meta = checkpoint_service.load_alignment(path)
    if meta.text_dim != provider.dim:
        raise ConfigError(f"{path}: text_dim={meta.text_dim}, провайдер эмбеддингов даёт {provider.dim}")
    return model, meta


# --- подкоманды: каждая пишет в out и возвращает краткую сводку для run-manifest ---


def cmd_gen_data(args: argparse.Namespace, cfg: ExperimentConfig, out: Path) -> dict:
    splits = {}
    if "train" in args.splits:
        m = generate_dataset(cfg.sim, cfg.sim.class_counts, args.seed, out / "train", stream=SeedStream.TRAIN)
        splits["train"] = m.config_hash
    if "test" in args.splits:
        sim = cfg.sim.model_copy(update={"vehicle_mass_kg": cfg.eval.test_vehicle_mass_kg})
        m = generate_dataset(sim, cfg.eval.test_class_counts, args.seed, out / "test", stream=SeedStream.TEST, val_fraction=0.0)
        splits["test"] = m.config_hash
    if "confusion" in args.splits:
        m = generate_dataset(
            cfg.sim, cfg.eval.test_class_counts, args.seed, out / "confusion",
            stream=SeedStream.CONFUSION, val_fraction=0.0,
        )
        splits["confusion"] = m.config_hash
    return {"datasets": splits}


def cmd_embed_export(args: argparse.Namespace, cfg: ExperimentConfig, out: Path) -> dict:
    texts: list[str] = []
    for path in args.dataset:
        texts.extend(load_dataset(path).descriptions())
    texts.extend(SYNONYM_PAIR)
    rows = write_embedding_table(out / TABLE_FILE, HashedEmbedder(dim=cfg.embed.dim), texts)
    logger.info("Embedding table: %s rows", rows)
    return {"rows": rows}


def cmd_train_align(args: argparse.Namespace, cfg: ExperimentConfig, out: Path) -> dict:
    dataset = load_dataset(args.dataset)
    provider = build_provider(cfg.embed)
    model, meta, _ = train_alignment(dataset, cfg, provider, args.seed, out_dir=out)
    held_out = dataset.select("val") or dataset.select("train")
    result = evaluate_alignment(model, held_out, cfg, provider)
    write_json(out / ALIGN_EVAL_FILE, result.model_dump(mode="json"))
    logger.info(
        "Alignment retrieval: text->traj=%.3f traj->text=%.3f z_x std min=%.3f",
        result.text_to_traj_accuracy, result.traj_to_text_accuracy, result.z_x_std_min,
    )
    return {"weights_hash": meta.weights_hash}


def cmd_train_kino(args: argparse.Namespace, cfg: ExperimentConfig, out: Path) -> dict:
    variant = Variant(args.variant) if args.variant else cfg.kino.variant
    dataset = load_dataset(args.dataset)
    provider = build_provider(cfg.embed) if is_conditioned(variant) else None
    align_model, align_meta = _load_alignment(args.align or cfg.eval.align_checkpoint, provider) if provider is not None else (None, None)
    classes = [DamageClass(c) for c in args.classes] if args.classes else None
    _, meta, metrics = train_kino(
        dataset, cfg, args.seed,
        provider=provider, align_model=align_model, align_meta=align_meta,
        variant=variant, classes=classes, dimension_stage=not args.no_dimension_stage, out_dir=out,
    )
    return {"weights_hash": meta.weights_hash, "best_epoch": metrics["best_epoch"]}


def cmd_finetune(args: argparse.Namespace, cfg: ExperimentConfig, out: Path) -> dict:
    model, meta = checkpoint_service.load_kino(args.checkpoint)
    z_table = None
    cls_ = DamageClass(args.damage_class)
    sim = load_dataset(args.dataset).sim_config if args.dataset else cfg.sim
    windows = collect_finetune_windows(cls_, args.seconds, sim, model.cfg, args.seed)
    if is_conditioned(model.variant):
        provider = build_provider(cfg.embed)
        align_model, _ = _load_alignment(args.align or cfg.eval.align_checkpoint, provider)
        z_table = damage_table(windows.descriptions, model.variant, provider, align_model)
    _, tuned_meta = fine_tune(
        model, meta, windows,
        steps=args.steps if args.steps is not None else cfg.eval.finetune_steps,
        lr=cfg.eval.finetune_lr,
        batch_size=cfg.eval.finetune_batch_size,
        seed=args.seed,
        z_table=z_table,
        out_dir=out,
    )
    return {"weights_hash": tuned_meta.weights_hash, "base_hash": tuned_meta.base_hash, "windows": len(windows)}


def _eval_inputs(args: argparse.Namespace, cfg: ExperimentConfig, dataset_path: Optional[str]):
    if not dataset_path:
        raise ConfigError("Не задан датасет (--dataset)")
    dataset = load_dataset(dataset_path)
    model, meta = checkpoint_service.load_kino(args.checkpoint)
    provider = align_model = None
    if is_conditioned(model.variant):
        provider = build_provider(cfg.embed)
        align_model, _ = _load_alignment(args.align or cfg.eval.align_checkpoint, provider)
    return model, meta, dataset, provider, align_model


def cmd_eval(args: argparse.Namespace, cfg: ExperimentConfig, out: Path) -> dict:
    model, meta, dataset, provider, align_model = _eval_inputs(args, cfg, args.dataset or cfg.eval.test_dataset)
    classes = [DamageClass(c) for c in args.classes] if args.classes else None
    report = evaluate(model, dataset, cfg, provider, align_model, meta, classes=classes)
    bundle = ReportBundle(protocol="evaluate", config_hash=config_hash(cfg), rows=[report.model], reports=[report])
    report_service.write_reports(out, bundle=bundle)
    return {"weights_hash": meta.weights_hash, "absent": report.absent}


def cmd_confusion(args: argparse.Namespace, cfg: ExperimentConfig, out: Path) -> dict:
    model, meta, dataset, provider, align_model = _eval_inputs(args, cfg, args.dataset or cfg.eval.confusion_dataset)
    classes = [DamageClass(c) for c in args.classes] if args.classes else cfg.eval.confusion_classes
    cm = confusion_experiment(model, dataset, classes, cfg, args.seed, provider, align_model)
    report_service.write_reports(out, cm=cm)
    return {"weights_hash": meta.weights_hash, "diagonal_wins": cm.diagonal_wins()}


def cmd_compare(args: argparse.Namespace, cfg: ExperimentConfig, out: Path) -> dict:
    if args.dataset:
        cfg = cfg.model_copy(update={"eval": cfg.eval.model_copy(update={"train_dataset": args.dataset})})
    bundle = compare_protocol(cfg, args.seed, out)
    report_service.write_reports(out, bundle=bundle)
    return {"rows": bundle.rows}


def cmd_report(args: argparse.Namespace, cfg: ExperimentConfig, out: Path) -> dict:
    bundle, cm = report_service.load_reports(args.input)
    written = report_service.write_reports(out, bundle=bundle, cm=cm)
    return {"files": [p.name for p in written]}


def cmd_serve(args: argparse.Namespace, cfg: ExperimentConfig, out: Optional[Path]) -> dict:
    from app.zlik.api import inference

    if args.checkpoint:
        settings.SERVE_CHECKPOINT = args.checkpoint
    if args.align:
        settings.SERVE_ALIGN_CHECKPOINT = args.align
    if args.table:
        settings.SERVE_EMBED_TABLE = args.table
    inference.get_state()
    inference.run(host=args.host, port=args.port)
    return {}


COMMANDS: dict[str, Callable[[argparse.Namespace, ExperimentConfig, Path], dict]] = {
    "gen-data": cmd_gen_data,
    "embed-export": cmd_embed_export,
    "train-align": cmd_train_align,
    "train-kino": cmd_train_kino,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "confusion": cmd_confusion,
    "compare": cmd_compare,
    "report": cmd_report,
    "serve": cmd_serve,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON-конфиг эксперимента (по умолчанию: настольный профиль)")
    common.add_argument("--seed", type=_seed, default=0)
    common.add_argument("--out", help="Каталог результатов (по умолчанию runs/<команда>)")

    parser = argparse.ArgumentParser(prog="zlik", description="Language-conditioned kinodynamics for damaged vehicles")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="Сгенерировать train/test/confusion датасеты")
    p.add_argument("--splits", nargs="+", choices=["train", "test", "confusion"], default=["train", "test", "confusion"])

    p = sub.add_parser("embed-export", parents=[common], help="Экспорт таблицы эмбеддингов описаний")
    p.add_argument("--dataset", nargs="+", required=True)

    p = sub.add_parser("train-align", parents=[common], help="Обучить общее пространство повреждений")
    p.add_argument("--dataset", required=True)

    p = sub.add_parser("train-kino", parents=[common], help="Обучить модель кинодинамики")
    p.add_argument("--dataset", required=True)
    p.add_argument("--align", help="Чекпоинт выравнивания (нужен для zlik и monolithic)")
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--classes", nargs="+", choices=[c.value for c in DamageClass])
    p.add_argument("--no-dimension-stage", action="store_true", help="Отключить стадию внимания по каналам")

    p = sub.add_parser("finetune", parents=[common], help="Дообучить модель на k секундах данных класса")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--class", dest="damage_class", required=True, choices=[c.value for c in DamageClass])
    p.add_argument("--seconds", type=float, required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--dataset", help="Взять параметры симулятора из манифеста датасета")
    p.add_argument("--align")

    for name, help_ in (("eval", "Оценить модель на тестовом датасете"), ("confusion", "Матрица ошибок по описаниям")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--dataset")
        p.add_argument("--align")
        p.add_argument("--classes", nargs="+", choices=[c.value for c in DamageClass])

    p = sub.add_parser("compare", parents=[common], help="Полный протокол сравнения моделей")
    p.add_argument("--dataset", help="Обучающий датасет (иначе eval.train_dataset или генерация)")

    p = sub.add_parser("report", parents=[common], help="Перерисовать отчёты из JSON")
    p.add_argument("--input", required=True, help="Каталог с report.json и/или confusion.json")

    p = sub.add_parser("serve", parents=[common], help="HTTP-сервис инференса")
    p.add_argument("--checkpoint")
    p.add_argument("--align")
    p.add_argument("--table")
    p.add_argument("--host", default="0.0.0.0")
    p.add_argument("--port", type=int, default=8000)
    return parser


def tree_hash(root: Path) -> str:
    """SHA-256 по относительным путям и содержимому всех файлов каталога."""
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file() and p.name != RUN_MANIFEST):
        digest.update(path.relative_to(root).as_posix().encode("utf-8"))
        with open(path, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 20), b""):
                digest.update(chunk)
    return digest.hexdigest()


def _publish(staging: Path, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for item in staging.iterdir():
        target = out / item.name
        if target.is_dir():
            shutil.rmtree(target)
        elif target.exists():
            target.unlink()
        shutil.move(str(item), str(target))
    staging.rmdir()


def run_command(args: argparse.Namespace, argv: Sequence[str]) -> None:
    cfg = ExperimentConfig.load(args.config)
    handler = COMMANDS[args.command]
    if args.command == "serve":
        handler(args, cfg, None)
        return

    out = Path(args.out or Path("runs") / args.command)
    staging = out.parent / f".{out.name}.staging"
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir(parents=True)

    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    try:
        summary = handler(args, cfg, staging)
        manifest = {
            "command": args.command,
            "argv": list(argv),
            "version": __version__,
            "config": cfg.model_dump(mode="json"),
            "config_hash": config_hash(cfg),
            "seed": args.seed,
            "state_hash": tree_hash(staging),
            "summary": summary,
            "timings": {
                "started": started.isoformat(),
                "finished": datetime.now(timezone.utc).isoformat(),
                "seconds": round(time.perf_counter() - t0, 3),
            },
        }
        write_json(staging / RUN_MANIFEST, manifest)
        _publish(staging, out)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    logger.info("%s finished in %.1fs, outputs in %s", args.command, time.perf_counter() - t0, out)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    setup_logging()
    if settings.NUM_THREADS:
        torch.set_num_threads(settings.NUM_THREADS)
    try:
        run_command(args, argv)
    except ZlikError as e:
        print(f"zlik {args.command}: {e}", file=sys.stderr)
        return e.exit_code
    except (ValueError, LookupEmbeddingError) as e:
        print(f"zlik {args.command}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
