"""
Отчёты: report.json / confusion.json (полная точность), report.txt / confusion.txt
(выровненные таблицы, 2 знака), report.xlsx.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Optional

from openpyxl import Workbook
from pydantic import ValidationError

from app.zlik.core.types import STATE_FIELDS
from app.zlik.errors import DataFormatError, MissingArtifactError
from app.zlik.schemas.report import DAMAGED, OVERALL, ConfusionMatrix, EvalCell, ReportBundle
from app.zlik.sim.damage import DamageClass

logger = logging.getLogger(__name__)

REPORT_JSON = "report.json"
REPORT_TXT = "report.txt"
REPORT_XLSX = "report.xlsx"
CONFUSION_JSON = "confusion.json"
CONFUSION_TXT = "confusion.txt"

ROW_ORDER = [c.value for c in DamageClass] + [DAMAGED, OVERALL]
MISSING = "n/a"


def fmt_cell(cell: Optional[EvalCell]) -> str:
    if cell is None:
        return MISSING
    return f"{cell.mse_mean:.2f} ± {cell.mse_std:.2f}"


def align_table(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in rows)


def render_compare_text(bundle: ReportBundle) -> str:
    """Таблица в раскладке «класс → строки моделей», затем разбивка по измерениям."""
    lines = [f"protocol: {bundle.protocol}", f"config: {bundle.config_hash[:12]}", ""]
    row_names = bundle.rows or [r.model for r in bundle.reports]

    for cls_name in ROW_ORDER:
        present = [m for m in row_names if (r := bundle.report(m)) and cls_name in r.cells]
        if not present:
            continue
        table = [["model", "MSE ± std", "windows"]]
        for m in present:
            cell = bundle.report(m).cells[cls_name]
            table.append([m, fmt_cell(cell), str(cell.count)])
        lines += [f"[{cls_name}]", align_table(table), ""]

    for cls_name in bundle.breakdown_classes:
        table = [["model", *STATE_FIELDS]]
        for m in row_names:
            report = bundle.report(m)
            cell = report.cells.get(cls_name) if report else None
            if cell is None:
                continue
            table.append([m] + [f"{a:.2f} ± {s:.2f}" for a, s in zip(cell.per_dim_mean, cell.per_dim_std)])
        if len(table) > 1:
            lines += [f"[{cls_name} per dimension]", align_table(table), ""]

    params = [[r.model, str(r.parameters)] for r in bundle.reports if r.parameters is not None]
    if params:
        lines += ["[parameters]", align_table([["model", "count"], *params]), ""]
    return "\n".join(lines).rstrip() + "\n"


def render_confusion_text(cm: ConfusionMatrix) -> str:
    header = ["described \\ true", *cm.classes]
    table = [header]
    for i, given in enumerate(cm.classes):
        table.append([given] + [f"{cm.mean[i][j]:.2f} ± {cm.std[i][j]:.2f}" for j in range(len(cm.classes))])
    return (
        f"model: {cm.model}\nseed: {cm.seed}\n\n{align_table(table)}\n\n"
        f"diagonal column-minimal: {cm.diagonal_wins()}/{len(cm.classes)}\n"
    )


def build_workbook(bundle: Optional[ReportBundle], cm: Optional[ConfusionMatrix]) -> Workbook:
    wb = Workbook()
    ws = wb.active
    ws.title = "compare"
    ws.append(["Класс", "Модель", "MSE", "Std", "Окна", *(f"MSE {f}" for f in STATE_FIELDS)])
    if bundle is not None:
        for cls_name in ROW_ORDER:
            for m in bundle.rows or [r.model for r in bundle.reports]:
                report = bundle.report(m)
                cell = report.cells.get(cls_name) if report else None
                if cell is not None:
                    ws.append([cls_name, m, cell.mse_mean, cell.mse_std, cell.count, *cell.per_dim_mean])

    if cm is not None:
        ws_cm = wb.create_sheet("confusion")
        ws_cm.append(["Описание \\ истина", *cm.classes])
        for i, given in enumerate(cm.classes):
            ws_cm.append([given, *cm.mean[i]])
        ws_cm.append([])
        ws_cm.append(["Std", *cm.classes])
        for i, given in enumerate(cm.classes):
            ws_cm.append([given, *cm.std[i]])
    return wb


def _dump(path: Path, model) -> None:
    path.write_text(
        json.dumps(model.model_dump(mode="json"), ensure_ascii=False, indent=2, sort_keys=True),
        encoding="utf-8",
    )


def write_reports(
    out_dir: str | Path,
    bundle: Optional[ReportBundle] = None,
    cm: Optional[ConfusionMatrix] = None,
    xlsx: bool = True,
) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if bundle is not None:
        _dump(out / REPORT_JSON, bundle)
        (out / REPORT_TXT).write_text(render_compare_text(bundle), encoding="utf-8")
        written += [out / REPORT_JSON, out / REPORT_TXT]
    if cm is not None:
        _dump(out / CONFUSION_JSON, cm)
        (out / CONFUSION_TXT).write_text(render_confusion_text(cm), encoding="utf-8")
        written += [out / CONFUSION_JSON, out / CONFUSION_TXT]
    if xlsx and (bundle is not None or cm is not None):
        build_workbook(bundle, cm).save(out / REPORT_XLSX)
        written.append(out / REPORT_XLSX)
    logger.info("Reports written: %s", ", ".join(p.name for p in written))
    return written


def _load(path: Path, model_cls):
    try:
        return model_cls.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, ValidationError) as e:
        raise DataFormatError(f"{path}: некорректный отчёт: {e}") from e


def load_reports(run_dir: str | Path) -> tuple[Optional[ReportBundle], Optional[ConfusionMatrix]]:
    """Читает report.json и/или confusion.json из каталога прогона."""
    root = Path(run_dir)
    bundle = _load(root / REPORT_JSON, ReportBundle) if (root / REPORT_JSON).is_file() else None
    cm = _load(root / CONFUSION_JSON, ConfusionMatrix) if (root / CONFUSION_JSON).is_file() else None
    if bundle is None and cm is None:
        raise MissingArtifactError(f"В {root} нет {REPORT_JSON} или {CONFUSION_JSON}")
    return bundle, cm
