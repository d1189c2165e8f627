from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from app.zlik.embed.providers import DEFAULT_DIM, EmbeddingProvider, HashedEmbedder, TableEmbedder
from app.zlik.errors import DataFormatError, MissingArtifactError
from app.zlik.schemas.config import EmbedConfig

logger = logging.getLogger(__name__)

TABLE_FILE = "embedding_table.jsonl"


def load_embedding_table(path: str | Path, dim: Optional[int] = None) -> TableEmbedder:
    """
    Читает таблицу {"text": ..., "embedding": [...]} построчно.
    Векторы перенормируются при загрузке; нулевые и нечисловые строки отклоняются.
    """
    p = Path(path)
    if not p.is_file():
        raise MissingArtifactError(f"Таблица эмбеддингов не найдена: {p}")

    table: dict[str, np.ndarray] = {}
    row_dim: Optional[int] = None
    with open(p, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                text = row["text"]
                vec = np.asarray(row["embedding"], dtype=np.float64)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise DataFormatError(f"{p}:{lineno}: некорректная строка таблицы: {e}") from e
            if not isinstance(text, str) or not text or vec.ndim != 1:
                raise DataFormatError(f"{p}:{lineno}: ожидается непустой text и вектор embedding")
            if row_dim is None:
                row_dim = vec.shape[0]
            elif vec.shape[0] != row_dim:
                raise DataFormatError(
                    f"{p}:{lineno}: размерность {vec.shape[0]} не совпадает с {row_dim}"
                )
            norm = float(np.linalg.norm(vec))
            if not math.isfinite(norm) or norm == 0.0:
                raise DataFormatError(f"{p}:{lineno}: нулевой или нечисловой вектор")
            if text in table:
                raise DataFormatError(f"{p}:{lineno}: повторная строка {text!r}")
            table[text] = vec / norm

    if dim is not None and row_dim is not None and row_dim != dim:
        raise DataFormatError(f"{p}: размерность таблицы {row_dim}, в конфиге {dim}")
    logger.info("Loaded embedding table %s: %s rows, dim=%s", p, len(table), row_dim)
    return TableEmbedder(table, dim=row_dim or dim or DEFAULT_DIM)


def write_embedding_table(path: str | Path, provider: EmbeddingProvider, texts: Iterable[str]) -> int:
    """Пишет таблицу для различных texts в порядке первого появления. Возвращает число строк."""
    unique = list(dict.fromkeys(texts))
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8", newline="\n") as f:
        for text in unique:
            vec = provider.embed(text).vector
            f.write(json.dumps({"text": text, "embedding": vec.tolist()}, ensure_ascii=False))
            f.write("\n")
    return len(unique)


def build_provider(cfg: EmbedConfig) -> EmbeddingProvider:
    if cfg.provider == "table":
        return load_embedding_table(cfg.table_path, dim=cfg.dim)
    return HashedEmbedder(dim=cfg.dim)
