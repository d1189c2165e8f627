"""
Провайдеры эмбеддингов описаний повреждений.

HashedEmbedder — детерминированный встроенный эмбеддер (униграммы слов + триграммы символов,
знаковое хеширование). TableEmbedder — точный поиск в таблице, экспортированной из
внешней модели предложений.
"""
from __future__ import annotations

import abc
import enum
import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping

import numpy as np

from app.zlik.errors import DomainError, LookupEmbeddingError, ShapeError

DEFAULT_DIM = 768
NORM_TOL = 1e-6

_PUNCT_RE = re.compile(r"[^\w\s]", flags=re.UNICODE)
_SPACE_RE = re.compile(r"\s+")


class EmbeddingSource(str, enum.Enum):
    HASHED = "hashed"
    IMPORTED = "imported"


@dataclass(frozen=True, eq=False)
class TextEmbedding:
    vector: np.ndarray
    source: EmbeddingSource

    def __post_init__(self) -> None:
        norm = float(np.linalg.norm(self.vector))
        if abs(norm - 1.0) > NORM_TOL:
            raise DomainError(f"Норма эмбеддинга {norm} != 1")

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


class EmbeddingProvider(abc.ABC):
    """Неизменяемый после создания провайдер φ(x)."""

    source: EmbeddingSource

    def __init__(self, dim: int) -> None:
        if dim <= 0:
            raise ShapeError(f"Размерность эмбеддинга должна быть > 0, получено {dim}")
        self._dim = dim

    @property
    def dim(self) -> int:
        return self._dim

    @abc.abstractmethod
    def _vector(self, text: str) -> np.ndarray:
        ...

    def embed(self, text: str) -> TextEmbedding:
        if not isinstance(text, str) or not text.strip():
            raise DomainError("Текст описания пуст")
        return TextEmbedding(vector=self._vector(text), source=self.source)

    def embed_many(self, texts: Iterable[str]) -> np.ndarray:
        """Матрица (n, dim) float32."""
        rows = [self.embed(t).vector for t in texts]
        if not rows:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.stack(rows).astype(np.float32)


def normalize_text(text: str) -> str:
    text = _PUNCT_RE.sub(" ", text.lower())
    return _SPACE_RE.sub(" ", text).strip()


def text_tokens(text: str) -> list[str]:
    """Униграммы слов ("w:") и триграммы символов нормализованной строки ("c:")."""
    norm = normalize_text(text)
    words = [f"w:{w}" for w in norm.split(" ") if w]
    trigrams = [f"c:{norm[i:i + 3]}" for i in range(len(norm) - 2)]
    return words + trigrams


@lru_cache(maxsize=65536)
def _token_hash(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "big")


class HashedEmbedder(EmbeddingProvider):
    source = EmbeddingSource.HASHED

    def __init__(self, dim: int = DEFAULT_DIM) -> None:
        super().__init__(dim)

    def _vector(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in text_tokens(text):
            h = _token_hash(token)
            sign = -1.0 if h >> 63 else 1.0
            vec[h % self.dim] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            raise DomainError(f"Текст не содержит токенов: {text!r}")
        return vec / norm


class TableEmbedder(EmbeddingProvider):
    source = EmbeddingSource.IMPORTED

    def __init__(self, table: Mapping[str, np.ndarray], dim: int = DEFAULT_DIM) -> None:
        super().__init__(dim)
        for text, vec in table.items():
            if vec.shape != (dim,):
                raise ShapeError(f"Эмбеддинг {text!r}: размерность {vec.shape}, ожидается ({dim},)")
        self._table = dict(table)

    def __len__(self) -> int:
        return len(self._table)

    def __contains__(self, text: object) -> bool:
        return text in self._table

    def _vector(self, text: str) -> np.ndarray:
        try:
            return self._table[text]
        except KeyError:
            raise LookupEmbeddingError(text) from None
