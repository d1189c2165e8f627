from __future__ import annotations


class ZlikError(Exception):
    """
    Базовая ошибка приложения. exit_code определяет код выхода CLI.
    """
    exit_code: int = 1


class ConfigError(ZlikError):
    exit_code = 2


class DataFormatError(ZlikError):
    exit_code = 3


class MissingArtifactError(ZlikError):
    exit_code = 4


class DomainError(ValueError):
    """Значение вне области определения операции (NaN, N < 2, пустой текст)."""


class ShapeError(ValueError):
    """Несовпадение формы тензора или размерности."""


class LengthError(ValueError):
    """Слишком короткая последовательность."""


class DamageSpecError(ValueError):
    """Описание повреждения нарушает инварианты своего класса."""


class LookupEmbeddingError(KeyError):
    """Строки нет в загруженной таблице эмбеддингов."""

    def __init__(self, text: str) -> None:
        super().__init__(text)
        self.text = text

    def __str__(self) -> str:
        return f"Нет эмбеддинга для строки: {self.text!r}"
