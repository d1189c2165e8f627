from app.zlik.embed.providers import (
    DEFAULT_DIM,
    EmbeddingProvider,
    EmbeddingSource,
    HashedEmbedder,
    TableEmbedder,
    TextEmbedding,
    normalize_text,
    text_tokens,
)
from app.zlik.embed.table import TABLE_FILE, build_provider, load_embedding_table, write_embedding_table

__all__ = [
    "DEFAULT_DIM",
    "EmbeddingProvider",
    "EmbeddingSource",
    "HashedEmbedder",
    "TableEmbedder",
    "TextEmbedding",
    "normalize_text",
    "text_tokens",
    "TABLE_FILE",
    "build_provider",
    "load_embedding_table",
    "write_embedding_table",
]
