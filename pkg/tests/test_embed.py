import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from app.zlik.embed import HashedEmbedder, TableEmbedder, build_provider, load_embedding_table, write_embedding_table
from app.zlik.embed.providers import EmbeddingSource, normalize_text, text_tokens
from app.zlik.errors import DataFormatError, DomainError, LookupEmbeddingError, MissingArtifactError
from app.zlik.schemas.config import EmbedConfig

words = st.lists(st.sampled_from(["front", "left", "tire", "is", "flat", "axle", "broken"]), min_size=1, max_size=8)


def test_hashed_embedding_is_unit_and_deterministic():
    emb = HashedEmbedder(dim=64)
    a = emb.embed("The front left tire is flat.")
    b = HashedEmbedder(dim=64).embed("The front left tire is flat.")
    assert a.dim == 64
    assert np.linalg.norm(a.vector) == pytest.approx(1.0)
    np.testing.assert_array_equal(a.vector, b.vector)
    assert a.source == EmbeddingSource.HASHED


def test_hashed_embedding_ignores_case_and_punctuation():
    emb = HashedEmbedder(dim=128)
    np.testing.assert_array_equal(
        emb.embed("The FRONT axle, is broken!").vector,
        emb.embed("the front axle is broken").vector,
    )


@given(words)
def test_hashed_embedding_depends_only_on_tokens(ws):
    emb = HashedEmbedder(dim=96)
    text = " ".join(ws)
    spaced = "  " + "   ".join(ws) + " ."
    assert text_tokens(text) == text_tokens(spaced)
    np.testing.assert_array_equal(emb.embed(text).vector, emb.embed(spaced).vector)


def test_similar_sentences_are_closer():
    emb = HashedEmbedder()
    a = emb.embed("The front left tire is punctured.").vector
    b = emb.embed("The front left tire has been punctured.").vector
    c = emb.embed("The vehicle fell from about 10 meters.").vector
    assert a @ b > a @ c


def test_empty_text_rejected():
    emb = HashedEmbedder(dim=16)
    with pytest.raises(DomainError):
        emb.embed("   ")
    with pytest.raises(DomainError):
        emb.embed("?!")
    assert normalize_text("?!") == ""


def test_embed_many_shape():
    emb = HashedEmbedder(dim=16)
    out = emb.embed_many(["a b c", "d e f"])
    assert out.shape == (2, 16) and out.dtype == np.float32
    assert emb.embed_many([]).shape == (0, 16)


def test_table_round_trip(tmp_path):
    emb = HashedEmbedder(dim=24)
    path = tmp_path / "table.jsonl"
    texts = ["The rear axle is broken.", "The vehicle is healthy.", "The rear axle is broken."]
    assert write_embedding_table(path, emb, texts) == 2
    table = load_embedding_table(path, dim=24)
    assert len(table) == 2 and "The vehicle is healthy." in table
    np.testing.assert_allclose(table.embed(texts[0]).vector, emb.embed(texts[0]).vector, atol=1e-12)
    assert table.embed(texts[0]).source == EmbeddingSource.IMPORTED
    with pytest.raises(LookupEmbeddingError) as err:
        table.embed("The rear axle has snapped.")
    assert "rear axle has snapped" in str(err.value)


def test_table_renormalizes_rows(tmp_path):
    path = tmp_path / "t.jsonl"
    path.write_text(json.dumps({"text": "x", "embedding": [3.0, 4.0]}) + "\n", encoding="utf-8")
    np.testing.assert_allclose(load_embedding_table(path).embed("x").vector, [0.6, 0.8])


@pytest.mark.parametrize(
    "lines",
    [
        ['{"text": "a", "embedding": [1, 0]}', '{"text": "b", "embedding": [1, 0, 0]}'],
        ['{"text": "a", "embedding": [0, 0]}'],
        ['{"text": "a", "embedding": [1, 0]}', '{"text": "a", "embedding": [0, 1]}'],
        ['{"text": "a"}'],
        ["not json"],
    ],
)
def test_table_format_errors(tmp_path, lines):
    path = tmp_path / "bad.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(DataFormatError):
        load_embedding_table(path)


def test_table_dim_mismatch_with_config(tmp_path):
    path = tmp_path / "t.jsonl"
    path.write_text('{"text": "a", "embedding": [1, 0]}\n', encoding="utf-8")
    with pytest.raises(DataFormatError):
        load_embedding_table(path, dim=768)


def test_table_missing_file(tmp_path):
    with pytest.raises(MissingArtifactError):
        load_embedding_table(tmp_path / "absent.jsonl")


def test_empty_table_is_valid(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("", encoding="utf-8")
    table = load_embedding_table(path, dim=8)
    assert isinstance(table, TableEmbedder) and len(table) == 0 and table.dim == 8


def test_build_provider(tmp_path):
    assert isinstance(build_provider(EmbedConfig(dim=32)), HashedEmbedder)
    path = tmp_path / "t.jsonl"
    write_embedding_table(path, HashedEmbedder(dim=32), ["abc def"])
    provider = build_provider(EmbedConfig(provider="table", dim=32, table_path=str(path)))
    assert isinstance(provider, TableEmbedder)
