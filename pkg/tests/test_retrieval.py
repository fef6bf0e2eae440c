import math
import random

import pytest

from src.retrieval import (
    ContextDoc,
    ContextIndex,
    DocKind,
    DuplicateDocumentError,
    build_index,
    collect_documents,
    cosine,
    embed,
    ingest,
    retrieve,
)

WORDS = ["reentrancy", "withdraw", "balance", "pickle", "token", "auth", "session", "nonce",
         "oracle", "price", "signature", "admin", "owner", "transfer", "mint", "burn"]


def doc(doc_id: str, text: str, kind: DocKind = DocKind.DESIGN_DOC) -> ContextDoc:
    return ContextDoc(doc_id, f"docs/{doc_id}.md", kind, text)


def brute_force(docs, query, k):
    query_vector = embed(query)
    scored = sorted(((cosine(query_vector, embed(d.text)), d.doc_id) for d in docs), key=lambda s: (-s[0], s[1]))
    return [doc_id for _, doc_id in scored[:k]]


def test_embeddings_are_unit_length_or_zero():
    assert math.isclose(embed("withdraw the balance").norm, 1.0, abs_tol=1e-6)
    zero = embed("")
    assert zero.norm == 0 and zero.dimension == 256
    assert cosine(zero, embed("anything")) == 0.0


def test_embedding_is_deterministic():
    assert embed("Owner may mint tokens") == embed("owner MAY mint tokens")


def test_three_document_ranking_matches_brute_force():
    docs = [
        doc("a", "withdraw balance reentrancy guard"),
        doc("b", "pickle session token"),
        doc("c", "withdraw transfer owner"),
    ]
    index = ingest(docs)
    hits = retrieve(index, "reentrancy in withdraw", k=3)
    assert [h.doc_id for h in hits] == brute_force(docs, "reentrancy in withdraw", 3)
    assert hits[0].doc_id == "a"
    assert [h.score for h in hits] == sorted((h.score for h in hits), reverse=True)


def test_ties_break_on_doc_id():
    index = ingest([doc("z", "same words here"), doc("m", "same words here")])
    assert [h.doc_id for h in retrieve(index, "same words", k=2)] == ["m", "z"]


def test_k_zero_and_empty_index():
    index = ingest([doc("a", "text")])
    assert retrieve(index, "text", k=0) == []
    assert retrieve(ContextIndex(), "text", k=4) == []


def test_k_larger_than_index():
    index = ingest([doc("a", "one"), doc("b", "two")])
    assert len(retrieve(index, "one", k=10)) == 2


def test_duplicate_ids_in_batch_are_rejected():
    with pytest.raises(DuplicateDocumentError) as info:
        ingest([doc("a", "x"), doc("a", "y")])
    assert info.value.duplicates == ["a"]


def test_reingest_replaces_by_doc_id():
    index = ingest([doc("a", "old text")])
    ingest([doc("a", "new text")], index)
    assert len(index) == 1
    assert retrieve(index, "new", k=1)[0].text == "new text"


def test_empty_text_is_invalid():
    with pytest.raises(ValueError):
        doc("a", "")


def test_oracle_equivalence_over_random_corpora():
    rng = random.Random(7)
    for _ in range(100):
        size = rng.randint(1, 200)
        docs = [doc(f"d{i:03d}", " ".join(rng.choices(WORDS, k=rng.randint(1, 12)))) for i in range(size)]
        index = build_index(docs)
        query = " ".join(rng.choices(WORDS, k=rng.randint(1, 6)))
        for k in (1, 4, 10):
            assert [h.doc_id for h in retrieve(index, query, k)] == brute_force(docs, query, k)


def test_collect_documents(tmp_path):
    (tmp_path / "guide.md").write_text("Always validate signatures.", encoding="utf-8")
    (tmp_path / "src").mkdir()
    (tmp_path / "src" / "vault.sol").write_text("contract Vault {}", encoding="utf-8")
    (tmp_path / "empty.txt").write_text("  \n", encoding="utf-8")
    (tmp_path / ".git").mkdir()
    (tmp_path / ".git" / "config").write_text("[core]", encoding="utf-8")
    (tmp_path / "blob.bin").write_bytes(b"\xff\xfe\x00")

    docs, skipped = collect_documents(tmp_path)
    assert {(d.doc_id, d.kind) for d in docs} == {
        ("guide.md", DocKind.DESIGN_DOC),
        ("src/vault.sol", DocKind.HISTORICAL_CODE),
    }
    assert sorted(path for path, _ in skipped) == ["blob.bin", "empty.txt"]

    overridden, _ = collect_documents(tmp_path, DocKind.SECURITY_GUIDELINE)
    assert {d.kind for d in overridden} == {DocKind.SECURITY_GUIDELINE}
