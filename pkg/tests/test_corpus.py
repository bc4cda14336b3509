import pytest

from speclab.corpus import (EOS, VOCAB_SIZE, CorpusError, decode, encode, ingest_corpus,
                            synthetic_corpus, synthetic_text)


def test_byte_ids_and_eos():
    assert encode("ab") == [97, 98, EOS]
    assert encode("é", eos=False) == [0xC3, 0xA9]
    assert decode(encode("héllo")) == "héllo"
    assert VOCAB_SIZE == 257


def test_text_file_one_record_per_line(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("ab\n\ncd\n", encoding="utf-8")
    assert ingest_corpus(path) == [[97, 98, EOS], [99, 100, EOS]]


def test_jsonl_records(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('{"text": "ab"}\n{"text": "c", "id": 3}\n')
    assert ingest_corpus(path) == [[97, 98, EOS], [99, EOS]]


def test_malformed_jsonl_reports_line(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('{"text": "ab"}\n\n{"text": 5}\n')
    with pytest.raises(CorpusError, match=":3:"):
        ingest_corpus(path)
    path.write_text('{"text": "ab"}\nnot json\n')
    with pytest.raises(CorpusError, match=":2:"):
        ingest_corpus(path)


def test_empty_file_warns(tmp_path):
    path = tmp_path / "empty.txt"
    path.write_text("")
    with pytest.warns(UserWarning, match="empty"):
        assert ingest_corpus(path) == []


def test_invalid_utf8_and_missing_file(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_bytes(b"\xff\xfe\x00")
    with pytest.raises(CorpusError, match="UTF-8"):
        ingest_corpus(path)
    with pytest.raises(FileNotFoundError):
        ingest_corpus(tmp_path / "missing.txt")


def test_ingest_is_deterministic_and_read_only(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("hello world\nsecond line\n")
    before = path.read_bytes()
    assert ingest_corpus(path) == ingest_corpus(path)
    assert path.read_bytes() == before


def test_synthetic_corpus_size_and_determinism():
    seqs = synthetic_corpus(50_000, seed=0)
    assert sum(map(len, seqs)) >= 50_000
    assert seqs == synthetic_corpus(50_000, seed=0)
    assert seqs != synthetic_corpus(50_000, seed=1)
    assert all(s[-1] == EOS and max(s[:-1]) < 128 for s in seqs)
    assert synthetic_text(100, seed=2)[0].endswith(".")
