"""Byte-level corpus ingestion.

Token ids are UTF-8 byte values 0..255; ``EOS`` (256) closes every record, so
models over this alphabet have ``VOCAB_SIZE = 257``.
"""
from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np

EOS = 256
VOCAB_SIZE = 257


class CorpusError(ValueError):
    pass


def encode(text: str, eos: bool = True) -> list[int]:
    ids = list(text.encode("utf-8"))
    if eos:
        ids.append(EOS)
    return ids


def decode(ids) -> str:
    return bytes(i for i in ids if i != EOS).decode("utf-8", errors="replace")


def _records(path: Path, fmt: str, text_field: str):
    raw = path.read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorpusError(f"{path}: not valid UTF-8 ({exc})") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if fmt == "text":
            yield line
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
        if not isinstance(obj, dict) or not isinstance(obj.get(text_field), str):
            raise CorpusError(f"{path}:{lineno}: expected an object with a string {text_field!r} field")
        yield obj[text_field]


def ingest_corpus(path, fmt: str | None = None, text_field: str = "text",
                  eos: bool = True) -> list[list[int]]:
    """One token sequence per non-empty line (text) or per object (JSONL).

    ``fmt`` is ``"text"`` or ``"jsonl"``; by default it follows the file suffix.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if fmt is None:
        fmt = "jsonl" if path.suffix.lower() in (".jsonl", ".ndjson") else "text"
    if fmt not in ("text", "jsonl"):
        raise ValueError(f"unknown corpus format {fmt!r}")
    seqs = [encode(r, eos) for r in _records(path, fmt, text_field)]
    if not seqs:
        warnings.warn(f"{path}: corpus is empty", stacklevel=2)
    return seqs


_SYLLABLES = ("ba", "ce", "di", "fo", "gu", "ha", "je", "ki", "lo", "mu", "na", "pe",
              "ri", "so", "tu", "va", "we", "xi", "yo", "ze", "th", "st", "an", "er")


def synthetic_text(num_tokens: int, seed: int = 0, vocab_words: int = 400,
                   line_words: tuple[int, int] = (6, 16)) -> list[str]:
    """Pseudo-English lines with Zipfian words and first-order word transitions.

    Returns lines whose encoded length (bytes + EOS per line) reaches ``num_tokens``.
    """
    rng = np.random.default_rng(seed)
    words = []
    seen = set()
    while len(words) < vocab_words:
        w = "".join(rng.choice(_SYLLABLES, size=rng.integers(1, 4)))
        if w not in seen:
            seen.add(w)
            words.append(w)
    ranks = np.arange(1, vocab_words + 1, dtype=np.float64)
    unigram = 1.0 / ranks
    unigram /= unigram.sum()
    # each word prefers a few successors, giving byte n-grams real structure
    succ = rng.integers(0, vocab_words, size=(vocab_words, 4))
    lines, total = [], 0
    while total < num_tokens:
        n = int(rng.integers(line_words[0], line_words[1] + 1))
        w = int(rng.choice(vocab_words, p=unigram))
        out = [words[w]]
        for _ in range(n - 1):
            w = int(succ[w, rng.integers(0, 4)]) if rng.random() < 0.7 else int(rng.choice(vocab_words, p=unigram))
            out.append(words[w])
        line = " ".join(out) + "."
        lines.append(line)
        total += len(line) + 1
    return lines


def synthetic_corpus(num_tokens: int, seed: int = 0) -> list[list[int]]:
    return [encode(line) for line in synthetic_text(num_tokens, seed)]
