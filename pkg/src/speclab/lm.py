"""Language models the decoding engine can pair freely.

Every model exposes ``vocab_size``, ``max_context`` (``None`` when unbounded),
``new_cache``, ``prefill``, ``decode_step``, ``forward`` and
``next_distribution``. ``forward(cache, tokens)`` appends tokens to the cache
and returns one row of logits per token; it is the prefill-style pass the
verifier uses.
"""
from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .model import TinyTransformer, softmax

NGRAM_FORMAT = "speclab.ngram"
NGRAM_FORMAT_VERSION = 1


@runtime_checkable
class LanguageModel(Protocol):
    vocab_size: int
    max_context: int | None

    def new_cache(self): ...

    def prefill(self, tokens) -> tuple[np.ndarray, object]: ...

    def decode_step(self, cache, token: int) -> np.ndarray: ...

    def forward(self, cache, tokens) -> np.ndarray: ...

    def next_distribution(self, context) -> np.ndarray: ...


class TokenHistory:
    """Cache for models whose state is just the token history."""

    def __init__(self):
        self.tokens: list[int] = []

    @property
    def length(self) -> int:
        return len(self.tokens)

    def truncate(self, length: int) -> None:
        if not 0 <= length <= len(self.tokens):
            raise ValueError(f"cannot truncate history of length {len(self.tokens)} to {length}")
        del self.tokens[length:]


def _check_ids(tokens, vocab_size):
    for t in tokens:
        if not 0 <= int(t) < vocab_size:
            raise ValueError(f"token id {t} out of range [0, {vocab_size})")


# --------------------------------------------------------------------------- n-gram


class NGramModel:
    """Absolute-discounting n-gram model, interpolated down to uniform over V.

    ``P_k(w|h) = max(c(h,w) - D, 0)/c(h) + D * T(h)/c(h) * P_{k-1}(w|h')``
    where ``T(h)`` is the number of distinct successors of ``h`` and ``h'``
    drops the oldest token. Unseen contexts defer to the lower order;
    ``P_0`` is uniform.
    """

    max_context = None

    def __init__(self, order: int, discount: float, vocab_size: int, tables):
        if not 1 <= order <= 8:
            raise ValueError(f"order must be in [1, 8], got {order}")
        if not 0.0 < discount < 1.0:
            raise ValueError(f"discount must be in (0, 1), got {discount}")
        if vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        self.order = order
        self.discount = float(discount)
        self.vocab_size = vocab_size
        # tables[k-1]: context tuple of length k-1 -> {token: count}
        self.tables: list[dict[tuple, dict[int, int]]] = tables
        self._totals = [{h: sum(c.values()) for h, c in table.items()} for table in tables]
        self._memo: dict[tuple, np.ndarray] = {}

    def _dist(self, context: tuple) -> np.ndarray:
        context = context[max(0, len(context) - (self.order - 1)):]
        hit = self._memo.get(context)
        if hit is not None:
            return hit
        if context:
            lower = self._dist(context[1:])
        else:
            lower = np.full(self.vocab_size, 1.0 / self.vocab_size)
        k = len(context) + 1
        successors = self.tables[k - 1].get(context)
        if not successors:
            dist = lower
        else:
            total = self._totals[k - 1][context]
            dist = lower * (self.discount * len(successors) / total)
            toks = np.fromiter(successors.keys(), dtype=np.int64, count=len(successors))
            counts = np.fromiter(successors.values(), dtype=np.float64, count=len(successors))
            dist[toks] += (counts - self.discount) / total
        dist.flags.writeable = False
        self._memo[context] = dist
        return dist

    def next_distribution(self, context) -> np.ndarray:
        return self._dist(tuple(int(t) for t in context)).copy()

    def logprob(self, token: int, context) -> float:
        return math.log(self._dist(tuple(int(t) for t in context))[token])

    def new_cache(self) -> TokenHistory:
        return TokenHistory()

    def forward(self, cache: TokenHistory, tokens) -> np.ndarray:
        tokens = [int(t) for t in tokens]
        if not tokens:
            raise ValueError("forward needs at least one token")
        _check_ids(tokens, self.vocab_size)
        rows = []
        for t in tokens:
            cache.tokens.append(t)
            history = cache.tokens[len(cache.tokens) - self.order + 1:] if self.order > 1 else ()
            rows.append(np.log(self._dist(tuple(history))))
        return np.stack(rows)

    def prefill(self, tokens):
        tokens = list(tokens)
        if not tokens:
            raise ValueError("prefill needs at least one token")
        cache = self.new_cache()
        return self.forward(cache, tokens)[-1], cache

    def decode_step(self, cache: TokenHistory, token: int) -> np.ndarray:
        return self.forward(cache, [token])[0]

    # serialization

    def to_dict(self) -> dict:
        return {
            "format": NGRAM_FORMAT,
            "version": NGRAM_FORMAT_VERSION,
            "order": self.order,
            "discount": self.discount,
            "vocab_size": self.vocab_size,
            "tables": [
                [[list(h), sorted(c.items())] for h, c in sorted(table.items())]
                for table in self.tables
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NGramModel":
        if data.get("format") != NGRAM_FORMAT:
            raise ValueError("not an n-gram table file")
        if data.get("version") != NGRAM_FORMAT_VERSION:
            raise ValueError(f"unsupported n-gram table version {data.get('version')!r}")
        tables = [
            {tuple(h): {int(t): int(n) for t, n in succ} for h, succ in table}
            for table in data["tables"]
        ]
        return cls(data["order"], data["discount"], data["vocab_size"], tables)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "NGramModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_ngram(corpus: Sequence[Sequence[int]], order: int, discount: float = 0.5,
              vocab_size: int = 257) -> NGramModel:
    """Count n-grams of every order up to ``order`` within each sequence."""
    if not 1 <= order <= 8:
        raise ValueError(f"order must be in [1, 8], got {order}")
    sequences = [list(map(int, s)) for s in corpus]
    if not any(sequences):
        raise ValueError("corpus is empty")
    tables = [defaultdict(Counter) for _ in range(order)]
    for seq in sequences:
        _check_ids(seq, vocab_size)
        for i, tok in enumerate(seq):
            for k in range(1, min(order, i + 1) + 1):
                tables[k - 1][tuple(seq[i - k + 1:i])][tok] += 1
    frozen = [{h: dict(c) for h, c in t.items()} for t in tables]
    return NGramModel(order, discount, vocab_size, frozen)


def perplexity(model, sequences: Sequence[Sequence[int]]) -> float:
    """Per-token perplexity, each sequence scored from an empty history."""
    window = model.order - 1 if isinstance(model, NGramModel) else None
    total, count = 0.0, 0
    for seq in sequences:
        seq = list(seq)
        for i, tok in enumerate(seq):
            lo = 0 if window is None else max(0, i - window)
            total += math.log(model.next_distribution(seq[lo:i])[tok])
            count += 1
    if count == 0:
        raise ValueError("no tokens to score")
    return math.exp(-total / count)


# --------------------------------------------------------------------------- replay


class ScriptExhaustedError(IndexError):
    pass


class ReplayCache(TokenHistory):
    def __init__(self):
        super().__init__()
        self.prompt_len: int | None = None


class ReplayModel:
    """Test double: the distribution at generated position i is ``script[i]``.

    Position 0 is the one right after the prompt; context is ignored.
    """

    max_context = None

    def __init__(self, script):
        script = np.asarray(script, dtype=np.float64)
        if script.ndim != 2 or script.shape[0] == 0 or script.shape[1] < 2:
            raise ValueError("script must be a non-empty list of probability vectors (V >= 2)")
        if (script < 0).any() or not np.allclose(script.sum(axis=1), 1.0, rtol=0, atol=1e-9):
            raise ValueError("every script vector must be non-negative and sum to 1")
        script.flags.writeable = False
        self.script = script
        self.vocab_size = script.shape[1]
        self._logits = np.log(np.maximum(script, np.finfo(np.float64).tiny))

    def distribution_at(self, position: int) -> np.ndarray:
        if not 0 <= position < len(self.script):
            raise ScriptExhaustedError(
                f"replay script has {len(self.script)} positions, queried position {position}")
        return self.script[position].copy()

    def next_distribution(self, context) -> np.ndarray:
        return self.distribution_at(0)

    def new_cache(self) -> ReplayCache:
        return ReplayCache()

    def forward(self, cache: ReplayCache, tokens) -> np.ndarray:
        tokens = [int(t) for t in tokens]
        if not tokens:
            raise ValueError("forward needs at least one token")
        _check_ids(tokens, self.vocab_size)
        if cache.prompt_len is None:
            cache.tokens.extend(tokens)
            cache.prompt_len = cache.length
            return np.repeat(self._logits[[0]], len(tokens), axis=0)
        rows = []
        for t in tokens:
            cache.tokens.append(t)
            position = cache.length - cache.prompt_len
            if position >= len(self.script):
                cache.truncate(cache.length - 1)
                raise ScriptExhaustedError(
                    f"replay script has {len(self.script)} positions, queried position {position}")
            rows.append(self._logits[position])
        return np.stack(rows)

    def prefill(self, tokens):
        tokens = list(tokens)
        if not tokens:
            raise ValueError("prefill needs at least one token")
        cache = self.new_cache()
        return self.forward(cache, tokens)[-1], cache

    def decode_step(self, cache: ReplayCache, token: int) -> np.ndarray:
        return self.forward(cache, [token])[0]


def replay_model(script) -> ReplayModel:
    return ReplayModel(script)


__all__ = [
    "LanguageModel", "TokenHistory", "NGramModel", "fit_ngram", "perplexity",
    "ReplayModel", "ReplayCache", "replay_model", "ScriptExhaustedError",
    "TinyTransformer", "softmax",
]
