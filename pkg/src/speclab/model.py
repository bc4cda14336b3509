"""Minimal decoder-only transformer with a KV cache.

OPT-style layout: learned absolute positions, pre-LayerNorm blocks, biases on
every projection, ReLU feed-forward, final LayerNorm and an LM head tied to the
token embedding. Weights, cache and inter-layer activations are float32; each
matmul accumulates in float64 and rounds back, so a row of a multi-token pass
matches the same row computed one token at a time.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np


class ContextOverflowError(ValueError):
    """Raised when a pass would write past ``max_positions``."""


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int
    num_heads: int
    model_dim: int
    ffn_dim: int
    vocab_size: int
    max_positions: int = 512
    weight_seed: int = 0

    def __post_init__(self):
        for name in ("num_layers", "num_heads", "model_dim", "ffn_dim", "vocab_size", "max_positions"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if self.max_positions < 2:
            raise ValueError("max_positions must be >= 2")
        if self.model_dim % self.num_heads:
            raise ValueError(
                f"model_dim={self.model_dim} is not divisible by num_heads={self.num_heads}")
        if not 0 <= int(self.weight_seed) < 2**64:
            raise ValueError("weight_seed must fit in 64 unsigned bits")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - fields
        if unknown:
            raise ValueError(f"unknown ModelConfig fields: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls.from_dict(json.loads(text))


class KVCache:
    """Per-layer keys/values, shape ``[layers, heads, max_positions, head_dim]``.

    Single owner; not safe for concurrent use.
    """

    def __init__(self, config: ModelConfig):
        shape = (config.num_layers, config.num_heads, config.max_positions, config.head_dim)
        self.keys = np.zeros(shape, dtype=np.float32)
        self.values = np.zeros(shape, dtype=np.float32)
        self.length = 0

    @property
    def capacity(self) -> int:
        return self.keys.shape[2]

    def truncate(self, length: int) -> None:
        """Drop every position at or after ``length``."""
        if not 0 <= length <= self.length:
            raise ValueError(f"cannot truncate cache of length {self.length} to {length}")
        self.length = length


def _layer_norm(x, gain, bias, eps=1e-5):
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * gain + bias


def _f32(x):
    return x.astype(np.float32).astype(np.float64)


class TinyTransformer:
    """Decoder-only transformer. Immutable after construction."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.params = _init_params(config)
        for arr in self.params.values():
            arr.flags.writeable = False
        # float64 copies of the float32 weights; exact, used only for accumulation
        self._w = {name: arr.astype(np.float64) for name, arr in self.params.items()}

    @property
    def vocab_size(self) -> int:
        return self.config.vocab_size

    @property
    def max_context(self) -> int:
        return self.config.max_positions

    def num_parameters(self) -> int:
        return int(sum(arr.size for arr in self.params.values()))

    def new_cache(self) -> KVCache:
        return KVCache(self.config)

    def forward(self, cache: KVCache, tokens) -> np.ndarray:
        """Append ``tokens`` to ``cache`` in one pass; return float32 logits ``[n, V]``."""
        cfg = self.config
        ids = np.asarray(tokens, dtype=np.int64).reshape(-1)
        n = ids.size
        if n == 0:
            raise ValueError("forward needs at least one token")
        if ids.min() < 0 or ids.max() >= cfg.vocab_size:
            raise ValueError(f"token id out of range [0, {cfg.vocab_size})")
        start = cache.length
        end = start + n
        if end > cfg.max_positions:
            raise ContextOverflowError(
                f"{end} positions exceed max_positions={cfg.max_positions}")

        w = self._w
        H, hd = cfg.num_heads, cfg.head_dim
        x = _f32(w["tok_emb"][ids] + w["pos_emb"][start:end])
        # row i may attend to cache positions [0, start + i]
        mask = np.arange(end)[None, :] > (start + np.arange(n))[:, None]
        for li in range(cfg.num_layers):
            p = f"layers.{li}."
            h = _layer_norm(x, w[p + "ln1.g"], w[p + "ln1.b"])
            q = (h @ w[p + "q.w"] + w[p + "q.b"]).reshape(n, H, hd).transpose(1, 0, 2)
            k = (h @ w[p + "k.w"] + w[p + "k.b"]).reshape(n, H, hd).transpose(1, 0, 2)
            v = (h @ w[p + "v.w"] + w[p + "v.b"]).reshape(n, H, hd).transpose(1, 0, 2)
            cache.keys[li, :, start:end] = k
            cache.values[li, :, start:end] = v
            keys = cache.keys[li, :, :end].astype(np.float64)
            vals = cache.values[li, :, :end].astype(np.float64)
            scores = q @ keys.transpose(0, 2, 1) / np.sqrt(hd)
            scores[:, mask] = -np.inf
            scores -= scores.max(axis=-1, keepdims=True)
            probs = np.exp(scores)
            probs /= probs.sum(axis=-1, keepdims=True)
            attn = (probs @ vals).transpose(1, 0, 2).reshape(n, cfg.model_dim)
            x = _f32(x + attn @ w[p + "o.w"] + w[p + "o.b"])
            h = _layer_norm(x, w[p + "ln2.g"], w[p + "ln2.b"])
            h = np.maximum(h @ w[p + "fc1.w"] + w[p + "fc1.b"], 0.0)
            x = _f32(x + h @ w[p + "fc2.w"] + w[p + "fc2.b"])
        cache.length = end
        h = _layer_norm(x, w["ln_f.g"], w["ln_f.b"])
        return (h @ w["tok_emb"].T).astype(np.float32)

    def prefill(self, tokens):
        """Process a prompt into a fresh cache; return (last-position logits, cache)."""
        tokens = list(tokens)
        if not tokens:
            raise ValueError("prefill needs at least one token")
        if len(tokens) > self.config.max_positions:
            raise ContextOverflowError(
                f"prompt of length {len(tokens)} exceeds max_positions={self.config.max_positions}")
        cache = self.new_cache()
        logits = self.forward(cache, tokens)
        return logits[-1], cache

    def decode_step(self, cache: KVCache, token: int) -> np.ndarray:
        if cache.length >= self.config.max_positions:
            raise ContextOverflowError("KV cache is full")
        return self.forward(cache, [token])[0]

    def next_distribution(self, context) -> np.ndarray:
        logits, _ = self.prefill(context)
        return softmax(logits)


Model = TinyTransformer


def softmax(logits, temperature: float = 1.0) -> np.ndarray:
    """Float64 softmax along the last axis."""
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _init_params(cfg: ModelConfig) -> dict[str, np.ndarray]:
    # Draw order is part of the contract: same config -> bit-identical weights.
    rng = np.random.default_rng(np.uint64(cfg.weight_seed))
    scale = 1.0 / np.sqrt(cfg.model_dim)
    d, f = cfg.model_dim, cfg.ffn_dim

    def normal(*shape):
        return (rng.standard_normal(shape) * scale).astype(np.float32)

    params = {
        "tok_emb": normal(cfg.vocab_size, d),
        "pos_emb": normal(cfg.max_positions, d),
    }
    for li in range(cfg.num_layers):
        p = f"layers.{li}."
        params[p + "ln1.g"] = np.ones(d, np.float32)
        params[p + "ln1.b"] = np.zeros(d, np.float32)
        for proj in ("q", "k", "v", "o"):
            params[p + proj + ".w"] = normal(d, d)
            params[p + proj + ".b"] = np.zeros(d, np.float32)
        params[p + "ln2.g"] = np.ones(d, np.float32)
        params[p + "ln2.b"] = np.zeros(d, np.float32)
        params[p + "fc1.w"] = normal(d, f)
        params[p + "fc1.b"] = np.zeros(f, np.float32)
        params[p + "fc2.w"] = normal(f, d)
        params[p + "fc2.b"] = np.zeros(d, np.float32)
    params["ln_f.g"] = np.ones(d, np.float32)
    params["ln_f.b"] = np.zeros(d, np.float32)
    return params


def init_model(config: ModelConfig) -> TinyTransformer:
    return TinyTransformer(config)


def prefill(model: TinyTransformer, tokens):
    return model.prefill(tokens)


def decode_step(model: TinyTransformer, cache: KVCache, token: int) -> np.ndarray:
    return model.decode_step(cache, token)
