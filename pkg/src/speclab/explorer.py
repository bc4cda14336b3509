"""Draft-architecture design space at a fixed parameter budget.

Parameter counting follows the OPT layout used by :mod:`speclab.model`::

    embeddings   V*e + P*d  (+ 2*e*d in/out projections when e != d)
    per layer    attention 4*d*d + 4*d
                 FFN       2*d*f + f + d      (gated: 3*d*f, no FFN biases)
                 norms     2 * 2*d
    final norm   2*d
    LM head      tied to the token embedding (else + V*e)

with ``e`` the token-embedding width (``d`` unless ``embed_proj_dim`` is set).
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .model import ModelConfig
from .perfmodel import LatencyModel, throughput

PARAM_FORMULA = (
    "V*e + P*d + [e!=d]*2*e*d + l*(4*d^2 + 4*d + FFN + 4*d) + 2*d + [untied]*V*e; "
    "FFN = 2*d*f + f + d (gated: 3*d*f)"
)


def count_params(config, embed_proj_dim: int | None = None, gated_ffn: bool = False,
                 tied_embeddings: bool = True) -> int:
    d, f, l = config.model_dim, config.ffn_dim, config.num_layers
    e = embed_proj_dim or d
    total = config.vocab_size * e + config.max_positions * d
    if e != d:
        total += 2 * e * d
    ffn = 3 * d * f if gated_ffn else 2 * d * f + f + d
    total += l * (4 * d * d + 4 * d + ffn + 4 * d)
    total += 2 * d
    if not tied_embeddings:
        total += config.vocab_size * e
    return total


def kv_bytes_per_token(config, bytes_per_element: int = 2) -> int:
    """Key + value bytes cached per token across all layers."""
    return 2 * config.num_layers * config.model_dim * bytes_per_element


@dataclass(frozen=True)
class ParamBudgetSpec:
    budget: int
    tolerance: float = 0.05
    depths: tuple[int, ...] = tuple(range(1, 25))
    heads: tuple[int, ...] = tuple(range(4, 65, 2))
    head_dim: int = 64
    ffn_dims: tuple[int, ...] | None = None
    ffn_ratios: tuple[float, ...] = (4.0,)
    vocab_size: int = 50272
    max_positions: int = 2050
    embed_proj_dim: int | None = None
    gated_ffn: bool = False

    def __post_init__(self):
        # tuples keep the budget spec hashable and JSON round-trips stable
        for name in ("depths", "heads", "ffn_dims", "ffn_ratios"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(value))
        if not self.budget > 0:
            raise ValueError("budget must be positive")
        if not 0.0 <= self.tolerance <= 0.5:
            raise ValueError(f"tolerance must be in [0, 0.5], got {self.tolerance}")
        if not self.depths or min(self.depths) < 1:
            raise ValueError("depths must be a non-empty set of positive integers")
        if not self.heads or min(self.heads) < 1:
            raise ValueError("heads must be a non-empty set of positive integers")
        if self.head_dim < 1:
            raise ValueError("head_dim must be positive")
        if self.ffn_dims is not None and (not self.ffn_dims or min(self.ffn_dims) < 1):
            raise ValueError("ffn_dims must be non-empty and positive")
        if self.ffn_dims is None and (not self.ffn_ratios or min(self.ffn_ratios) <= 0):
            raise ValueError("ffn_ratios must be non-empty and positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ParamBudgetSpec":
        data = dict(data)
        for key in ("depths", "heads"):
            value = data.get(key)
            if isinstance(value, dict):  # {"min": a, "max": b}
                data[key] = tuple(range(value["min"], value["max"] + 1, value.get("step", 1)))
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ParamBudgetSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ConfigReport:
    config: ModelConfig
    params: int
    kv_bytes_per_token: int
    pred_latency: float | None = None  # seconds per decode step
    tar: float | None = None
    pred_throughput: float | None = None

    def to_row(self) -> dict:
        c = self.config
        return {
            "l": c.num_layers, "h": c.num_heads, "d_model": c.model_dim, "d_inter": c.ffn_dim,
            "params": self.params, "kv_bytes_per_token": self.kv_bytes_per_token,
            "pred_latency_ms": None if self.pred_latency is None else self.pred_latency * 1e3,
            "pred_tput": self.pred_throughput,
        }


REPORT_COLUMNS = ("l", "h", "d_model", "d_inter", "params", "kv_bytes_per_token",
                  "pred_latency_ms", "pred_tput")


def _ffn_candidates(spec: ParamBudgetSpec, model_dim: int) -> list[int]:
    if spec.ffn_dims is not None:
        return sorted(set(spec.ffn_dims))
    return sorted({max(1, round(r * model_dim)) for r in spec.ffn_ratios})


def enumerate_configs(spec: ParamBudgetSpec, latency_model: LatencyModel | None = None,
                      tar_by_depth: Mapping[int, float] | Callable[[int], float] | None = None,
                      t_target: float | None = None, lookahead: int = 8,
                      bytes_per_element: int = 2) -> list[ConfigReport]:
    """Every lattice point whose parameter count is within tolerance of the budget.

    With a latency model, a TAR estimate per depth and a verification latency,
    each point also gets a predicted speculative throughput (drafting
    ``lookahead`` tokens per iteration). Sorted by predicted throughput
    descending, then fewer layers, then smaller ``model_dim``. An empty list
    means nothing in the lattice fits the budget.
    """
    if tar_by_depth is not None and not callable(tar_by_depth):
        table = dict(tar_by_depth)
        tar_by_depth = table.__getitem__
    lo = spec.budget * (1.0 - spec.tolerance)
    hi = spec.budget * (1.0 + spec.tolerance)
    reports = []
    for l in sorted(set(spec.depths)):
        for h in sorted(set(spec.heads)):
            d = h * spec.head_dim
            for f in _ffn_candidates(spec, d):
                cfg = ModelConfig(l, h, d, f, spec.vocab_size, spec.max_positions)
                n = count_params(cfg, spec.embed_proj_dim, spec.gated_ffn)
                if not lo <= n <= hi:
                    continue
                latency = tar = tput = None
                if latency_model is not None:
                    latency = latency_model.predict(cfg)
                    if tar_by_depth is not None and t_target is not None:
                        tar = float(tar_by_depth(l))
                        tput = throughput(tar, t_target, lookahead * latency)
                reports.append(ConfigReport(cfg, n, kv_bytes_per_token(cfg, bytes_per_element),
                                            latency, tar, tput))
    reports.sort(key=lambda r: (-(r.pred_throughput or 0.0), r.config.num_layers, r.config.model_dim))
    return reports


@dataclass(frozen=True)
class CompareReport:
    label_a: str
    label_b: str
    latency_a: float  # seconds to draft one iteration
    latency_b: float
    throughput_a: float
    throughput_b: float
    winner: str  # label_a, label_b or "tie"
    throughput_gain_pct: float  # winner over loser
    tar_delta_pct: float  # TAR of a relative to b
    latency_delta_pct: float  # latency of a relative to b

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def compare_wide_vs_deep(config_a, config_b, tar_a: float, tar_b: float, t_target: float,
                         lookahead: int = 8, latency_a: float | None = None,
                         latency_b: float | None = None, label_a: str = "a", label_b: str = "b",
                         repetitions: int = 30) -> CompareReport:
    """Predicted speculative throughput of two drafts sharing one target.

    Draft latencies (seconds for ``lookahead`` decode steps) are measured on
    the tiny transformer when not supplied.
    """
    if latency_a is None or latency_b is None:
        from .bench import decode_step_latency
        from .model import init_model

        if latency_a is None:
            latency_a = lookahead * decode_step_latency(init_model(config_a), repetitions=repetitions).median
        if latency_b is None:
            latency_b = lookahead * decode_step_latency(init_model(config_b), repetitions=repetitions).median
    tput_a = throughput(tar_a, t_target, latency_a)
    tput_b = throughput(tar_b, t_target, latency_b)
    if abs(tput_a - tput_b) <= 1e-12 * max(tput_a, tput_b):
        winner, gain = "tie", 0.0
    elif tput_a > tput_b:
        winner, gain = label_a, 100.0 * (tput_a / tput_b - 1.0)
    else:
        winner, gain = label_b, 100.0 * (tput_b / tput_a - 1.0)
    return CompareReport(label_a, label_b, latency_a, latency_b, tput_a, tput_b, winner, gain,
                         100.0 * (tar_a / tar_b - 1.0), 100.0 * (latency_a / latency_b - 1.0))


def reports_to_rows(reports: Sequence[ConfigReport]) -> list[dict]:
    return [r.to_row() for r in reports]
