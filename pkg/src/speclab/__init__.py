"""Speculative decoding on a desk: draft/verify engine, throughput model, design space."""

__version__ = "0.1.0"

from .engine import (IterationTrace, RunStats, SpecRunConfig, generate_autoregressive,
                     generate_speculative, measure_breakdown, sweep_lookahead)
from .explorer import (ConfigReport, ParamBudgetSpec, compare_wide_vs_deep, count_params,
                       enumerate_configs, kv_bytes_per_token)
from .lm import LanguageModel, NGramModel, ReplayModel, fit_ngram, perplexity
from .model import ContextOverflowError, KVCache, ModelConfig, TinyTransformer, init_model
from .perfmodel import (AnalyticalParams, LatencyModel, extra_tar, fit_latency_model,
                        improvement_factor, leviathan_speedup, parity_latency, predict_throughput,
                        required_tar)

__all__ = [
    "AnalyticalParams", "ConfigReport", "ContextOverflowError", "IterationTrace", "KVCache",
    "LanguageModel", "LatencyModel", "ModelConfig", "NGramModel", "ParamBudgetSpec", "ReplayModel",
    "RunStats", "SpecRunConfig", "TinyTransformer", "compare_wide_vs_deep", "count_params",
    "enumerate_configs", "extra_tar", "fit_latency_model", "fit_ngram", "generate_autoregressive",
    "generate_speculative", "improvement_factor", "init_model", "kv_bytes_per_token",
    "leviathan_speedup", "measure_breakdown", "parity_latency", "perplexity", "predict_throughput",
    "required_tar", "sweep_lookahead",
]
