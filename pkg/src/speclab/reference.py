"""Published model shapes and measurements used by the demos and tests.

Latencies are in milliseconds, as published.
"""
from .model import ModelConfig

OPT_VOCAB = 50272
OPT_POSITIONS = 2050  # 2048 usable + the 2-slot offset OPT reserves
# OPT-350M embeds tokens in 512 dims and projects in/out of the hidden size
OPT_350M_EMBED_PROJ_DIM = 512

OPT_125M = ModelConfig(num_layers=12, num_heads=12, model_dim=768, ffn_dim=3072,
                       vocab_size=OPT_VOCAB, max_positions=OPT_POSITIONS)

# Depth/width variants held near the OPT-350M parameter budget.
OPT_350M_VARIANTS = [
    ModelConfig(l, h, d, f, OPT_VOCAB, OPT_POSITIONS)
    for l, h, d, f in [
        (24, 16, 1024, 4096),
        (20, 20, 1280, 3448),
        (16, 22, 1408, 4096),
        (12, 28, 1792, 3448),
        (8, 36, 2304, 3448),
        (4, 56, 3584, 3448),
    ]
]

LLAMA_VOCAB = 32000
LLAMA_POSITIONS = 2048

# Structured-pruned LLaMA drafts: name -> (layers, heads, ffn_dim, model_dim).
PRUNED_LLAMA_DRAFTS = {
    name: ModelConfig(l, h, d, f, LLAMA_VOCAB, LLAMA_POSITIONS)
    for name, (l, h, f, d) in {
        "NoFT-1.3B": (24, 16, 5504, 2048),
        "NoFT-Wide-1.3B": (12, 20, 9280, 2560),
        "NoFT-Wide-796M": (5, 32, 11008, 4096),
        "NoFT-Wide-543M": (3, 32, 11008, 4096),
        "NoFT-Wide-290M": (1, 32, 11008, 4096),
    }.items()
}

# Deep vs wide 1.3B drafts: TAR, latency to draft 8 tokens (ms), throughput (tokens/s).
DEEP_VS_WIDE = {
    "NoFT-1.3B": {"tar": 3.81, "latency_ms": 105.1, "throughput": 23.10},
    "NoFT-Wide-1.3B": {"tar": 3.70, "latency_ms": 53.5, "throughput": 32.59},
}

# Draft latency vs latency needed for throughput parity with OPT-125M: (latency, parity, reduction %).
OPT_PARITY = {
    "125M": (43.7, 43.7, 0.0),
    "350M": (79.8, 50.6, 36.6),
    "1.3B": (87.1, 58.7, 32.6),
    "2.7B": (114.3, 49.8, 56.4),
    "6.7B": (139.5, 68.2, 51.1),
}

# Per-step autoregressive latency of OPT drafts (ms).
OPT_DRAFT_STEP_MS = {
    "OPT-125M": 6.23,
    "OPT-350M": 11.74,
    "OPT-1.3B": 12.64,
    "OPT-2.7B": 16.35,
    "OPT-6.7B": 18.56,
}
