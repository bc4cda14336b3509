"""Timing discipline for microbenchmarks: warm-up, repetitions, median and MAD."""
from __future__ import annotations

import gc
import statistics
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None

# Held by every timed measurement so two never overlap inside one process.
timing_lock = threading.RLock()


@contextmanager
def single_threaded():
    if threadpool_limits is None:
        yield
        return
    with threadpool_limits(limits=1):
        yield


@contextmanager
def timed_section():
    """Exclusive timing lock, one BLAS thread and no cyclic GC pauses."""
    with timing_lock, single_threaded():
        was_enabled = gc.isenabled()
        gc.disable()
        try:
            yield
        finally:
            if was_enabled:
                gc.enable()


@dataclass(frozen=True)
class Timing:
    median: float
    mad: float
    samples: list[float] = field(repr=False)

    def to_dict(self) -> dict:
        return {"median": self.median, "mad": self.mad, "repetitions": len(self.samples)}


def summarize(samples) -> Timing:
    samples = list(samples)
    if not samples:
        raise ValueError("no samples")
    med = statistics.median(samples)
    mad = statistics.median(abs(s - med) for s in samples)
    return Timing(med, mad, samples)


def time_callable(fn, repetitions: int = 30, warmup: int = 3, inner: int = 1) -> Timing:
    """Seconds per call of ``fn()``; each sample averages ``inner`` calls."""
    if repetitions < 1 or warmup < 0 or inner < 1:
        raise ValueError("repetitions >= 1, warmup >= 0 and inner >= 1 required")
    samples = []
    with timed_section():
        for _ in range(warmup):
            fn()
        for _ in range(repetitions):
            t0 = time.perf_counter()
            for _ in range(inner):
                fn()
            samples.append((time.perf_counter() - t0) / inner)
    return summarize(samples)


def decode_step_latency(model, context_len: int = 8, repetitions: int = 30, warmup: int = 3,
                        inner: int = 5, token: int = 1) -> Timing:
    """Latency of one decode step at a fixed context length."""
    prompt = [token % model.vocab_size] * context_len
    _, cache = model.prefill(prompt)

    def step():
        model.decode_step(cache, token)
        cache.truncate(context_len)

    return time_callable(step, repetitions, warmup, inner)


def pass_latency(model, num_tokens: int, context_len: int = 8, repetitions: int = 30,
                 warmup: int = 3, inner: int = 3, token: int = 1) -> Timing:
    """Latency of one multi-token (verification-style) pass appended to a context."""
    prompt = [token % model.vocab_size] * context_len
    feed = [token % model.vocab_size] * num_tokens
    _, cache = model.prefill(prompt)

    def run():
        model.forward(cache, feed)
        cache.truncate(context_len)

    return time_callable(run, repetitions, warmup, inner)


def _spin(seconds: float) -> None:
    # busy-wait: sleep() granularity is too coarse for sub-millisecond costs
    end = time.perf_counter() + seconds
    while time.perf_counter() < end:
        pass


class DelayedModel:
    """Wraps a language model and adds fixed compute cost to each call.

    ``decode_delay`` is charged per decode step, ``forward_delay`` per
    multi-token pass. Outputs are untouched, so the wrapper only changes timing.
    """

    def __init__(self, model, decode_delay: float = 0.0, forward_delay: float = 0.0):
        if decode_delay < 0 or forward_delay < 0:
            raise ValueError("delays must be non-negative")
        self.model = model
        self.decode_delay = decode_delay
        self.forward_delay = forward_delay

    @property
    def vocab_size(self) -> int:
        return self.model.vocab_size

    @property
    def max_context(self):
        return self.model.max_context

    def new_cache(self):
        return self.model.new_cache()

    def prefill(self, tokens):
        return self.model.prefill(tokens)

    def forward(self, cache, tokens):
        _spin(self.forward_delay)
        return self.model.forward(cache, tokens)

    def decode_step(self, cache, token):
        _spin(self.decode_delay)
        return self.model.decode_step(cache, token)

    def next_distribution(self, context):
        return self.model.next_distribution(context)
