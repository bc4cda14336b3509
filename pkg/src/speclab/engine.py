"""Draft-then-verify speculative decoding, plus the autoregressive baseline.

Each iteration the draft proposes up to ``lookahead`` tokens one at a time, then
the target scores all of them in a single multi-token pass. Greedy runs accept
the longest prefix that matches the target's argmax; sampled runs accept each
proposal with probability ``min(1, p(x)/q(x))`` and, on the first rejection,
draw from ``normalize(max(0, p - q))``. Either way one extra target token is
emitted per iteration, so tokens per iteration (TAR) is capped at
``lookahead + 1``.

Randomness: ``rng_seed`` feeds a ``numpy.random.SeedSequence`` that is spawned
into two children. Child 0 drives draft sampling; child 1 drives everything on
the target side (acceptance draws, residual and bonus samples, and baseline
sampling).
"""
from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import ContextOverflowError, softmax


@dataclass(frozen=True)
class SpecRunConfig:
    lookahead: int = 4
    temperature: float | None = None  # None means greedy
    max_new_tokens: int = 64
    eos_token: int | None = None
    rng_seed: int = 0
    warmup_iterations: int = 3

    def __post_init__(self):
        if int(self.lookahead) < 1:
            raise ValueError(f"lookahead must be >= 1, got {self.lookahead}")
        if self.temperature is not None and not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if int(self.max_new_tokens) < 0:
            raise ValueError("max_new_tokens must be >= 0")
        if int(self.warmup_iterations) < 0:
            raise ValueError("warmup_iterations must be >= 0")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise ValueError("rng_seed must fit in 64 unsigned bits")

    @property
    def greedy(self) -> bool:
        return self.temperature is None

    def replace(self, **changes) -> "SpecRunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SpecRunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown SpecRunConfig fields: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SpecRunConfig":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class IterationTrace:
    proposed: int
    accepted: int
    emitted: int
    draft_time: float
    verify_time: float
    wall_time: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class RunStats:
    """Aggregates over a run. Token counts use every iteration; timings skip warm-up."""

    output: list[int]
    traces: list[IterationTrace] = field(default_factory=list)
    warmup_iterations: int = 3

    @property
    def iterations(self) -> int:
        return len(self.traces)

    @property
    def tar(self) -> float:
        if not self.traces:
            return 0.0
        return sum(t.emitted for t in self.traces) / len(self.traces)

    @property
    def mean_accepted(self) -> float:
        if not self.traces:
            return 0.0
        return sum(t.accepted for t in self.traces) / len(self.traces)

    @property
    def timed_traces(self) -> list[IterationTrace]:
        # short runs keep every iteration rather than report nothing
        if len(self.traces) > self.warmup_iterations:
            return self.traces[self.warmup_iterations:]
        return self.traces

    @property
    def timed_tokens(self) -> int:
        return sum(t.emitted for t in self.timed_traces)

    @property
    def timed_tar(self) -> float:
        timed = self.timed_traces
        return self.timed_tokens / len(timed) if timed else 0.0

    @property
    def draft_time(self) -> float:
        return sum(t.draft_time for t in self.timed_traces)

    @property
    def verify_time(self) -> float:
        return sum(t.verify_time for t in self.timed_traces)

    @property
    def wall_time(self) -> float:
        return sum(t.wall_time for t in self.timed_traces)

    @property
    def throughput(self) -> float:
        wall = self.wall_time
        return self.timed_tokens / wall if wall > 0 else 0.0

    def summary(self) -> dict:
        return {
            "tokens": len(self.output),
            "iterations": self.iterations,
            "tar": self.tar,
            "mean_accepted": self.mean_accepted,
            "timed_iterations": len(self.timed_traces),
            "timed_tar": self.timed_tar,
            "throughput": self.throughput,
            "draft_time": self.draft_time,
            "verify_time": self.verify_time,
            "wall_time": self.wall_time,
            "output": list(self.output),
        }


# --------------------------------------------------------------------------- sampling rules


def split_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """(draft stream, target stream) from one seed."""
    draft_ss, target_ss = np.random.SeedSequence(int(seed)).spawn(2)
    return np.random.default_rng(draft_ss), np.random.default_rng(target_ss)


def sample_from(p: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(p)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, len(p) - 1)


def acceptance_probability(p_x: float, q_x: float) -> float:
    if q_x <= 0.0:
        return 1.0 if p_x > 0.0 else 0.0
    return min(1.0, p_x / q_x)


def residual_distribution(p: np.ndarray, q: np.ndarray) -> np.ndarray | None:
    """``max(0, p - q)`` normalized, or ``None`` when it has no mass (p == q)."""
    r = np.maximum(p - q, 0.0)
    z = r.sum()
    if z <= 0.0:
        return None
    return r / z


def verify_greedy(proposals: Sequence[int], target_logits) -> tuple[int, int]:
    """Return (accepted count, target token at the first unmatched position)."""
    k = 0
    for k, x in enumerate(proposals):
        if int(np.argmax(target_logits[k])) != x:
            return k, int(np.argmax(target_logits[k]))
    k = len(proposals)
    return k, int(np.argmax(target_logits[k]))


def verify_sampled(proposals: Sequence[int], q_rows, p_rows, rng: np.random.Generator) -> tuple[int, int]:
    """Stochastic acceptance of ``proposals``; returns (accepted count, next token).

    ``q_rows[i]``/``p_rows[i]`` are the draft/target distributions at proposal
    i; ``p_rows`` has one extra row for the position after the last proposal.
    """
    for i, x in enumerate(proposals):
        p_i, q_i = p_rows[i], q_rows[i]
        if rng.random() < acceptance_probability(p_i[x], q_i[x]):
            continue
        r = residual_distribution(p_i, q_i)
        if r is None:
            continue
        return i, sample_from(r, rng)
    k = len(proposals)
    return k, sample_from(p_rows[k], rng)


def first_token_distribution(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Exact distribution of the first emitted token for one proposal drawn from q.

    Enumerates every (proposal, accept | reject -> residual) branch using the
    same acceptance and residual rules as :func:`verify_sampled`.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    out = np.zeros_like(p)
    r = residual_distribution(p, q)
    for y in range(len(q)):
        if q[y] == 0.0:
            continue
        a = acceptance_probability(p[y], q[y])
        out[y] += q[y] * a
        reject = q[y] * (1.0 - a)
        if reject > 0.0:
            if r is None:
                out[y] += reject
            else:
                out += reject * r
    return out


# --------------------------------------------------------------------------- generation


def _check_context(model, prompt_len: int, max_new_tokens: int) -> None:
    limit = getattr(model, "max_context", None)
    if limit is None:
        return
    needed = prompt_len + max(max_new_tokens - 1, 0)
    if needed > limit:
        raise ContextOverflowError(
            f"prompt ({prompt_len}) plus {max_new_tokens} new tokens needs {needed} positions, "
            f"model allows {limit}")


def _check_prompt(prompt) -> list[int]:
    prompt = [int(t) for t in prompt]
    if not prompt:
        raise ValueError("prompt must contain at least one token")
    return prompt


def generate_autoregressive(target, prompt, config: SpecRunConfig) -> RunStats:
    """Baseline decoding: one target decode step per emitted token."""
    prompt = _check_prompt(prompt)
    _check_context(target, len(prompt), config.max_new_tokens)
    stats = RunStats([], [], config.warmup_iterations)
    if config.max_new_tokens == 0:
        return stats
    _, target_rng = split_streams(config.rng_seed)
    logits, cache = target.prefill(prompt)
    pending = None
    while True:
        t0 = time.perf_counter()
        if pending is not None:
            logits = target.decode_step(cache, pending)
        t1 = time.perf_counter()
        if config.greedy:
            tok = int(np.argmax(logits))
        else:
            tok = sample_from(softmax(logits, config.temperature), target_rng)
        stats.output.append(tok)
        stats.traces.append(IterationTrace(0, 0, 1, 0.0, t1 - t0, time.perf_counter() - t0))
        if tok == config.eos_token or len(stats.output) >= config.max_new_tokens:
            return stats
        pending = tok


def generate_speculative(draft, target, prompt, config: SpecRunConfig) -> RunStats:
    """Speculative decoding of ``target`` with proposals from ``draft``."""
    if draft.vocab_size != target.vocab_size:
        raise ValueError(
            f"vocab mismatch: draft has {draft.vocab_size}, target has {target.vocab_size}")
    prompt = _check_prompt(prompt)
    _check_context(target, len(prompt), config.max_new_tokens)
    _check_context(draft, len(prompt), config.max_new_tokens)
    stats = RunStats([], [], config.warmup_iterations)
    if config.max_new_tokens == 0:
        return stats
    draft_rng, target_rng = split_streams(config.rng_seed)
    greedy, temp, eos = config.greedy, config.temperature, config.eos_token

    t_carry, t_cache = target.prefill(prompt)
    d_carry, d_cache = draft.prefill(prompt)
    seq = list(prompt)
    # caches hold seq minus the pending tokens; carry holds logits when nothing is pending
    t_pending: list[int] = []
    d_pending: list[int] = []

    while True:
        base = len(seq)
        k_max = min(config.lookahead, config.max_new_tokens - len(stats.output) - 1)
        t0 = time.perf_counter()

        proposals: list[int] = []
        q_rows: list[np.ndarray] = []
        if k_max > 0:
            logits = draft.forward(d_cache, d_pending)[-1] if d_pending else d_carry
            for i in range(k_max):
                if i:
                    logits = draft.decode_step(d_cache, proposals[-1])
                if greedy:
                    tok = int(np.argmax(logits))
                else:
                    q = softmax(logits, temp)
                    tok = sample_from(q, draft_rng)
                    q_rows.append(q)
                proposals.append(tok)
                if tok == eos:
                    break
        t1 = time.perf_counter()

        kp = len(proposals)
        if t_pending:
            rows = target.forward(t_cache, t_pending + proposals)[len(t_pending) - 1:]
        elif proposals:
            rows = np.concatenate([t_carry[None, :], target.forward(t_cache, proposals)])
        else:
            rows = t_carry[None, :]
        t2 = time.perf_counter()

        if greedy:
            k, nxt = verify_greedy(proposals, rows)
        else:
            k, nxt = verify_sampled(proposals, q_rows, softmax(rows, temp), target_rng)

        new_tokens = proposals[:k] + [nxt]
        accepted, emitted = k, k + 1
        done = False
        if eos is not None and eos in new_tokens:
            cut = new_tokens.index(eos) + 1
            new_tokens = new_tokens[:cut]
            if cut <= k:
                accepted = emitted = cut
            done = True
        stats.output.extend(new_tokens)
        if len(stats.output) >= config.max_new_tokens:
            done = True

        if not done:
            t_cache.truncate(base + k)
            if kp:
                d_len = base + min(k, kp - 1)
                d_cache.truncate(d_len)
            else:
                d_len = base - len(d_pending)
            seq.extend(new_tokens)
            t_pending = [nxt]
            d_pending = seq[d_len:]
            t_carry = d_carry = None
        stats.traces.append(
            IterationTrace(kp, accepted, emitted, t1 - t0, t2 - t1, time.perf_counter() - t0))
        if done:
            return stats


# --------------------------------------------------------------------------- sweeps and reports


@dataclass(frozen=True)
class SweepRow:
    lookahead: int
    tar: float
    throughput: float
    iterations: int
    tokens: int


@dataclass
class SweepResult:
    rows: list[SweepRow]
    best_lookahead: int

    def to_records(self) -> list[dict]:
        return [dict(dataclasses.asdict(r), best=r.lookahead == self.best_lookahead) for r in self.rows]


def run_prompts(draft, target, prompts, config: SpecRunConfig) -> list[RunStats]:
    return [generate_speculative(draft, target, p, config) for p in prompts]


def aggregate(runs: Sequence[RunStats]) -> tuple[float, float, int, int]:
    """(TAR, throughput, iterations, tokens) pooled over runs."""
    iterations = sum(r.iterations for r in runs)
    tokens = sum(len(r.output) for r in runs)
    tar = sum(sum(t.emitted for t in r.traces) for r in runs) / iterations if iterations else 0.0
    wall = sum(r.wall_time for r in runs)
    tput = sum(r.timed_tokens for r in runs) / wall if wall > 0 else 0.0
    return tar, tput, iterations, tokens


def sweep_lookahead(draft, target, prompts, lookaheads, config: SpecRunConfig) -> SweepResult:
    """Run every prompt at each lookahead; the best lookahead maximizes throughput.

    Ties go to the smaller lookahead.
    """
    lookaheads = list(lookaheads)
    if not lookaheads:
        raise ValueError("need at least one lookahead value")
    rows = []
    for gamma in lookaheads:
        runs = run_prompts(draft, target, prompts, config.replace(lookahead=int(gamma)))
        tar, tput, iters, toks = aggregate(runs)
        rows.append(SweepRow(int(gamma), tar, tput, iters, toks))
    best = max(rows, key=lambda r: (r.throughput, -r.lookahead))
    return SweepResult(rows, best.lookahead)


def measure_breakdown(traces: Sequence[IterationTrace]) -> tuple[float, float]:
    """Fractions of (draft + verify) time spent drafting and verifying."""
    if not traces:
        raise ValueError("no traces to break down")
    draft = sum(t.draft_time for t in traces)
    verify = sum(t.verify_time for t in traces)
    total = draft + verify
    if total <= 0:
        raise ValueError("traces record no phase time")
    return draft / total, verify / total


def write_traces_jsonl(traces: Sequence[IterationTrace], path) -> None:
    lines = [json.dumps(t.to_dict(), sort_keys=True) for t in traces]
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_traces_jsonl(path) -> list[IterationTrace]:
    traces = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            traces.append(IterationTrace(**json.loads(line)))
    return traces
