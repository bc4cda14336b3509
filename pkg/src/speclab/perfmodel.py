"""Analytical throughput model, what-if calculators and the depth latency fit.

Throughput of speculative decoding with sequential draft and verify phases::

    tput = TAR / (t_target + t_draft)    if TAR > 1
    tput =   1 / (t_target + t_draft)    otherwise

where ``t_draft`` is the time to draft one iteration's tokens and ``t_target``
the time to verify them. The i.i.d.-acceptance speedup model
``(1 - a**(g+1)) / ((1 - a) * (g*c + 1))`` is kept for comparison.

All latencies are in seconds.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np


def _positive(name, value):
    if not (isinstance(value, (int, float, np.floating, np.integer)) and value > 0 and math.isfinite(value)):
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")


@dataclass(frozen=True)
class AnalyticalParams:
    tar: float
    t_target: float
    t_draft: float
    alpha: float | None = None
    lookahead: int | None = None
    c: float | None = None

    def __post_init__(self):
        _positive("tar", self.tar)
        _positive("t_target", self.t_target)
        _positive("t_draft", self.t_draft)
        if self.alpha is not None and not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.lookahead is not None and self.lookahead < 1:
            raise ValueError("lookahead must be >= 1")
        if self.c is not None:
            _positive("c", self.c)


def predict_throughput(params: AnalyticalParams) -> float:
    """Tokens per second from TAR and per-iteration draft/verify latencies."""
    total = params.t_target + params.t_draft
    return (params.tar if params.tar > 1 else 1.0) / total


def throughput(tar: float, t_target: float, t_draft: float) -> float:
    return predict_throughput(AnalyticalParams(tar, t_target, t_draft))


def improvement_factor(alpha: float, lookahead: int) -> float:
    """Expected tokens per iteration under i.i.d. acceptance, ``sum_{k<=g} a**k``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if lookahead < 1:
        raise ValueError("lookahead must be >= 1")
    if alpha == 1.0:
        return float(lookahead + 1)
    return (1.0 - alpha ** (lookahead + 1)) / (1.0 - alpha)


def leviathan_speedup(alpha: float, lookahead: int, c: float) -> float:
    """Walltime improvement over autoregressive decoding; ``c`` is draft/target cost ratio."""
    if not c >= 0 or not math.isfinite(c):
        raise ValueError(f"c must be a non-negative finite number, got {c!r}")
    return improvement_factor(alpha, lookahead) / (lookahead * c + 1.0)


def tar_cap(lookahead: int) -> int:
    """Largest TAR one iteration can deliver: every proposal plus the extra target token."""
    return lookahead + 1


def reduction_pct(latency: float, parity: float) -> float:
    return 100.0 * (1.0 - parity / latency)


class ParityResult(NamedTuple):
    parity_latency: float
    reduction_pct: float
    reachable: bool


def parity_latency(tar: float, t_draft: float, baseline_throughput: float, t_target: float) -> ParityResult:
    """Draft latency at which a candidate matches ``baseline_throughput``.

    When even a zero-latency draft falls short, parity is clamped to 0 and
    ``reachable`` is False.
    """
    for name, v in (("tar", tar), ("t_draft", t_draft),
                    ("baseline_throughput", baseline_throughput), ("t_target", t_target)):
        _positive(name, v)
    parity = max(tar, 1.0) / baseline_throughput - t_target
    reachable = parity >= 0.0
    parity = max(parity, 0.0)
    return ParityResult(parity, reduction_pct(t_draft, parity), reachable)


class ExtraTAR(NamedTuple):
    extra: float
    needed: float
    feasible: bool


def required_tar(target_throughput: float, t_target: float, t_draft: float) -> float:
    """TAR needed to reach ``target_throughput`` at the given latencies."""
    for name, v in (("target_throughput", target_throughput), ("t_target", t_target),
                    ("t_draft", t_draft)):
        _positive(name, v)
    return target_throughput * (t_target + t_draft)


def extra_tar(tar: float, t_draft: float, baseline_throughput: float, t_target: float,
              lookahead: int) -> ExtraTAR:
    """Additional TAR a candidate needs to match ``baseline_throughput``.

    Infeasible when the needed TAR exceeds ``lookahead + 1``.
    """
    _positive("tar", tar)
    if lookahead < 1:
        raise ValueError("lookahead must be >= 1")
    needed = required_tar(baseline_throughput, t_target, t_draft)
    return ExtraTAR(needed - tar, needed, needed <= tar_cap(lookahead))


# --------------------------------------------------------------------------- latency fit


def _layer_flops(model_dim: int, ffn_dim: int) -> float:
    return 4.0 * model_dim * model_dim + 2.0 * model_dim * ffn_dim


@dataclass
class LatencyModel:
    """Decode-step latency ``slope * layers + intercept``.

    ``intercepts`` optionally holds a per-width floor keyed by ``model_dim``.
    Above ``saturation_flops`` per-layer FLOPs, the per-layer cost grows in
    proportion to FLOPs; below it, width does not change the slope.
    """

    slope: float
    intercept: float
    intercepts: dict[int, float] = field(default_factory=dict)
    saturation_flops: float | None = None
    r_squared: float = float("nan")
    residuals: list[float] = field(default_factory=list)

    def layer_cost(self, model_dim: int, ffn_dim: int) -> float:
        if self.saturation_flops is None:
            return self.slope
        return self.slope * max(1.0, _layer_flops(model_dim, ffn_dim) / self.saturation_flops)

    def predict(self, config) -> float:
        floor = self.intercepts.get(config.model_dim, self.intercept)
        return self.layer_cost(config.model_dim, config.ffn_dim) * config.num_layers + floor

    def to_dict(self) -> dict:
        d = asdict(self)
        d["intercepts"] = {str(k): v for k, v in self.intercepts.items()}
        return d


def _r_squared(y, fitted):
    y = np.asarray(y, dtype=np.float64)
    ss_res = float(((y - fitted) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return 1.0 - ss_res / ss_tot


def fit_latency_model(samples: Sequence[tuple], per_width_intercept: bool = False,
                      saturation_flops: float | None = None) -> LatencyModel:
    """Least-squares fit of decode-step seconds against layer count.

    ``samples`` is a sequence of ``(config, seconds)``. Samples spanning several
    widths need ``per_width_intercept=True``: the slope is shared and each
    width gets its own intercept.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("no samples")
    depths = np.array([c.num_layers for c, _ in samples], dtype=np.float64)
    y = np.array([s for _, s in samples], dtype=np.float64)
    if len(set(depths.tolist())) < 3:
        raise ValueError("need at least 3 distinct depths to fit a latency model")
    widths = sorted({c.model_dim for c, _ in samples})
    if len(widths) > 1 and not per_width_intercept:
        raise ValueError("samples span several widths; pass per_width_intercept=True")

    if per_width_intercept and len(widths) > 1:
        X = np.zeros((len(samples), 1 + len(widths)))
        X[:, 0] = depths
        for i, (c, _) in enumerate(samples):
            X[i, 1 + widths.index(c.model_dim)] = 1.0
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        fitted = X @ coef
        slope = float(coef[0])
        intercepts = {w: float(b) for w, b in zip(widths, coef[1:])}
        intercept = float(np.mean(coef[1:]))
    else:
        X = np.column_stack([depths, np.ones_like(depths)])
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        fitted = X @ coef
        slope, intercept = float(coef[0]), float(coef[1])
        intercepts = {widths[0]: intercept} if per_width_intercept else {}
    return LatencyModel(slope, intercept, intercepts, saturation_flops,
                        _r_squared(y, fitted), (y - fitted).tolist())


# --------------------------------------------------------------------------- tables


MEASUREMENT_COLUMNS = ("model_id", "tar", "t_draft_ms", "t_target_ms")


@dataclass(frozen=True)
class Measurement:
    model_id: str
    tar: float
    t_draft: float
    t_target: float

    def __post_init__(self):
        _positive("tar", self.tar)
        _positive("t_draft", self.t_draft)
        _positive("t_target", self.t_target)


def parse_measurements(text: str) -> list[Measurement]:
    """Parse ``model_id,tar,t_draft_ms,t_target_ms`` rows; latencies become seconds."""
    reader = csv.DictReader(io.StringIO(text))
    missing = set(MEASUREMENT_COLUMNS) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"measurement CSV is missing columns: {sorted(missing)}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        try:
            rows.append(Measurement(row["model_id"], float(row["tar"]),
                                    float(row["t_draft_ms"]) / 1e3, float(row["t_target_ms"]) / 1e3))
        except (TypeError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return rows


def read_measurements_csv(path) -> list[Measurement]:
    return parse_measurements(Path(path).read_text())


def predict_table(measurements: Sequence[Measurement]) -> list[dict]:
    return [
        {"model_id": m.model_id, "tar": m.tar, "t_draft_ms": m.t_draft * 1e3,
         "t_target_ms": m.t_target * 1e3,
         "throughput": throughput(m.tar, m.t_target, m.t_draft)}
        for m in measurements
    ]


def parity_table(measurements: Sequence[Measurement], baseline_id: str) -> list[dict]:
    base = _find(measurements, baseline_id)
    base_tput = throughput(base.tar, base.t_target, base.t_draft)
    out = []
    for m in measurements:
        res = parity_latency(m.tar, m.t_draft, base_tput, m.t_target)
        out.append({"model": m.model_id, "latency": m.t_draft * 1e3,
                    "parity_latency": res.parity_latency * 1e3,
                    "reduction_pct": res.reduction_pct, "reachable": res.reachable})
    return out


def extra_tar_table(measurements: Sequence[Measurement], baseline_id: str, lookahead: int) -> list[dict]:
    base = _find(measurements, baseline_id)
    base_tput = throughput(base.tar, base.t_target, base.t_draft)
    out = []
    for m in measurements:
        res = extra_tar(m.tar, m.t_draft, base_tput, m.t_target, lookahead)
        out.append({"model": m.model_id, "tar": m.tar, "needed_tar": res.needed,
                    "extra_tar": res.extra, "feasible": res.feasible})
    return out


def required_tar_table(measurements: Sequence[Measurement], throughputs: Sequence[float],
                       lookahead: int | None = None) -> list[dict]:
    out = []
    for m in measurements:
        for tput in throughputs:
            need = required_tar(tput, m.t_target, m.t_draft)
            row = {"model": m.model_id, "throughput": float(tput), "required_tar": need}
            if lookahead is not None:
                row["reachable"] = need <= tar_cap(lookahead)
            out.append(row)
    return out


def _find(measurements, model_id):
    for m in measurements:
        if m.model_id == model_id:
            return m
    raise ValueError(f"baseline {model_id!r} not among measurements")


def rows_to_csv(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def rows_to_json(rows: Sequence[dict]) -> str:
    return json.dumps(list(rows), indent=2, sort_keys=False)
