"""Experiment orchestration: spec validation, pipelines, atomic result files, plot data.

An experiment is a JSON document::

    {"kind": "predict", "params": {...}, "dataset": null, "out_dir": "results",
     "repetitions": 1, "warmup": 3, "seed": 0}

Each run writes ``<experiment_id>.csv`` (the rows) and ``<experiment_id>.json``
(rows, summary, environment, config hash) into ``out_dir``. Both files appear
together or not at all.

Model references inside ``params``::

    {"type": "transformer", "config": {<ModelConfig fields>}}
    {"type": "ngram", "order": 3, "discount": 0.5}   # fit on the dataset
    {"type": "ngram", "path": "model.json"}
    {"type": "replay", "script": [[p0...], [p1...], ...]}
"""
from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import hashlib
import io
import json
import os
import platform
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .bench import decode_step_latency, timed_section
from .corpus import VOCAB_SIZE, ingest_corpus, synthetic_corpus
from .engine import (SpecRunConfig, generate_autoregressive, generate_speculative,
                     measure_breakdown, sweep_lookahead)
from .explorer import (PARAM_FORMULA, REPORT_COLUMNS, ParamBudgetSpec, compare_wide_vs_deep,
                       enumerate_configs)
from .lm import NGramModel, ReplayModel, fit_ngram
from .model import ModelConfig, init_model
from .perfmodel import (LatencyModel, Measurement, extra_tar_table, fit_latency_model,
                        parity_table, predict_table, read_measurements_csv, required_tar_table)

KINDS = ("bench-latency", "run-specdec", "sweep-lookahead", "predict", "parity", "extra-tar",
         "required-tar", "explore", "compare")
TIMED_KINDS = frozenset({"bench-latency", "run-specdec", "sweep-lookahead", "compare"})
FORMATS = ("csv", "json")


class SpecError(ValueError):
    """The experiment spec or its inputs are invalid; nothing was run."""


# --------------------------------------------------------------------------- spec and record


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    params: dict = field(default_factory=dict)
    dataset: str | None = None
    out_dir: str = "results"
    repetitions: int = 1
    warmup: int = 3
    seed: int = 0
    format: str = "csv"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown experiment kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if not isinstance(self.params, dict):
            raise SpecError("params must be a JSON object")
        if int(self.repetitions) < 1:
            raise SpecError("repetitions must be >= 1")
        if int(self.warmup) < 0:
            raise SpecError("warmup must be >= 0")
        if not 0 <= int(self.seed) < 2**64:
            raise SpecError("seed must fit in 64 unsigned bits")
        if self.format not in FORMATS:
            raise SpecError(f"format must be one of {FORMATS}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise SpecError(f"unknown experiment fields: {sorted(unknown)}")
        if "kind" not in data:
            raise SpecError("experiment spec needs a 'kind'")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentSpec":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SpecError(f"spec is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    def config_hash(self) -> str:
        """sha256 of the canonical JSON of every field that can change results."""
        payload = {k: v for k, v in self.to_dict().items() if k not in ("out_dir", "format")}
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    @property
    def experiment_id(self) -> str:
        return f"{self.kind}-{self.config_hash()[:12]}"


def environment_fingerprint() -> dict:
    return {
        "host": platform.node(),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "build_id": f"speclab-{__version__}",
        "python": platform.python_version(),
        "numpy": np.__version__,
        "machine": platform.machine(),
    }


@dataclass
class ResultRecord:
    experiment_id: str
    kind: str
    config_hash: str
    seed: int
    rows: list[dict]
    summary: dict = field(default_factory=dict)
    environment: dict = field(default_factory=dict)
    paths: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("paths")
        return d


# --------------------------------------------------------------------------- input helpers


def _require(params: dict, *keys):
    missing = [k for k in keys if k not in params]
    if missing:
        raise SpecError(f"missing params: {', '.join(missing)}")


def _model_config(data) -> ModelConfig:
    try:
        return data if isinstance(data, ModelConfig) else ModelConfig.from_dict(dict(data))
    except (TypeError, ValueError) as exc:
        raise SpecError(f"invalid model config: {exc}") from None


def _measurements(spec: ExperimentSpec) -> list[Measurement]:
    rows = spec.params.get("measurements")
    if rows is None:
        if spec.dataset is None:
            raise SpecError("give params.measurements or a measurements CSV as dataset")
        path = Path(spec.dataset)
        if not path.exists():
            raise SpecError(f"dataset not found: {path}")
        try:
            return read_measurements_csv(path)
        except ValueError as exc:
            raise SpecError(str(exc)) from None
    try:
        return [Measurement(str(r["model_id"]), float(r["tar"]), float(r["t_draft_ms"]) / 1e3,
                            float(r["t_target_ms"]) / 1e3) for r in rows]
    except (KeyError, TypeError, ValueError) as exc:
        raise SpecError(f"invalid measurement row: {exc!r}") from None


class _ModelFactory:
    """Parses a model reference up front and builds it later (fitting may be slow)."""

    def __init__(self, ref):
        if not isinstance(ref, dict) or "type" not in ref:
            raise SpecError(f"model reference needs a 'type': {ref!r}")
        self.ref = ref
        kind = ref["type"]
        if kind == "transformer":
            self.config = _model_config(ref.get("config", {}))
        elif kind == "ngram":
            if "path" in ref:
                if not Path(ref["path"]).exists():
                    raise SpecError(f"n-gram model file not found: {ref['path']}")
            elif not 1 <= int(ref.get("order", 0)) <= 8:
                raise SpecError("n-gram order must be in 1..8")
        elif kind == "replay":
            try:
                ReplayModel(ref.get("script", []))
            except (ValueError, TypeError) as exc:
                raise SpecError(f"invalid replay script: {exc}") from None
        else:
            raise SpecError(f"unknown model type {kind!r}")

    def build(self, corpus: Sequence[Sequence[int]]):
        ref = self.ref
        if ref["type"] == "transformer":
            return init_model(self.config)
        if ref["type"] == "replay":
            return ReplayModel(ref["script"])
        if "path" in ref:
            return NGramModel.load(ref["path"])
        return fit_ngram(corpus, int(ref["order"]), float(ref.get("discount", 0.5)),
                         int(ref.get("vocab_size", VOCAB_SIZE)))


def _corpus(spec: ExperimentSpec) -> Callable[[], list[list[int]]]:
    if spec.dataset is not None:
        path = Path(spec.dataset)
        if not path.exists():
            raise SpecError(f"dataset not found: {path}")
        return lambda: ingest_corpus(path)
    n = int(spec.params.get("synthetic_tokens", 20000))
    return lambda: synthetic_corpus(n, seed=spec.seed)


def _prompts(params: dict, corpus: Sequence[Sequence[int]]) -> list[list[int]]:
    if "prompts" in params:
        return [list(map(int, p)) for p in params["prompts"]]
    n = int(params.get("num_prompts", 8))
    length = int(params.get("prompt_len", 16))
    prompts = [list(s[:length]) for s in corpus if len(s) > length][:n]
    if not prompts:
        raise SpecError(f"no corpus record is longer than prompt_len={length}")
    return prompts


def _run_config(spec: ExperimentSpec) -> SpecRunConfig:
    data = dict(spec.params.get("run", {}))
    data.setdefault("rng_seed", spec.seed)
    data.setdefault("warmup_iterations", spec.warmup)
    try:
        return SpecRunConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise SpecError(f"invalid run config: {exc}") from None


# --------------------------------------------------------------------------- pipelines
# Each _prepare_* validates everything and returns a thunk producing (rows, summary).


def _prepare_predict(spec):
    ms = _measurements(spec)
    return lambda: (predict_table(ms), {})


def _prepare_parity(spec):
    ms = _measurements(spec)
    _require(spec.params, "baseline")
    base = spec.params["baseline"]
    if base not in {m.model_id for m in ms}:
        raise SpecError(f"baseline {base!r} not among measurements")
    return lambda: (parity_table(ms, base), {"baseline": base})


def _prepare_extra_tar(spec):
    ms = _measurements(spec)
    _require(spec.params, "baseline")
    base = spec.params["baseline"]
    gamma = int(spec.params.get("lookahead", 8))
    if base not in {m.model_id for m in ms}:
        raise SpecError(f"baseline {base!r} not among measurements")
    if gamma < 1:
        raise SpecError("lookahead must be >= 1")
    return lambda: (extra_tar_table(ms, base, gamma), {"baseline": base, "tar_cap": gamma + 1})


def _prepare_required_tar(spec):
    ms = _measurements(spec)
    _require(spec.params, "throughputs")
    tputs = [float(t) for t in spec.params["throughputs"]]
    if not tputs or min(tputs) <= 0:
        raise SpecError("throughputs must be a non-empty list of positive numbers")
    gamma = spec.params.get("lookahead")
    return lambda: (required_tar_table(ms, tputs, None if gamma is None else int(gamma)), {})


def _latency_sweep_configs(params) -> list[ModelConfig]:
    if "configs" in params:
        return [_model_config(c) for c in params["configs"]]
    base = _model_config(params.get("base", {"num_layers": 1, "num_heads": 4, "model_dim": 128,
                                             "ffn_dim": 512, "vocab_size": VOCAB_SIZE}))
    depths = params.get("depths", [base.num_layers])
    widths = params.get("widths", [base.model_dim])
    out = []
    for d in widths:
        for l in depths:
            try:
                out.append(base.replace(num_layers=int(l), model_dim=int(d),
                                        ffn_dim=base.ffn_dim * int(d) // base.model_dim))
            except ValueError as exc:
                raise SpecError(f"invalid sweep point l={l}, d={d}: {exc}") from None
    return out


def _prepare_bench_latency(spec):
    configs = _latency_sweep_configs(spec.params)
    ctx = int(spec.params.get("context_len", 8))
    if any(ctx + 1 > c.max_positions for c in configs):
        raise SpecError("context_len does not fit max_positions")

    def run():
        rows, samples = [], []
        for cfg in configs:
            t = decode_step_latency(init_model(cfg), ctx, spec.repetitions, spec.warmup)
            samples.append((cfg, t.median))
            rows.append({"l": cfg.num_layers, "h": cfg.num_heads, "d_model": cfg.model_dim,
                         "d_inter": cfg.ffn_dim, "median_ms": t.median * 1e3, "mad_ms": t.mad * 1e3,
                         "repetitions": spec.repetitions})
        summary = {}
        if len({c.num_layers for c in configs}) >= 3:
            fit = fit_latency_model(samples, per_width_intercept=len({c.model_dim for c in configs}) > 1)
            summary["latency_model"] = fit.to_dict()
        return rows, summary

    return run


def _output_digest(tokens) -> str:
    return hashlib.sha256(json.dumps(list(tokens)).encode()).hexdigest()[:16]


def _prepare_run_specdec(spec):
    _require(spec.params, "draft", "target")
    draft_f, target_f = _ModelFactory(spec.params["draft"]), _ModelFactory(spec.params["target"])
    corpus_f = _corpus(spec)
    cfg = _run_config(spec)
    baseline = bool(spec.params.get("baseline", False))

    def run():
        corpus = corpus_f()
        prompts = _prompts(spec.params, corpus)
        draft, target = draft_f.build(corpus), target_f.build(corpus)
        rows, traces = [], []
        for rep in range(spec.repetitions):
            for i, prompt in enumerate(prompts):
                stats = generate_speculative(draft, target, prompt, cfg)
                traces.extend(stats.timed_traces)
                row = {"repetition": rep, "prompt": i, "tokens": len(stats.output),
                       "iterations": stats.iterations, "tar": stats.tar,
                       "throughput": stats.throughput, "draft_time": stats.draft_time,
                       "verify_time": stats.verify_time, "wall_time": stats.wall_time,
                       "output_sha": _output_digest(stats.output)}
                if baseline:
                    ar = generate_autoregressive(target, prompt, cfg)
                    row["matches_baseline"] = ar.output == stats.output
                    row["baseline_throughput"] = ar.throughput
                rows.append(row)
        iters = sum(r["iterations"] for r in rows)
        summary = {"tar": sum(r["tar"] * r["iterations"] for r in rows) / iters if iters else 0.0,
                   "lookahead": cfg.lookahead}
        if traces and sum(t.draft_time + t.verify_time for t in traces) > 0:
            summary["draft_fraction"], summary["verify_fraction"] = measure_breakdown(traces)
        return rows, summary

    return run


def _prepare_sweep(spec):
    _require(spec.params, "draft", "target", "lookaheads")
    draft_f, target_f = _ModelFactory(spec.params["draft"]), _ModelFactory(spec.params["target"])
    corpus_f = _corpus(spec)
    cfg = _run_config(spec)
    gammas = [int(g) for g in spec.params["lookaheads"]]
    if not gammas or min(gammas) < 1:
        raise SpecError("lookaheads must be a non-empty list of integers >= 1")

    def run():
        corpus = corpus_f()
        prompts = _prompts(spec.params, corpus)
        res = sweep_lookahead(draft_f.build(corpus), target_f.build(corpus), prompts, gammas, cfg)
        return res.to_records(), {"best_lookahead": res.best_lookahead}

    return run


def _prepare_explore(spec):
    _require(spec.params, "budget")
    try:
        budget = ParamBudgetSpec.from_dict(spec.params["budget"])
    except (TypeError, ValueError, KeyError) as exc:
        raise SpecError(f"invalid budget spec: {exc}") from None
    lm = spec.params.get("latency_model")
    latency_model = None
    if lm is not None:
        try:
            latency_model = LatencyModel(float(lm["slope_ms"]) / 1e3, float(lm["intercept_ms"]) / 1e3,
                                         saturation_flops=lm.get("saturation_flops"))
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecError(f"latency_model needs slope_ms and intercept_ms: {exc!r}") from None
    tar = spec.params.get("tar_by_depth")
    if tar is not None:
        tar = {int(k): float(v) for k, v in tar.items()}
    t_target = spec.params.get("t_target_ms")
    t_target = None if t_target is None else float(t_target) / 1e3
    gamma = int(spec.params.get("lookahead", 8))
    if tar is not None and latency_model is not None:
        missing = sorted(set(budget.depths) - set(tar))
        if missing:
            raise SpecError(f"tar_by_depth lacks depths {missing}")

    def run():
        reports = enumerate_configs(budget, latency_model, tar, t_target, gamma)
        rows = [r.to_row() for r in reports]
        return rows, {"formula": PARAM_FORMULA, "matches": len(rows), "empty": not rows}

    return run


def _prepare_compare(spec):
    p = spec.params
    _require(p, "config_a", "config_b", "tar_a", "tar_b", "t_target_ms")
    a, b = _model_config(p["config_a"]), _model_config(p["config_b"])
    ms = lambda k: None if p.get(k) is None else float(p[k]) / 1e3  # noqa: E731

    def run():
        rep = compare_wide_vs_deep(a, b, float(p["tar_a"]), float(p["tar_b"]), ms("t_target_ms"),
                                   int(p.get("lookahead", 8)), ms("latency_a_ms"), ms("latency_b_ms"),
                                   p.get("label_a", "a"), p.get("label_b", "b"), spec.repetitions)
        row = rep.to_dict()
        for k in ("latency_a", "latency_b"):
            row[k + "_ms"] = row.pop(k) * 1e3
        return [row], {"winner": rep.winner}

    return run


_PIPELINES = {
    "predict": _prepare_predict,
    "parity": _prepare_parity,
    "extra-tar": _prepare_extra_tar,
    "required-tar": _prepare_required_tar,
    "bench-latency": _prepare_bench_latency,
    "run-specdec": _prepare_run_specdec,
    "sweep-lookahead": _prepare_sweep,
    "explore": _prepare_explore,
    "compare": _prepare_compare,
}


# --------------------------------------------------------------------------- output


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    buf = io.StringIO()
    if columns is None:
        columns = []
        for r in rows:
            columns.extend(k for k in r if k not in columns)
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: "" if r.get(k) is None else r.get(k) for k in columns})
    return buf.getvalue()


def write_atomic(files: dict[Path, str]) -> None:
    """Write every file or none: stage temp files, then rename them all."""
    staged, done = [], []
    try:
        for path, text in files.items():
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
            staged.append(tmp)
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(text)
        for tmp, path in zip(staged, files):
            os.replace(tmp, path)
            done.append(path)
    except BaseException:
        for tmp in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)
        for path in done:
            path.unlink(missing_ok=True)
        raise


def prepare(spec: ExperimentSpec) -> Callable[[], tuple[list[dict], dict]]:
    """Validate a spec and its inputs; raises SpecError without running anything."""
    try:
        return _PIPELINES[spec.kind](spec)
    except SpecError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SpecError(f"invalid params for {spec.kind}: {exc!r}") from None


def run_experiment(spec: ExperimentSpec, write: bool = True) -> ResultRecord:
    thunk = prepare(spec)
    if spec.kind in TIMED_KINDS:
        with timed_section():
            rows, summary = thunk()
    else:
        rows, summary = thunk()
    record = ResultRecord(spec.experiment_id, spec.kind, spec.config_hash(), spec.seed, rows,
                          summary, environment_fingerprint())
    if write:
        out = Path(spec.out_dir)
        csv_path = out / f"{record.experiment_id}.csv"
        json_path = out / f"{record.experiment_id}.json"
        columns = REPORT_COLUMNS if spec.kind == "explore" else None
        payload = dict(record.to_dict(), spec=spec.to_dict())
        write_atomic({csv_path: rows_to_csv(rows, columns),
                      json_path: json.dumps(payload, indent=2, default=str) + "\n"})
        record.paths = [str(csv_path), str(json_path)]
    return record


# --------------------------------------------------------------------------- plot data

PLOT_SCHEMA_VERSION = 1

# figure kind -> (required input keys, output columns)
PLOT_SCHEMAS = {
    "breakdown": (("model", "draft_time", "verify_time"), ("phase", "fraction")),
    "latency-depth": (("layers", "ms"), ("layers", "ms")),
    "parity": (("model", "latency", "parity_latency", "reduction_pct"),
               ("model", "latency", "parity_latency", "reduction_pct")),
    "extra-tar": (("model", "tar", "needed_tar", "extra_tar", "feasible"),
                  ("model", "tar", "needed_tar", "extra_tar", "feasible")),
    "required-tar": (("model", "throughput", "required_tar"), ("model", "throughput", "required_tar")),
    "tput-vs-tar": (("model", "tar", "throughput"), ("model", "tar", "throughput")),
}


class PlotSchemaError(ValueError):
    pass


def _flatten(records) -> list[dict]:
    rows = []
    for r in records:
        rows.extend(r.rows if isinstance(r, ResultRecord) else [r])
    return rows


def _slug(name) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", str(name)).strip("_") or "model"


def emit_plotdata(records, kind: str, out_dir) -> list[Path]:
    """Write plain CSV plot data for one figure kind; returns the paths written.

    A ``plotdata-<kind>.json`` manifest records the schema version and columns.
    """
    if kind not in PLOT_SCHEMAS:
        raise PlotSchemaError(f"unknown figure kind {kind!r}; expected one of {sorted(PLOT_SCHEMAS)}")
    required, columns = PLOT_SCHEMAS[kind]
    rows = _flatten(records)
    for i, r in enumerate(rows):
        missing = [k for k in required if k not in r]
        if missing:
            raise PlotSchemaError(f"record {i} lacks {missing} required by {kind!r}")
    out = Path(out_dir)
    files: dict[Path, str] = {}
    if kind == "breakdown":
        totals: dict[str, list[float]] = {}
        for r in rows:
            acc = totals.setdefault(str(r["model"]), [0.0, 0.0])
            acc[0] += float(r["draft_time"])
            acc[1] += float(r["verify_time"])
        for model, (d, v) in totals.items():
            if d + v <= 0:
                raise PlotSchemaError(f"model {model!r} records no phase time")
            body = [{"phase": "draft", "fraction": d / (d + v)},
                    {"phase": "verify", "fraction": v / (d + v)}]
            files[out / f"breakdown-{_slug(model)}.csv"] = rows_to_csv(body, columns)
    else:
        body = [{c: r[c] for c in columns} for r in rows]
        if kind == "latency-depth":
            body.sort(key=lambda r: r["layers"])
        files[out / f"{kind}.csv"] = rows_to_csv(body, columns)
    manifest = {"kind": kind, "schema_version": PLOT_SCHEMA_VERSION, "columns": list(columns),
                "files": sorted(p.name for p in files)}
    files[out / f"plotdata-{kind}.json"] = json.dumps(manifest, indent=2) + "\n"
    write_atomic(files)
    return [p for p in files if p.suffix == ".csv"]
