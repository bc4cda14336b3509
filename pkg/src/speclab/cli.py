"""Command-line front end for the experiment harness.

Exit codes: 0 success, 1 validation error (bad arguments, spec or inputs),
2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import reference
from .corpus import CorpusError, ingest_corpus
from .harness import ExperimentSpec, SpecError, rows_to_csv, run_experiment

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _ints(text: str) -> list[int]:
    """``1,2,4`` or an inclusive range ``4:24``."""
    if ":" in text:
        lo, hi = text.split(":", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in text.split(",") if x.strip()]


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _model_ref(text: str) -> dict:
    """JSON object, ``ngram:ORDER``, ``ngram-file:PATH`` or ``transformer:L,H,D,F[,V]``."""
    if text.lstrip().startswith("{"):
        return json.loads(text)
    kind, _, arg = text.partition(":")
    if kind == "ngram":
        return {"type": "ngram", "order": int(arg)}
    if kind == "ngram-file":
        return {"type": "ngram", "path": arg}
    if kind == "transformer":
        vals = [int(x) for x in arg.split(",")]
        if len(vals) not in (4, 5):
            raise argparse.ArgumentTypeError("transformer needs L,H,D,F[,V]")
        keys = ("num_layers", "num_heads", "model_dim", "ffn_dim", "vocab_size")
        cfg = dict(zip(keys, vals))
        cfg.setdefault("vocab_size", 257)
        return {"type": "transformer", "config": cfg}
    raise argparse.ArgumentTypeError(f"unrecognized model reference {text!r}")


def _config_ref(text: str) -> dict:
    """A named reference shape (e.g. ``NoFT-1.3B``) or a JSON ModelConfig."""
    if text in reference.PRUNED_LLAMA_DRAFTS:
        return reference.PRUNED_LLAMA_DRAFTS[text].to_dict()
    if text == "OPT-125M":
        return reference.OPT_125M.to_dict()
    path = Path(text)
    if path.exists():
        return json.loads(path.read_text())
    return json.loads(text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", default=argparse.SUPPRESS, help="JSON experiment spec or params file")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    g.add_argument("--out-dir", default=argparse.SUPPRESS, help="write CSV + JSON results here")
    g.add_argument("--format", choices=("csv", "json"), default=argparse.SUPPRESS,
                   help="stdout format (default csv)")

    parser = _Parser(prog="speclab", description="Speculative decoding laboratory.", parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[common])

    def timing(p):
        p.add_argument("--repetitions", type=int)
        p.add_argument("--warmup", type=int)

    p = add("bench-latency", "time decode steps of the tiny transformer across depths/widths")
    p.add_argument("--depths", type=_ints, default=[1, 2, 4, 8, 16])
    p.add_argument("--widths", type=_ints, default=[128])
    p.add_argument("--head-dim", type=int, default=32)
    p.add_argument("--ffn-ratio", type=int, default=4)
    p.add_argument("--vocab", type=int, default=257)
    p.add_argument("--context-len", type=int, default=8)
    timing(p)

    for name, help_ in (("run-specdec", "run speculative decoding over prompts"),
                        ("sweep-lookahead", "sweep lookahead and report TAR and throughput")):
        p = add(name, help_)
        p.add_argument("--draft", type=_model_ref, required=True)
        p.add_argument("--target", type=_model_ref, required=True)
        p.add_argument("--dataset", help="UTF-8 text or JSONL corpus (default: synthetic)")
        p.add_argument("--lookahead", type=int)
        p.add_argument("--temperature", type=float)
        p.add_argument("--max-new", type=int)
        p.add_argument("--eos", type=int)
        p.add_argument("--num-prompts", type=int)
        p.add_argument("--prompt-len", type=int)
        timing(p)
        if name == "run-specdec":
            p.add_argument("--baseline", action="store_true", help="also run target-only decoding")
        else:
            p.add_argument("--lookaheads", type=_ints, default=list(range(1, 9)))

    p = add("predict", "predicted throughput from TAR and latencies")
    p.add_argument("--measurements", help="CSV with model_id,tar,t_draft_ms,t_target_ms")
    p.add_argument("--model-id", default="model")
    p.add_argument("--tar", type=float)
    p.add_argument("--t-draft-ms", type=float)
    p.add_argument("--t-target-ms", type=float)

    for name, help_ in (("parity", "draft latency needed to match a baseline's throughput"),
                        ("extra-tar", "extra TAR needed to match a baseline's throughput")):
        p = add(name, help_)
        p.add_argument("--measurements", required=True)
        p.add_argument("--baseline", required=True)
        if name == "extra-tar":
            p.add_argument("--lookahead", type=int, default=8)

    p = add("required-tar", "TAR needed to reach given throughputs")
    p.add_argument("--measurements", required=True)
    p.add_argument("--throughputs", type=_floats, required=True)
    p.add_argument("--lookahead", type=int)

    p = add("explore", "enumerate configurations at a fixed parameter budget")
    p.add_argument("--budget", type=float)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--depths", type=_ints)
    p.add_argument("--heads", type=_ints)
    p.add_argument("--head-dim", type=int)
    p.add_argument("--ffn-dims", type=_ints)
    p.add_argument("--ffn-ratios", type=_floats)
    p.add_argument("--vocab", type=int)
    p.add_argument("--positions", type=int)
    p.add_argument("--embed-proj-dim", type=int)
    p.add_argument("--gated-ffn", action="store_true", default=None)
    p.add_argument("--slope-ms", type=float)
    p.add_argument("--intercept-ms", type=float)
    p.add_argument("--tar-by-depth", type=json.loads, help='JSON object, e.g. {"4": 3.1}')
    p.add_argument("--t-target-ms", type=float)
    p.add_argument("--lookahead", type=int)

    p = add("compare", "wide-vs-deep verdict for two drafts sharing a target")
    p.add_argument("--config-a", type=_config_ref, required=True)
    p.add_argument("--config-b", type=_config_ref, required=True)
    p.add_argument("--tar-a", type=float, required=True)
    p.add_argument("--tar-b", type=float, required=True)
    p.add_argument("--t-target-ms", type=float, required=True)
    p.add_argument("--latency-a-ms", type=float)
    p.add_argument("--latency-b-ms", type=float)
    p.add_argument("--label-a", default="a")
    p.add_argument("--label-b", default="b")
    p.add_argument("--lookahead", type=int, default=8)
    timing(p)

    p = add("ingest", "tokenize a corpus into byte-level sequences")
    p.add_argument("path")
    p.add_argument("--input-format", choices=("text", "jsonl"))
    return parser


def _load_config(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise SpecError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise SpecError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise SpecError("config file must hold a JSON object")
    # a bare params object is accepted as shorthand
    if "kind" in data or "params" in data:
        return data
    return {"params": data}


def _set(d: dict, key: str, value):
    if value is not None:
        d[key] = value


def _params(args) -> dict:
    """Params contributed by subcommand flags (None means not given)."""
    cmd, p = args.command, {}
    if cmd == "bench-latency":
        w0 = args.widths[0]
        p["base"] = {"num_layers": 1, "num_heads": max(1, w0 // args.head_dim), "model_dim": w0,
                     "ffn_dim": args.ffn_ratio * w0, "vocab_size": args.vocab}
        p["depths"], p["widths"], p["context_len"] = args.depths, args.widths, args.context_len
        if any(w % args.head_dim for w in args.widths):
            raise SpecError("every width must be a multiple of --head-dim")
    elif cmd in ("run-specdec", "sweep-lookahead"):
        p["draft"], p["target"] = args.draft, args.target
        run = {}
        _set(run, "lookahead", args.lookahead)
        _set(run, "temperature", args.temperature)
        _set(run, "max_new_tokens", args.max_new)
        _set(run, "eos_token", args.eos)
        if run:
            p["run"] = run
        _set(p, "num_prompts", args.num_prompts)
        _set(p, "prompt_len", args.prompt_len)
        if cmd == "run-specdec":
            _set(p, "baseline", args.baseline or None)
        else:
            p["lookaheads"] = args.lookaheads
    elif cmd == "predict":
        given = [v is not None for v in (args.tar, args.t_draft_ms, args.t_target_ms)]
        if any(given) and not all(given):
            raise SpecError("predict needs all of --tar, --t-draft-ms, --t-target-ms together")
        if args.measurements is None and all(given):
            p["measurements"] = [{"model_id": args.model_id, "tar": args.tar,
                                  "t_draft_ms": args.t_draft_ms, "t_target_ms": args.t_target_ms}]
    elif cmd in ("parity", "extra-tar"):
        p["baseline"] = args.baseline
        if cmd == "extra-tar":
            p["lookahead"] = args.lookahead
    elif cmd == "required-tar":
        p["throughputs"] = args.throughputs
        _set(p, "lookahead", args.lookahead)
    elif cmd == "explore":
        budget = {}
        for key, attr in (("budget", "budget"), ("tolerance", "tolerance"), ("depths", "depths"),
                          ("heads", "heads"), ("head_dim", "head_dim"), ("ffn_dims", "ffn_dims"),
                          ("ffn_ratios", "ffn_ratios"), ("vocab_size", "vocab"),
                          ("max_positions", "positions"), ("embed_proj_dim", "embed_proj_dim"),
                          ("gated_ffn", "gated_ffn")):
            _set(budget, key, getattr(args, attr))
        if "budget" in budget:
            budget["budget"] = int(budget["budget"])
        if budget:
            p["budget"] = budget
        if args.slope_ms is not None or args.intercept_ms is not None:
            p["latency_model"] = {"slope_ms": args.slope_ms, "intercept_ms": args.intercept_ms}
        _set(p, "tar_by_depth", args.tar_by_depth)
        _set(p, "t_target_ms", args.t_target_ms)
        _set(p, "lookahead", args.lookahead)
    elif cmd == "compare":
        for key in ("config_a", "config_b", "tar_a", "tar_b", "t_target_ms", "latency_a_ms",
                    "latency_b_ms", "label_a", "label_b", "lookahead"):
            _set(p, key, getattr(args, key))
    return p


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def build_spec(args) -> tuple[ExperimentSpec, bool]:
    """The experiment spec, and whether result files should be written."""
    data = _load_config(args.config) if hasattr(args, "config") else {}
    write = "out_dir" in data or hasattr(args, "out_dir")
    if data.get("kind", args.command) != args.command:
        raise SpecError(f"config kind {data['kind']!r} does not match subcommand {args.command!r}")
    data["kind"] = args.command
    data["params"] = _merge(data.get("params", {}), _params(args))
    for key, attr in (("seed", "seed"), ("out_dir", "out_dir"), ("format", "format"),
                      ("repetitions", "repetitions"), ("warmup", "warmup"),
                      ("dataset", "dataset"), ("dataset", "measurements")):
        value = getattr(args, attr, None)
        if value is not None:
            data[key] = value
    return ExperimentSpec.from_dict(data), write


def _emit(rows, fmt, stream):
    if fmt == "json":
        stream.write(json.dumps(rows, indent=2, default=str) + "\n")
    else:
        stream.write(rows_to_csv(rows))


def _ingest(args, stream) -> None:
    seqs = ingest_corpus(args.path, fmt=args.input_format)
    rows = [{"record": i, "tokens": len(s)} for i, s in enumerate(seqs)]
    if hasattr(args, "out_dir"):
        from .harness import write_atomic

        out = Path(args.out_dir) / (Path(args.path).stem + ".tokens.jsonl")
        write_atomic({out: "".join(json.dumps(s) + "\n" for s in seqs)})
    _emit(rows, getattr(args, "format", "csv"), stream)


def main(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "ingest":
            _ingest(args, stdout)
            return EXIT_OK
        spec, write = build_spec(args)
        record = run_experiment(spec, write=write)
    except (SpecError, CorpusError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"speclab: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - anything past validation is a runtime failure
        print(f"speclab: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    _emit(record.rows, spec.format, stdout)
    for path in record.paths:
        print(f"wrote {path}", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
