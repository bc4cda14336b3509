"""Decode-step latency of the tiny transformer against depth and width.

Prints the affine depth fit and the latency ratio for doubled width; optionally
writes plot-ready CSVs.
"""
import argparse

from speclab.bench import decode_step_latency, timed_section
from speclab.harness import emit_plotdata
from speclab.model import ModelConfig, init_model
from speclab.perfmodel import fit_latency_model


def latency(layers, width, ffn, reps):
    model = init_model(ModelConfig(layers, width // 32, width, ffn, 257))
    return decode_step_latency(model, context_len=8, repetitions=reps).median


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--width", type=int, default=128)
    ap.add_argument("--reps", type=int, default=30)
    ap.add_argument("--out-dir", help="write latency-depth.csv here")
    args = ap.parse_args()

    with timed_section():
        samples = []
        for l in (1, 2, 4, 8, 16):
            cfg = ModelConfig(l, args.width // 32, args.width, 4 * args.width, 257)
            samples.append((cfg, latency(l, args.width, 4 * args.width, args.reps)))
            print(f"l={l:2d}  {samples[-1][1] * 1e3:7.3f} ms")
        fit = fit_latency_model(samples)
        print(f"fit: {fit.slope * 1e3:.3f} ms/layer + {fit.intercept * 1e3:.3f} ms, R^2={fit.r_squared:.4f}")

        narrow = latency(4, args.width, 512, args.reps)
        wide = latency(4, 2 * args.width, 512, args.reps)
    print(f"width {args.width} -> {2 * args.width} at l=4: latency x{wide / narrow:.2f}")

    if args.out_dir:
        rows = [{"layers": c.num_layers, "ms": s * 1e3} for c, s in samples]
        for path in emit_plotdata(rows, "latency-depth", args.out_dir):
            print("wrote", path)


if __name__ == "__main__":
    main()
