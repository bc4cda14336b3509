"""Greedy speculative decoding emits exactly what the target alone would.

Fits n-gram drafts of increasing order on a synthetic corpus, decodes the same
prompts with and without speculation, and prints TAR next to the match check.
"""
import argparse

from speclab.corpus import decode, synthetic_corpus
from speclab.engine import SpecRunConfig, generate_autoregressive, generate_speculative
from speclab.lm import fit_ngram


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--tokens", type=int, default=50_000)
    ap.add_argument("--lookahead", type=int, default=4)
    ap.add_argument("--prompts", type=int, default=10)
    args = ap.parse_args()

    corpus = synthetic_corpus(args.tokens, seed=0)
    target = fit_ngram(corpus, 4)
    prompts = [s[:12] for s in corpus if len(s) > 12][:args.prompts]
    cfg = SpecRunConfig(lookahead=args.lookahead, max_new_tokens=48)
    baseline = [generate_autoregressive(target, p, cfg).output for p in prompts]

    print(f"{'draft':>6} {'TAR':>6} {'identical':>9}")
    for order in (1, 2, 3):
        draft = fit_ngram(corpus, order)
        runs = [generate_speculative(draft, target, p, cfg) for p in prompts]
        tar = sum(sum(t.emitted for t in r.traces) for r in runs) / sum(r.iterations for r in runs)
        same = all(r.output == b for r, b in zip(runs, baseline))
        print(f"{order}-gram {tar:6.3f} {str(same):>9}")
    print("\nsample:", repr(decode(prompts[0] + baseline[0])))


if __name__ == "__main__":
    main()
