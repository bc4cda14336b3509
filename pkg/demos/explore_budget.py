"""Configurations near a fixed parameter budget, ranked by predicted throughput.

Latency per layer and TAR per depth are inputs; the explorer never invents TAR.
"""
import argparse

from speclab import reference
from speclab.explorer import PARAM_FORMULA, ParamBudgetSpec, count_params, enumerate_configs
from speclab.perfmodel import LatencyModel


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--budget", type=float, default=3.5e8)
    ap.add_argument("--tolerance", type=float, default=0.06)
    ap.add_argument("--ms-per-layer", type=float, default=0.45)
    ap.add_argument("--tar", type=float, default=3.0, help="assumed TAR at every depth")
    ap.add_argument("--top", type=int, default=8)
    args = ap.parse_args()

    print(PARAM_FORMULA)
    for c in reference.OPT_350M_VARIANTS:
        n = count_params(c, reference.OPT_350M_EMBED_PROJ_DIM)
        print(f"l={c.num_layers:2d} d={c.model_dim:4d}  {n:>11,d}  {100 * (n / args.budget - 1):+.2f}%")

    spec = ParamBudgetSpec(budget=args.budget, tolerance=args.tolerance, depths=tuple(range(4, 25, 4)),
                           heads=tuple(range(16, 57, 2)), ffn_dims=(3448, 4096),
                           embed_proj_dim=reference.OPT_350M_EMBED_PROJ_DIM)
    lat = LatencyModel(slope=args.ms_per_layer / 1e3, intercept=1e-3)
    reports = enumerate_configs(spec, lat, {l: args.tar for l in spec.depths}, t_target=0.06, lookahead=8)
    print(f"\n{len(reports)} configurations within {100 * args.tolerance:.0f}%; best {args.top}:")
    for r in reports[:args.top]:
        row = r.to_row()
        print(f"l={row['l']:2d} h={row['h']:2d} d={row['d_model']:4d} ffn={row['d_inter']:4d} "
              f"params={row['params']:>11,d}  {row['pred_latency_ms']:5.2f} ms  {row['pred_tput']:5.2f} tok/s")


if __name__ == "__main__":
    main()
