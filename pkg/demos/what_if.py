"""What-if calculators on published OPT and pruned-LLaMA draft measurements.

Parity latency: how fast a bigger draft must get to match OPT-125M.
Extra TAR: how much more acceptance it would need at its current latency.
"""
from speclab import reference
from speclab.perfmodel import improvement_factor, parity_latency, reduction_pct, throughput

T_TARGET = 0.06003  # seconds per verification pass, back-solved from 32.59 tok/s


def main():
    print("draft    latency  parity  reduction%")
    for name, (lat, parity, _) in reference.OPT_PARITY.items():
        print(f"{name:7s} {lat:7.1f} {parity:7.1f} {reduction_pct(lat, parity):9.1f}")

    print("\ndeep vs wide 1.3B drafts")
    for name, row in reference.DEEP_VS_WIDE.items():
        tput = throughput(row["tar"], T_TARGET, row["latency_ms"] / 1e3)
        print(f"{name:15s} TAR {row['tar']:.2f}  draft {row['latency_ms']:6.1f} ms  -> {tput:5.2f} tok/s")

    base = reference.DEEP_VS_WIDE["NoFT-Wide-1.3B"]
    base_tput = throughput(base["tar"], T_TARGET, base["latency_ms"] / 1e3)
    deep = reference.DEEP_VS_WIDE["NoFT-1.3B"]
    res = parity_latency(deep["tar"], deep["latency_ms"] / 1e3, base_tput, T_TARGET)
    print(f"\nNoFT-1.3B matches the wide draft at {res.parity_latency * 1e3:.1f} ms "
          f"({res.reduction_pct:.1f}% faster than today)")

    print("\ni.i.d. acceptance: expected tokens per iteration, lookahead 8")
    for alpha in (0.5, 0.7, 0.9):
        print(f"  alpha={alpha}: {improvement_factor(alpha, 8):.2f}")


if __name__ == "__main__":
    main()
