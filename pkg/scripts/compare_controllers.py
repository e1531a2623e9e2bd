#!/usr/bin/env python3
"""Sweep agent counts with both controllers and print the comparison table.

Example:
    python scripts/compare_controllers.py --agents 2 3 4 --seeds 5 --out out/
"""
import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from sync_dmpc.experiment import (  # noqa: E402
    ScenarioConfig,
    compare,
    write_compare_files,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--agents", type=int, nargs="+", default=[2, 3, 4])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--topology", choices=("full", "ring"), default="ring")
    ap.add_argument("--steps", type=int, default=30)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    cfg = ScenarioConfig(
        n_agents=min(args.agents), topology=args.topology, max_steps=args.steps
    )
    result = compare(cfg, args.agents, list(range(args.seeds)))
    fmt = "{:>7} {:>3} {:>10} {:>10} {:>12} {:>9}"
    print(fmt.format("ctrl", "n", "path_dev", "speed_dev", "min_coupled", "max_ms"))
    timing = {(r["controller"], r["n_agents"]): r for r in result.timing}
    for row in result.table:
        t = timing[(row["controller"], row["n_agents"])]
        print(
            fmt.format(
                row["controller"],
                row["n_agents"],
                f"{row['mean_path_deviation']:.4f}",
                f"{row['mean_speed_deviation']:.4f}",
                f"{row['mean_min_coupled_distance']:.3f}",
                f"{t['mean_max_step_seconds'] * 1e3:.1f}",
            )
        )
    failures = [r for r in result.runs if r["failure"]]
    if failures:
        print(f"{len(failures)} runs failed")
        return 2
    if args.out:
        write_compare_files(result, args.out)
        print(f"wrote comparison tables to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
