#!/usr/bin/env python3
"""Run one formation-building scenario and print a metrics summary.

Example:
    python scripts/run_formation.py --agents 4 --seed 7 --controller scdmpc
"""
import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from sync_dmpc.experiment import (  # noqa: E402
    ScenarioConfig,
    generate_scenario,
    rollout,
    write_rollout_files,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--agents", type=int, default=4)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--controller", choices=("scdmpc", "cmpc"), default="scdmpc")
    ap.add_argument("--topology", choices=("full", "ring"), default="full")
    ap.add_argument("--steps", type=int, default=60)
    ap.add_argument("--out", default=None, help="optionally write CSV outputs here")
    args = ap.parse_args()

    cfg = ScenarioConfig(
        n_agents=args.agents,
        seed=args.seed,
        controller=args.controller,
        topology=args.topology,
        max_steps=args.steps,
    )
    world = generate_scenario(cfg)
    result = rollout(world)
    m = result.metrics
    print(f"controller={cfg.controller} agents={cfg.n_agents} seed={cfg.seed}")
    print(f"steps executed:        {m.steps}")
    print(f"mean path deviation:   {m.mean_path_deviation:.4f} m*s")
    print(f"mean speed deviation:  {m.mean_speed_deviation:.4f} m")
    print(f"min distance:          {m.min_distance:.3f} m (coupled {m.min_coupled_distance:.3f})")
    print(f"outer/sync iterations: {m.total_outer_iterations}/{m.total_sync_iterations}")
    print(f"non-converged steps:   {m.non_converged_steps}")
    print(f"max step time:         {m.max_step_seconds * 1e3:.1f} ms")
    for a in m.per_agent:
        arr = a.arrival_step if a.arrival_step is not None else "-"
        print(f"  agent {a.agent}: path dev {a.path_deviation:.4f}, "
              f"speed dev {a.speed_deviation:.4f}, arrival {arr}")
    if result.failure:
        print(f"FAILURE: {result.failure}")
        return 2
    if args.out:
        write_rollout_files(result, args.out)
        print(f"wrote CSV outputs to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
