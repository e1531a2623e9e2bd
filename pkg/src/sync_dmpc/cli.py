"""Command line front end: run one scenario, compare controllers over a
sweep, or validate a coupling graph's spanning-tree condition.

Exit codes: 0 success, 1 config error, 2 rollout failure (collision or
excessive non-convergence), 3 failed graph validation. Diagnostics go to
stderr; data goes to files (validate-graph prints its verdicts, which
are its output).
"""
from __future__ import annotations

import argparse
import json
import os
import sys


def _apply_thread_cap():
    cap = os.environ.get("SYNC_DMPC_THREADS")
    if cap is None:
        return
    try:
        n = int(cap)
    except ValueError:
        print(f"SYNC_DMPC_THREADS must be an integer, got {cap!r}", file=sys.stderr)
        raise SystemExit(1)
    if n > 0:
        # cap BLAS pools before numpy is imported
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(n))


def _load_config(path: str):
    from .experiment import ScenarioConfig, ScenarioError

    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ScenarioError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"config {path} is not valid JSON: {exc}") from exc
    return ScenarioConfig.from_dict(data)


def _cmd_run(args) -> int:
    from dataclasses import replace

    from .experiment import (
        ScenarioError,
        generate_scenario,
        rollout,
        write_rollout_files,
    )

    try:
        cfg = _load_config(args.config)
        if args.controller:
            cfg = replace(cfg, controller=args.controller)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        world = generate_scenario(cfg)
    except ScenarioError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    result = rollout(world, record_trace=args.trace)
    write_rollout_files(result, args.out, write_trace=args.trace)
    if result.failure is not None:
        print(f"rollout failed: {result.failure}", file=sys.stderr)
        return 2
    if result.metrics.non_converged_steps > result.metrics.steps // 2:
        print(
            f"rollout failed: {result.metrics.non_converged_steps} of "
            f"{result.metrics.steps} steps did not converge",
            file=sys.stderr,
        )
        return 2
    return 0


def _cmd_compare(args) -> int:
    from .experiment import ScenarioError, compare, write_compare_files

    try:
        cfg = _load_config(args.config)
        counts = [int(part) for part in args.agents.split(",") if part]
        if not counts or min(counts) < 1:
            raise ScenarioError(f"bad agent list {args.agents!r}")
        result = compare(cfg, counts, list(range(args.seeds)))
    except ScenarioError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    write_compare_files(result, args.out)
    failures = [r for r in result.runs if r["failure"]]
    if failures:
        print(f"{len(failures)} runs failed (see compare files)", file=sys.stderr)
        return 2
    return 0


def _cmd_validate_graph(args) -> int:
    from .coupling_graph import all_subgraphs, has_spanning_tree
    from .experiment import ScenarioError

    try:
        cfg = _load_config(args.config)
        graph = cfg.graph()
    except ScenarioError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    ok = True
    for center, sub in sorted(all_subgraphs(graph).items()):
        verdict = has_spanning_tree(sub)
        ok = ok and verdict
        print(f"sub-graph {center}: spanning tree = {str(verdict).lower()}")
    if not has_spanning_tree(graph):
        print("coupling graph: disconnected", file=sys.stderr)
        ok = False
    return 0 if ok else 3


def main(argv=None) -> int:
    _apply_thread_cap()
    parser = argparse.ArgumentParser(
        prog="sync-dmpc",
        description="Distributed and centralized MPC formation simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario and write CSV outputs")
    p_run.add_argument("config", help="JSON scenario config")
    p_run.add_argument("--controller", choices=("scdmpc", "cmpc"))
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument("--trace", action="store_true", help="write message trace")
    p_run.set_defaults(func=_cmd_run)

    p_cmp = sub.add_parser("compare", help="sweep agent counts for both controllers")
    p_cmp.add_argument("config")
    p_cmp.add_argument("--agents", default="2,3,4", help="comma-separated counts")
    p_cmp.add_argument("--seeds", type=int, default=5, help="seeds 0..K-1")
    p_cmp.add_argument("--out", default="out")
    p_cmp.set_defaults(func=_cmd_compare)

    p_val = sub.add_parser(
        "validate-graph", help="check the spanning-tree condition per sub-graph"
    )
    p_val.add_argument("config")
    p_val.set_defaults(func=_cmd_validate_graph)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
