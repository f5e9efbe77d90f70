"""Command line entry point: ``hotspot <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import bench
from .config import ConfigError, RunConfig, dumps, load_config
from .field import generate_random_field, global_optimum, save_field_to_grid

log = logging.getLogger("hotspot")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, field=replace(cfg.field, seed=args.seed),
                      bench=replace(cfg.bench, env_seed_base=args.seed))
    if args.workers is not None:
        cfg = replace(cfg, bench=replace(cfg.bench, workers=args.workers))
    return cfg


def _out(args, cfg, default):
    return args.out or (cfg.bench.out if args.config else default)


def _report(rows, path):
    bench.emit_csv(rows, path)
    results = bench.aggregate(rows)
    root, ext = os.path.splitext(path)
    bench.emit_aggregate_csv(results, f"{root}_summary{ext or '.csv'}")
    print(bench.format_table(results))
    failed = sum(1 for r in rows if r.get("error"))
    if failed:
        print(f"{failed} cell(s) failed; see log", file=sys.stderr)
    print(f"wrote {path}")
    return results


def _progress(verbose):
    if not verbose:
        return None
    return lambda i, n: log.info("cell %d/%d", i, n)


def cmd_gen_field(args, cfg):
    field = generate_random_field(cfg.field)
    path = _out(args, cfg, f"field_{cfg.field.seed}.grid")
    save_field_to_grid(field, path, args.cell_size)
    x, f = global_optimum(field)
    print(f"seed {cfg.field.seed}: max {f:.4f} at ({x[0]:.2f}, {x[1]:.2f}); wrote {path}")


def _dump_hook(path):
    fh = open(path, "w", newline="")
    w = csv.writer(fh)
    w.writerow(["k", "kind", "x", "y", "value", "noise", "variance"])

    def hook(k, state):
        t = state.train
        for x, y, q in zip(t.X, t.Y, t.noise):
            w.writerow([k, "train", repr(float(x[0])), repr(float(x[1])), repr(float(y)), repr(float(q)), ""])
        mu = state.model.mean()
        var = state.model.variance()
        for p, m, v in zip(state.grid.test_points, mu, var):
            w.writerow([k, "test", repr(float(p[0])), repr(float(p[1])), repr(float(m)), "", repr(float(v))])
        fh.flush()

    return hook, fh


def cmd_run(args, cfg):
    ws = bench.Workspace(cfg)
    env = cfg.field.seed
    hook, fh = (None, None)
    if args.verbose:
        hook, fh = _dump_hook(_out(args, cfg, "run.csv").replace(".csv", "") + "_debug.csv")
    try:
        row = ws.run_cell(env, args.trial, args.strategy, cfg.planner.budget, cfg.gp.sparse_size, step_hook=hook)
    finally:
        if fh:
            fh.close()
    path = _out(args, cfg, "run.csv")
    bench.emit_csv([row], path)
    if row.get("error"):
        print(f"episode failed: {row['error']}", file=sys.stderr)
        return 1
    print(f"{args.strategy}: point {row['point_metric']:.2f}%  arm {row['arm_metric']:.2f}%  "
          f"images {row['images']}  gp {row['gp_time_ms']:.1f} ms/step; wrote {path}")
    return 0


def cmd_matrix(strategies):
    def run(args, cfg):
        m = bench.ExperimentMatrix.from_config(cfg, strategies=strategies)
        rows = bench.run_matrix(cfg, m, cfg.bench.workers, _progress(args.verbose))
        _report(rows, _out(args, cfg, f"{args.command}.csv"))
    return run


def cmd_budget_sweep(args, cfg):
    budgets = args.budgets or cfg.bench.budgets
    if len(budgets) < 2 and not args.budgets:
        budgets = (50.0, 100.0, 150.0, 200.0)
    rows, _ = bench.budget_sweep(cfg, sorted(budgets), args.strategy, cfg.bench.workers)
    _report(rows, _out(args, cfg, "budget_sweep.csv"))


def cmd_sparsity_sweep(args, cfg):
    sizes = args.sizes or [s for s in cfg.bench.sparsity if s != "exact"] or [25, 100, 400]
    rows, _ = bench.sparsity_sweep(cfg, sizes, args.strategy, cfg.bench.workers)
    path = _out(args, cfg, "sparsity_sweep.csv")
    _report(rows, path)
    if args.timing_steps:
        timing = bench.gp_update_times(cfg, [int(s) for s in sizes], args.timing_steps, (19, 34),
                                       exact_steps=args.exact_steps)
        tpath = os.path.splitext(path)[0] + "_timing.csv"
        bench.emit_timing_csv(timing, tpath)
        print(f"wrote {tpath}")


def cmd_dump_config(args, cfg):
    text = dumps(cfg)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        print(text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--seed", type=int, help="field seed / first environment seed")
    common.add_argument("--out", help="output path")
    common.add_argument("--workers", type=int, help="parallel episode workers")
    common.add_argument("--verbose", action="store_true", help="progress logging; per-step GP dump for run")

    p = argparse.ArgumentParser(prog="hotspot", description="Multi-fidelity GP-UCB hotspot search benchmark")
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen-field", parents=[common], help="write a random field as a grid file")
    g.add_argument("--cell-size", type=float, default=0.1)
    r = sub.add_parser("run", parents=[common], help="run a single episode")
    r.add_argument("--strategy", default="DCPV++")
    r.add_argument("--trial", type=int, default=0)
    sub.add_parser("ablation", parents=[common], help="the eight planner variants")
    sub.add_parser("compare", parents=[common], help="DCPV++ against the baselines")
    b = sub.add_parser("budget-sweep", parents=[common], help="metric against budget")
    b.add_argument("--budgets", type=float, nargs="+")
    b.add_argument("--strategy", default="DCPV++")
    s = sub.add_parser("sparsity-sweep", parents=[common], help="exact against sparse inference")
    s.add_argument("--sizes", type=int, nargs="+")
    s.add_argument("--strategy", default="DCPV++")
    s.add_argument("--timing-steps", type=int, default=0, help="also time GP updates with 646-pixel images")
    s.add_argument("--exact-steps", type=int, default=None)
    sub.add_parser("dump-config", parents=[common], help="print the effective configuration")
    return p


COMMANDS = {
    "gen-field": cmd_gen_field,
    "run": cmd_run,
    "ablation": cmd_matrix(bench.ABLATION_STRATEGIES),
    "compare": cmd_matrix(bench.COMPARISON_STRATEGIES),
    "budget-sweep": cmd_budget_sweep,
    "sparsity-sweep": cmd_sparsity_sweep,
    "dump-config": cmd_dump_config,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg) or 0
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
