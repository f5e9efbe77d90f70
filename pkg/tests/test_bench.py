import csv
import re
import math
from dataclasses import replace

import numpy as np
import pytest

from hotspot import bench
from hotspot.bench import (CSV_COLUMNS, ExperimentMatrix, Workspace, aggregate, cell_rng, emit_csv, read_csv,
                           resolve_strategy, run_matrix, start_arm)
from hotspot.config import BenchConfig, RunConfig


def small_cfg(**bench_kw):
    return replace(RunConfig(), bench=replace(BenchConfig(env_count=2, trials=2), **bench_kw))


def test_resolve_strategy_grammar():
    s = resolve_strategy("DCPV++")
    assert (s.kind, s.variance_mode, s.window, s.beta_form) == ("mfgpucb", "cpv", 1, "increasing")
    s = resolve_strategy("CV--")
    assert (s.variance_mode, s.window, s.beta_form) == ("current", None, "decreasing")
    assert resolve_strategy("gradient_ascent@mid").level == 1
    assert resolve_strategy("boustrophedon@2").level == 2
    assert resolve_strategy("CPV++@high").level == 2
    for bad in ("DCPV+", "lawnmower", "boustrophedon", "variance_reduction@low", "CPV++@top"):
        with pytest.raises(ValueError, match=re.escape(repr(bad))):
            resolve_strategy(bad)


def test_cell_rng_streams_independent_of_other_strategies():
    a = cell_rng(3, 1, "DCPV++").normal(size=5)
    b = cell_rng(3, 1, "DCPV++").normal(size=5)
    c = cell_rng(3, 1, "CPV++").normal(size=5)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_start_arm_is_matched(bench_grid):
    a = start_arm(bench_grid, 4, 2)
    assert a is start_arm(bench_grid, 4, 2)
    assert a.level == 0
    assert start_arm(bench_grid, 4, 2, "high").level == 2
    assert start_arm(bench_grid, 4, 2, "17").id == 17


def test_single_cell_matrix(tmp_path):
    cfg = small_cfg()
    m = ExperimentMatrix((0,), (0,), ("DCPV++",))
    rows = run_matrix(cfg, m)
    assert len(rows) == 1
    p = tmp_path / "one.csv"
    emit_csv(rows, p)
    back = read_csv(p)
    assert len(back) == 1 and tuple(back[0]) == CSV_COLUMNS


def test_rerun_identical_and_parallel_matches(tmp_path):
    cfg = small_cfg()
    m = ExperimentMatrix((0, 1), (0, 1), ("DCPV++", "boustrophedon@mid", "gradient_ascent@low"))
    serial = run_matrix(cfg, m, 1)
    again = run_matrix(cfg, m, 1)
    par = run_matrix(cfg, m, 2)
    drop = lambda rows: [{k: v for k, v in r.items() if k != "gp_time_ms"} for r in rows]
    assert drop(serial) == drop(again) == drop(par)
    assert [(a.strategy, a.point_mean, a.point_sigma) for a in aggregate(serial)] == \
           [(a.strategy, a.point_mean, a.point_sigma) for a in aggregate(par)]
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    emit_csv([dict(r, gp_time_ms=0.0) for r in serial], p1)
    emit_csv([dict(r, gp_time_ms=0.0) for r in again], p2)
    assert p1.read_bytes() == p2.read_bytes()
    with open(p1) as fh:
        assert {len(r) for r in csv.reader(fh)} == {len(CSV_COLUMNS)}
    for r in serial:
        assert -1 <= r["point_metric"] <= 101 and -1 <= r["arm_metric"] <= 101


def test_aggregate_uses_sample_sigma():
    rows = [dict(strategy="x", budget=100.0, S="exact", images=3, point_metric=v, arm_metric=v,
                 gp_time_ms=1.0, error="") for v in (10.0, 20.0, 40.0)]
    (r,) = aggregate(rows)
    assert r.point_mean == pytest.approx(70 / 3)
    assert r.point_sigma == pytest.approx(np.std([10, 20, 40], ddof=1))
    (one,) = aggregate(rows[:1])
    assert one.point_sigma == 0.0


def test_failed_cell_is_recorded():
    ws = Workspace(small_cfg())
    row = ws.run_cell(0, 0, "DCPV++", -1.0, "exact")
    assert row["error"] and math.isnan(row["point_metric"])
    (agg,) = aggregate([row])
    assert agg.failures == 1 and agg.n == 0


def test_budget_sweep_requires_sorted():
    with pytest.raises(ValueError):
        bench.budget_sweep(small_cfg(), [100, 50])


def test_sparsity_sweep_adds_exact():
    rows, res = bench.sparsity_sweep(small_cfg(), [25], env_seeds=(0,), trial_seeds=(0,))
    assert [r["S"] for r in rows] == ["exact", 25]


def test_timing_rows_shape():
    cfg = RunConfig()
    rows = bench.gp_update_times(cfg, sizes=(50,), steps=3, pixels=(4, 4), exact_steps=2)
    assert [(r.k, r.method) for r in rows] == [(1, "exact"), (1, "sparse"), (2, "exact"), (2, "sparse"),
                                               (3, "sparse")]
    assert rows[-1].n == 48
