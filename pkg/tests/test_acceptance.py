"""Acceptance gate: one PASS/FAIL line per criterion, printed at its tolerance.

Criteria 6 to 8 share one desk-scale run (20 environments x 5 trials) built
once per module. Runtime limits are part of each criterion.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from hotspot import bench
from hotspot.config import BenchConfig, RunConfig
from hotspot.field import tarp_field
from hotspot.gp import Hyperparams, SparseGP, TrainingSet, conditional_predictive_variance, posterior
from hotspot.planner import PlannerConfig, run_episode
from hotspot.sensing import AltitudeLevel, build_arm_grid
import oracles

pytestmark = pytest.mark.acceptance

RESULTS: list[str] = []


def report(capsys, n, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d} {title}: {detail}"
    RESULTS.append(line)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


def random_instance(rng, n_max, m_max, extent=10.0):
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    ell = float(rng.uniform(0.5, 4.0))
    sf2 = float(rng.uniform(0.5, 100.0))
    X = rng.uniform(0, extent, (n, 2))
    return (TrainingSet(X, rng.normal(0, math.sqrt(sf2), n), rng.uniform(0.05, 5.0, n)),
            rng.uniform(0, extent, (m, 2)), Hyperparams(ell, sf2, (1.0,)))


# -- 1-3: GP correctness -------------------------------------------------------------

def test_01_oracle_equivalence(capsys):
    rng = np.random.default_rng(20240101)
    t0 = time.perf_counter()
    worst_mu = worst_var = 0.0
    for _ in range(100):
        train, Xs, h = random_instance(rng, 50, 40)
        p = posterior(train, Xs, h)
        mu, cov = oracles.dense_posterior(train.X, train.Y, train.noise, Xs, h.length_scale, h.signal_variance)
        worst_mu = max(worst_mu, np.max(np.abs(p.mean - mu)) / math.sqrt(h.signal_variance))
        worst_var = max(worst_var, np.max(np.abs(p.variance - np.diag(cov))) / h.signal_variance)
    dt = time.perf_counter() - t0
    ok = worst_mu <= 1e-8 and worst_var <= 1e-8 and dt < 10
    report(capsys, 1, "GP oracle equivalence", ok,
           f"max |dmu|/sf = {worst_mu:.2e}, max |dvar|/sf2 = {worst_var:.2e} (tol 1e-8); {dt:.1f} s (< 10 s)")


def test_02_cpv_correctness(capsys):
    rng = np.random.default_rng(7)
    levels = (AltitudeLevel(10.0, 1.0, 0.75), AltitudeLevel(40.0, 2.0, 2.25), AltitudeLevel(70.0, 4.0, 3.75))
    grid = build_arm_grid((8.0, 8.0), levels, 3)
    t0 = time.perf_counter()
    worst_dom = -math.inf
    worst_gap = 0.0
    for _ in range(50):
        n = int(rng.integers(0, 50))
        lv = rng.integers(0, 3, n)
        h = Hyperparams(float(rng.uniform(0.8, 3.0)), float(rng.uniform(1, 100)), (0.75, 2.25, 3.75))
        train = TrainingSet(rng.uniform(0, 8, (n, 2)), rng.normal(0, 5, n), np.asarray(h.noise_variances)[lv])
        arm = grid.arms[int(rng.integers(len(grid.arms)))]
        cpv = conditional_predictive_variance(train, arm, grid, h)
        pts = grid.test_points[arm.test_indices]
        plain = posterior(train, pts, h).variance
        ref = oracles.augmented_variance(train.X, train.noise, pts, grid.noise_of(arm),
                                         h.length_scale, h.signal_variance)
        worst_dom = max(worst_dom, float(np.max(cpv - plain)))
        worst_gap = max(worst_gap, float(np.max(np.abs(cpv - ref))) / h.signal_variance)
    dt = time.perf_counter() - t0
    ok = worst_dom <= 1e-10 and worst_gap <= 1e-8 and dt < 30
    report(capsys, 2, "CPV correctness", ok,
           f"max(CPV - var) = {worst_dom:.2e} (<= 1e-10), max |CPV - augmented oracle|/sf2 = {worst_gap:.2e} "
           f"(<= 1e-8); {dt:.1f} s (< 30 s)")


def test_03_sparse_exactness(capsys):
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        train, Xs, h = random_instance(rng, 200, 60)
        sp = SparseGP(train, h, Xs, train.X)
        ex = posterior(train, Xs, h)
        worst = max(worst, np.max(np.abs(sp.mean() - ex.mean)) / math.sqrt(h.signal_variance),
                    np.max(np.abs(sp.variance() - ex.variance)) / h.signal_variance)
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and dt < 10
    report(capsys, 3, "sparse exactness", ok, f"max relative gap {worst:.2e} (<= 1e-6); {dt:.1f} s (< 10 s)")


# -- 4-5: sparsity ------------------------------------------------------------------------

def test_04_sparsity_speed(capsys):
    t0 = time.perf_counter()
    rows = bench.gp_update_times(RunConfig(), sizes=(200,), steps=15, pixels=(19, 34), exact_steps=10,
                                 repeats=3)
    dt = time.perf_counter() - t0
    t = {(r.method, r.k): r.seconds for r in rows}
    speedup = t[("exact", 10)] / t[("sparse", 10)]
    growth = t[("sparse", 15)] / t[("sparse", 5)]
    exact = [t[("exact", k)] for k in range(1, 11)]
    increasing = all(b > a for a, b in zip(exact, exact[1:]))
    ok = speedup >= 10 and growth <= 4 and dt < 300
    report(capsys, 4, "sparsity speed", ok,
           f"exact/sparse at k=10 = {speedup:.1f}x (>= 10x), sparse k=15/k=5 = {growth:.2f}x (<= 4x); "
           f"exact per-step strictly increasing over k=1..10: {increasing}; {dt:.0f} s (< 300 s)")


def test_05_sparsity_fidelity(capsys):
    cfg = replace(RunConfig(), bench=replace(BenchConfig(), env_count=10, trials=5))
    t0 = time.perf_counter()
    rows, res = bench.sparsity_sweep(cfg, [400], "DCPV++")
    dt = time.perf_counter() - t0
    ex = bench.lookup(res, "DCPV++", S="exact")
    sp = bench.lookup(res, "DCPV++", S=400)
    gap = abs(ex.point_mean - sp.point_mean)
    ok = gap <= 5 and ex.failures == sp.failures == 0 and dt < 600
    report(capsys, 5, "sparsity fidelity", ok,
           f"exact {ex.point_mean:.2f} vs S=400 {sp.point_mean:.2f}, gap {gap:.2f} pp (<= 5); {dt:.0f} s (< 600 s)")


# -- 6-8: desk-scale ablation and comparison ------------------------------------------------

@pytest.fixture(scope="module")
def desk():
    cfg = RunConfig()  # 20 environments x 5 trials, B = 100, T_S = 2
    out = {}
    t0 = time.perf_counter()
    m = bench.ExperimentMatrix.from_config(cfg, strategies=bench.ABLATION_STRATEGIES)
    rows = bench.run_matrix(cfg, m)
    out["ablation_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    others = tuple(s for s in bench.COMPARISON_STRATEGIES if s not in bench.ABLATION_STRATEGIES)
    rows += bench.run_matrix(cfg, bench.ExperimentMatrix.from_config(cfg, strategies=others))
    out["compare_s"] = time.perf_counter() - t0
    out["rows"] = rows
    out["res"] = {r.strategy: r for r in bench.aggregate(rows)}
    return out


def _pairs(res, a_of, b_of):
    out = []
    for s in bench.ABLATION_STRATEGIES:
        a = a_of(s)
        if a == s:
            out.append((s, b_of(s), res[s].point_mean - res[b_of(s)].point_mean))
    return out


def test_06_cpv_ablation(capsys, desk):
    res = desk["res"]
    pairs = _pairs(res, lambda s: s if "CPV" in s else None, lambda s: s.replace("CPV", "CV"))
    diffs = [d for _, _, d in pairs]
    mean = float(np.mean(diffs))
    ok = mean >= 5 and all(d > 0 for d in diffs) and desk["ablation_s"] < 900
    detail = ", ".join(f"{a}-{b} {d:+.2f}" for a, b, d in pairs)
    report(capsys, 6, "CPV ablation", ok,
           f"{detail}; mean {mean:+.2f} pp (>= +5, every pair > 0); ablation run {desk['ablation_s']:.0f} s (< 900 s)")


def test_07_window_ablation(capsys, desk):
    res = desk["res"]
    pairs = _pairs(res, lambda s: s if s.startswith("D") else None, lambda s: s[1:])
    diffs = [d for _, _, d in pairs]
    mean = float(np.mean(diffs))
    ok = mean >= 10
    detail = ", ".join(f"{a}-{b} {d:+.2f}" for a, b, d in pairs)
    report(capsys, 7, "dynamic-window ablation", ok, f"{detail}; mean {mean:+.2f} pp (>= +10)")


def test_08_baseline_comparison(capsys, desk):
    res = desk["res"]
    ours = res["DCPV++"].point_mean
    baselines = [s for s in bench.COMPARISON_STRATEGIES if s != "DCPV++"]
    beaten = {s: ours > res[s].point_mean for s in baselines}
    families = {}
    for s in baselines:
        families.setdefault(s.split("@")[0], []).append(res[s].point_mean)
    fam = {k: float(np.mean(v)) for k, v in families.items()}
    worst = min(fam, key=fam.get)
    elapsed = desk["ablation_s"] / 8 + desk["compare_s"]
    ok = all(beaten.values()) and worst == "gradient_ascent" and elapsed < 1200
    table = ", ".join(f"{s} {res[s].point_mean:.2f}" for s in baselines)
    report(capsys, 8, "baseline comparison", ok,
           f"DCPV++ {ours:.2f} vs {table}; beats all: {all(beaten.values())}; "
           f"lowest family mean: {worst} ({fam[worst]:.2f}); {elapsed:.0f} s (< 1200 s)")


# -- 9-11: budget and tarp ---------------------------------------------------------------------

def test_09_budget_sweep(capsys):
    budgets = (50.0, 100.0, 150.0, 200.0)
    rows, res = bench.budget_sweep(RunConfig(), budgets, "DCPV++")
    means = [bench.lookup(res, "DCPV++", budget=b).point_mean for b in budgets]
    sig = [bench.lookup(res, "DCPV++", budget=b).point_sigma for b in budgets]
    steps = np.diff(means)
    ok = bool(np.all(steps >= 0)) and (means[3] - means[2]) < (means[1] - means[0])
    detail = ", ".join(f"B={b:.0f}: {m:.2f}+-{s:.2f}" for b, m, s in zip(budgets, means, sig))
    report(capsys, 9, "budget sweep", ok,
           f"{detail}; non-decreasing, gain 150->200 ({means[3] - means[2]:+.2f}) < gain 50->100 "
           f"({means[1] - means[0]:+.2f})")


def test_10_budget_invariant(capsys):
    cfg = RunConfig()
    ws = bench.Workspace(cfg)
    rng = np.random.default_rng(10)
    names = bench.ABLATION_STRATEGIES + bench.COMPARISON_STRATEGIES[1:]
    violations = failures = 0
    t0 = time.perf_counter()
    for i in range(1000):
        name = names[int(rng.integers(len(names)))]
        budget = float(rng.uniform(0.5, 60.0))
        ts = float(rng.uniform(0.5, 6.0))
        env = int(rng.integers(20))
        field, opt = ws.field(env)
        spec = bench.resolve_strategy(name)
        base = replace(cfg.planner_config(), budget=budget, sensing_time=ts)
        strat, pcfg = bench.build_strategy(spec, base)
        start = ws.grid.arms[int(rng.integers(len(ws.grid.arms)))]
        tr = run_episode(field, ws.grid, ws.hyper, pcfg, np.random.default_rng(i), strat, start, opt, ws.cache)
        total = 0.0
        for s in tr.steps:
            total += s.travel + ts
        violations += total > budget
        failures += not (tr.images == len(tr.steps))
    dt = time.perf_counter() - t0
    ok = violations == 0 and failures == 0
    report(capsys, 10, "budget invariant", ok,
           f"{violations} violations of sum(T_T + T_S) <= B in 1000 random episodes ({dt:.0f} s)")


def test_11_tarp(capsys):
    cfg = RunConfig()
    ws = bench.Workspace(cfg)
    field = tarp_field(cfg.field.extent)
    hits = []
    for seed in range(10):
        start = bench.start_arm(ws.grid, 1000, seed)
        pcfg = cfg.planner_config()
        tr = run_episode(field, ws.grid, ws.hyper, pcfg, np.random.default_rng(seed), start_arm=start,
                         cache=ws.cache)
        hits.append(tr.point_metric)
    full = sum(1 for h in hits if h >= 100.0 - 1e-9)
    ok = full >= 9
    report(capsys, 11, "tarp scenario", ok,
           f"{full}/10 runs at 100% (>= 9); metrics {', '.join(f'{h:.0f}' for h in hits)}")
