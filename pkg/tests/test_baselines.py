import math

import numpy as np
import pytest

from hotspot.baselines import (BaselineConfig, BlockUCL, Boustrophedon, GradientAscent, MutualInformation,
                               VarianceReduction, fit_plane, information_gains, lattice_neighbors,
                               make_baseline, serpentine_order, spread_scores)
from hotspot.field import Bump, FieldConfig, ScalarField, field_from_grid, generate_random_field
from hotspot.gp import Hyperparams, TrainingSet
from hotspot.planner import BetaSchedule, EpisodeState, PlannerConfig, arm_statistics, run_episode
from hotspot.sensing import build_arm_grid, make_levels
import oracles


def quiet_grid(extent=(9.0, 9.0), altitudes=(10, 40), footprints=(1, 3)):
    levels = make_levels(altitudes, footprints, (1e-8, 0.0))
    g = build_arm_grid(extent, levels, 3)
    return g, Hyperparams(2.0, 100.0, tuple(lv.noise_variance for lv in levels))


def budget_total(trace):
    return sum(s.travel + trace.sensing_time for s in trace.steps)


# -- boustrophedon ------------------------------------------------------------

def test_serpentine_3x3():
    g = build_arm_grid((3.0, 3.0), make_levels([10], [1]), 3)
    order = [g.arms[a].lattice for a in serpentine_order(g, 0)]
    assert order == oracles.serpentine(3, 3)
    assert order[:7] == [(0, 0), (1, 0), (2, 0), (2, 1), (1, 1), (0, 1), (0, 2)]


def test_boustrophedon_full_sweep_and_prefix(bench_grid, bench_hyper):
    field = generate_random_field(FieldConfig(seed=1))
    cfg = PlannerConfig(budget=400.0)
    tr = run_episode(field, bench_grid, bench_hyper, cfg, np.random.default_rng(0), Boustrophedon(1),
                     start_arm=bench_grid.arm_at(1, 0, 0))
    ids = [s.arm_id for s in tr.steps]
    order = serpentine_order(bench_grid, 1)
    assert ids[:25] == order  # every arm of the level exactly once
    assert budget_total(tr) <= 400.0
    short = run_episode(field, bench_grid, bench_hyper, PlannerConfig(budget=30.0), np.random.default_rng(0),
                        Boustrophedon(1), start_arm=bench_grid.arm_at(1, 0, 0))
    sid = [s.arm_id for s in short.steps]
    assert sid == order[:len(sid)] and len(set(sid)) == len(sid) < 25


# -- gradient ascent ------------------------------------------------------------

def test_plane_fit():
    pts = np.random.default_rng(0).uniform(0, 3, (9, 2))
    g, rank = fit_plane(pts, 2.0 + 3 * pts[:, 0] - pts[:, 1])
    assert rank == 3 and np.allclose(g, [3.0, -1.0])
    _, rank = fit_plane(np.column_stack([np.arange(4.0), np.arange(4.0)]), np.arange(4.0))
    assert rank < 3


def test_neighbours(bench_grid):
    assert len(lattice_neighbors(bench_grid, bench_grid.arm_at(0, 5, 5))) == 8
    assert len(lattice_neighbors(bench_grid, bench_grid.arm_at(0, 0, 0))) == 3


def test_gradient_ascent_linear_field():
    g, h = quiet_grid()
    xs = 0.05 + 0.1 * np.arange(90)
    field = field_from_grid(np.tile(xs + 1.0, (90, 1)), 0.1)  # f = x + 1
    start = g.arm_at(0, 1, 4)
    tr = run_episode(field, g, h, PlannerConfig(budget=40.0), np.random.default_rng(0), GradientAscent(0),
                     start_arm=start)
    lat = [g.arms[s.arm_id].lattice for s in tr.steps]
    assert all(iy == 4 for _, iy in lat)
    xs_visited = [ix for ix, _ in lat]
    assert xs_visited == sorted(xs_visited)
    assert xs_visited[-1] == 8  # pinned at the boundary once there


def test_gradient_ascent_unimodal_reaches_peak_cell():
    g, h = quiet_grid()
    field = ScalarField((9.0, 9.0), (Bump((6.3, 2.6), 10.0, 2.5),))
    for start in [(0, 8), (8, 8), (1, 0)]:
        tr = run_episode(field, g, h, PlannerConfig(budget=60.0), np.random.default_rng(0), GradientAscent(0),
                         start_arm=g.arm_at(0, *start))
        assert g.arms[tr.steps[-1].arm_id].lattice == (6, 2)


def test_gradient_ascent_constant_field_stays():
    g, h = quiet_grid()
    field = ScalarField((9.0, 9.0), (), baseline=3.0)
    start = g.arm_at(0, 4, 4)
    tr = run_episode(field, g, h, PlannerConfig(budget=20.0), np.random.default_rng(0),
                     GradientAscent(0, tol=1e-2), start_arm=start)
    assert {s.arm_id for s in tr.steps} == {start.id}


# -- variance reduction ---------------------------------------------------------------

def test_variance_reduction_matches_huge_beta(bench_grid, bench_hyper):
    field = generate_random_field(FieldConfig(seed=4))
    start = bench_grid.arm_at(0, 7, 12)
    vr = run_episode(field, bench_grid, bench_hyper, PlannerConfig(budget=60.0), np.random.default_rng(2),
                     VarianceReduction(), start_arm=start)
    cfg = PlannerConfig("cpv", None, BetaSchedule(1e9, 0.0), budget=60.0)
    ucb = run_episode(field, bench_grid, bench_hyper, cfg, np.random.default_rng(2), start_arm=start)
    assert [s.arm_id for s in vr.steps] == [s.arm_id for s in ucb.steps]
    assert len(vr.steps) > 3


def test_variance_reduction_prefers_widest_coverage_without_data(bench_grid, bench_hyper):
    state = EpisodeState(bench_grid, bench_hyper, PlannerConfig(), np.random.default_rng(0), bench_grid.arms[0])
    state.k = 2
    state.refresh_model()
    arm, _ = VarianceReduction().choose(state)
    ids = np.arange(len(bench_grid.arms))
    _, sig = arm_statistics(state.model, bench_grid, ids, "cpv", state.cache)
    assert sig[arm.id] == pytest.approx(sig.max())


def test_spread_reference(bench_grid, bench_hyper):
    rng = np.random.default_rng(0)
    state = EpisodeState(bench_grid, bench_hyper, PlannerConfig(), rng, bench_grid.arms[0])
    X = rng.uniform(0, 20, (30, 2))
    state.observe(type("B", (), {"pixel_locations": X, "values": rng.normal(size=30),
                                 "noise_variance": 0.75})(), 0)
    state.refresh_model()
    ids = [0, 57, 399, 400, 420, 425, 433]
    _, sig = arm_statistics(state.model, bench_grid, ids, "cpv", state.cache)
    assert np.allclose(sig, spread_scores(state.model, bench_grid, ids, state.cache), rtol=1e-9)


# -- mutual information ----------------------------------------------------------

def test_information_gains_non_negative_and_consistent(bench_grid, bench_hyper):
    rng = np.random.default_rng(1)
    state = EpisodeState(bench_grid, bench_hyper, PlannerConfig(), rng, bench_grid.arms[0])
    state.refresh_model()
    ids = np.arange(len(bench_grid.arms))
    g0 = information_gains(state.model, bench_grid, ids)
    assert np.all(g0 >= 0)
    X = rng.uniform(0, 20, (45, 2))
    state.observe(type("B", (), {"pixel_locations": X, "values": rng.normal(size=45),
                                 "noise_variance": 0.75})(), 0)
    state.refresh_model()
    g1 = information_gains(state.model, bench_grid, ids)
    assert np.all(g1 >= 0) and np.all(g1 <= g0 + 1e-9)

    class Dense:  # hides the incremental path so the covariance fallback is used
        def __init__(self, m):
            self.cov = m.cov
    ref = information_gains(Dense(state.model), bench_grid, [0, 400, 433], state.cache)
    assert np.allclose(g1[[0, 400, 433]], ref, rtol=1e-9)


def test_mutual_information_episode(bench_grid, bench_hyper):
    field = generate_random_field(FieldConfig(seed=5))
    # the first greedy pick is a top-level arm, so the budget must cover the climb
    tr = run_episode(field, bench_grid, bench_hyper, PlannerConfig(budget=150.0), np.random.default_rng(0),
                     MutualInformation())
    assert tr.images >= 2 and budget_total(tr) <= 150.0
    assert bench_grid.arms[tr.steps[1].arm_id].level == 2


# -- block UCL ---------------------------------------------------------------------

class _Counter:
    def __init__(self, grid):
        self.grid = grid
        self.calls = 0

    def choose(self, state):
        self.calls += 1
        return self.grid.arms[self.calls], 0.0


def test_block_switch_points(small_grid):
    b = BlockUCL(2.0)
    b._inner = _Counter(small_grid)
    state = type("S", (), {})()
    picks = []
    for k in range(1, 17):
        state.k = k
        picks.append(b.choose(state)[0].id)
    switches = [k for k in range(1, 16) if picks[k] != picks[k - 1]]
    assert switches == [1, 3, 7, 15]
    assert [b.block_length(i) for i in range(5)] == [1, 2, 4, 8, 16]
    one = BlockUCL(1.0)
    assert [one.block_length(i) for i in range(4)] == [1, 1, 1, 1]


def test_block_ucl_tight_budget(bench_grid, bench_hyper):
    field = generate_random_field(FieldConfig(seed=6))
    tr = run_episode(field, bench_grid, bench_hyper, PlannerConfig(budget=100.0), np.random.default_rng(0),
                     BlockUCL())
    assert len({s.arm_id for s in tr.steps}) <= 6
    assert budget_total(tr) <= 100.0


# -- config -------------------------------------------------------------------------

def test_baseline_config():
    assert isinstance(make_baseline(BaselineConfig("boustrophedon", 2)), Boustrophedon)
    assert isinstance(make_baseline(BaselineConfig("block_ucl")), BlockUCL)
    with pytest.raises(ValueError):
        BaselineConfig("gradient_ascent")
    with pytest.raises(ValueError):
        BaselineConfig("random_walk")
