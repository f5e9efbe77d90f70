"""Budgeted GP-UCB planning over the 3-D arm grid.

The episode loop in :func:`run_episode` is shared by every strategy: it
refreshes the GP, asks the strategy for the next arm, charges travel plus
sensing time against the budget and stops at the first move that would
overrun it. The reported hotspot is the test point with the largest
posterior mean.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from .field import ScalarField, evaluate, global_optimum
from .gp import (ArmPriors, ExactGP, Hyperparams, IncrementalGP, SparseGP, TrainingSet, cpv_from_cov,
                 select_inducing_points)
from .sensing import Arm, ArmGrid, take_image, travel_time

VARIANCE_MODES = ("current", "cpv")
TIE_RTOL = 1e-9


@dataclass(frozen=True)
class BetaSchedule:
    """Exploration weight ``gamma * exp(rate * k) + offset``."""

    gamma: float
    rate: float
    offset: float = 0.0

    def __post_init__(self):
        # exp is monotone, so the minimum over k >= 1 sits at k = 1 or k -> inf
        lo = min(self(1), self.limit)
        if lo < -1e-12:
            raise ValueError(f"beta schedule goes negative (min {lo:.4g})")

    def __call__(self, k) -> float:
        return self.gamma * math.exp(self.rate * k) + self.offset

    @property
    def limit(self) -> float:
        if self.rate < 0:
            return self.offset
        if self.rate == 0:
            return self.gamma + self.offset
        return math.copysign(math.inf, self.gamma) if self.gamma else self.offset

    @property
    def form(self) -> str:
        slope = self.gamma * self.rate
        return "increasing" if slope > 0 else "decreasing" if slope < 0 else "constant"


# schedules tuned offline for the 20 x 20 m benchmark (current vs CPV, decreasing vs increasing)
DEFAULT_BETAS = {
    ("current", "decreasing"): BetaSchedule(1.5, -0.05),
    ("cpv", "decreasing"): BetaSchedule(10.0, -0.05),
    ("current", "increasing"): BetaSchedule(-0.5, -0.05, 0.5),
    ("cpv", "increasing"): BetaSchedule(-10.0, -0.05, 10.0),
}


def beta(k, schedule: BetaSchedule) -> float:
    if k < 0:
        raise ValueError("step index must be non-negative")
    return schedule(k)


@dataclass(frozen=True)
class PlannerConfig:
    variance_mode: str = "cpv"
    window: int | None = 1
    beta: BetaSchedule = DEFAULT_BETAS[("cpv", "increasing")]
    inference: str | int = "exact"
    inducing_method: str = "lattice"
    sensing_time: float = 2.0
    budget: float = 100.0
    fixed_level: int | None = None

    def __post_init__(self):
        if self.variance_mode not in VARIANCE_MODES:
            raise ValueError(f"variance_mode must be one of {VARIANCE_MODES}")
        if self.budget <= 0:
            raise ValueError("budget must be positive")
        if self.sensing_time < 0:
            raise ValueError("sensing time must be non-negative")
        if self.window is not None and self.window < 0:
            raise ValueError("window radius must be >= 0")
        if self.inference != "exact" and not (isinstance(self.inference, int) and self.inference >= 1):
            raise ValueError("inference must be 'exact' or a positive inducing-point count")


@dataclass
class BudgetLedger:
    budget: float
    spent: float = 0.0

    def affordable(self, cost: float) -> bool:
        return self.spent + cost <= self.budget

    def charge(self, cost: float):
        if cost < 0:
            raise ValueError("negative cost")
        if not self.affordable(cost):
            raise ValueError("charge would exceed the budget")
        self.spent += cost

    @property
    def remaining(self) -> float:
        return self.budget - self.spent


@dataclass
class StepRecord:
    k: int
    arm_id: int
    beta: float
    score: float
    travel: float
    spent: float
    gp_time: float


@dataclass
class EpisodeTrace:
    start_arm: int
    budget: float
    sensing_time: float
    visited: list = dc_field(default_factory=list)
    steps: list = dc_field(default_factory=list)
    images: int = 0
    measurements: int = 0
    x_alg: np.ndarray | None = None
    alg_arm: int | None = None
    point_metric: float = float("nan")
    arm_metric: float = float("nan")
    wall_time: float = 0.0
    gp_times: list = dc_field(default_factory=list)

    @property
    def spent(self) -> float:
        return self.steps[-1].spent if self.steps else 0.0

    def step_log(self) -> list[dict]:
        return [vars(s).copy() for s in self.steps]


class ArmCache(ArmPriors):
    """Prior blocks ``K(x*_I, x*_I)`` and their noisy inverses for every arm of a grid.

    Depends only on the grid and hyperparameters, so one cache can serve
    many episodes.
    """

    def __init__(self, grid: ArmGrid, hyper: Hyperparams):
        super().__init__(grid.test_points, hyper, [a.test_indices for a in grid.arms],
                         [grid.noise_of(a) for a in grid.arms])
        self.grid = grid

    def block(self, arm_id: int) -> np.ndarray:
        return self.K(arm_id)


class EpisodeState:
    """What a strategy may look at when choosing the next arm."""

    def __init__(self, grid, hyper, config, rng, start_arm, cache=None):
        self.grid = grid
        self.hyper = hyper
        self.config = config
        self.rng = rng
        self.start_arm = start_arm
        self.current: Arm = start_arm
        self.position = np.asarray(start_arm.position, dtype=float)
        self.train = TrainingSet.empty()
        self.history: list[int] = []
        self.last_batch = None
        self.k = 1
        if cache is None or cache.hyper != hyper or cache.grid is not grid:
            cache = ArmCache(grid, hyper)
        self.cache = cache
        self.model = None
        self._sparse_cache: dict = {}
        self._inducing = None
        self._exact = IncrementalGP(hyper, grid.test_points, cache) if config.inference == "exact" else None

    def observe(self, batch, level):
        self.train = self.train.append(batch.pixel_locations, batch.values, batch.noise_variance, level)
        if self._exact is not None:
            self._exact.add(batch.pixel_locations, batch.values, batch.noise_variance)

    def refresh_model(self):
        cfg = self.config
        if cfg.inference == "exact":
            self.model = self._exact
            return self.model
        if cfg.inducing_method == "data":
            Z = self.train.X if len(self.train) else self.grid.test_points[:1]
            self.model = SparseGP(self.train, self.hyper, self.grid.test_points, Z)
            return self.model
        if self._inducing is None:
            src = (self.grid.origin, self.grid.extent)
            if cfg.inducing_method == "kmeans":
                src = self.grid.test_points
            self._inducing = select_inducing_points(src, cfg.inference, cfg.inducing_method)
        self.model = SparseGP(self.train, self.hyper, self.grid.test_points, self._inducing,
                              cache=self._sparse_cache)
        return self.model


# -- scoring -----------------------------------------------------------------

def arm_statistics(model, grid: ArmGrid, arm_ids, variance_mode: str, cache: ArmCache | None = None):
    """Average posterior mean and the ``sqrt(sum var) / L`` spread for each arm.

    Arms with equally sized index sets at the same level are processed as one
    stacked batch.
    """
    if variance_mode not in VARIANCE_MODES:
        raise ValueError(f"unknown variance mode {variance_mode!r}")
    ids = np.asarray(list(arm_ids), dtype=int)
    mu_bar = np.empty(len(ids))
    sig_bar = np.empty(len(ids))
    mean = model.mean()
    groups: dict[tuple[int, int], list[int]] = {}
    for j, aid in enumerate(ids):
        arm = grid.arms[aid]
        groups.setdefault((len(arm.test_indices), arm.level), []).append(j)
    for (L, level), rows in groups.items():
        rows = np.asarray(rows)
        I = np.stack([grid.arms[ids[r]].test_indices for r in rows])
        mu_bar[rows] = mean[I].sum(axis=1) / L
        if variance_mode == "current":
            var = model.variance(I.ravel()).reshape(I.shape)
        elif hasattr(model, "block_cpv"):
            var = np.stack(model.block_cpv([int(ids[r]) for r in rows]))
        else:
            pb = None if cache is None else np.stack([cache.block(ids[r]) for r in rows])
            P = model.cov_stack(I, pb)
            s2 = grid.levels[level].noise_variance
            var = cpv_from_cov(P[0], s2)[None] if len(rows) == 1 else cpv_from_cov(P, s2)
        sig_bar[rows] = np.sqrt(var.sum(axis=1)) / L
    return mu_bar, sig_bar


def arm_scores(train: TrainingSet, grid: ArmGrid, hyper: Hyperparams, config: PlannerConfig, k: int,
               candidates=None, model=None, cache=None):
    """Per-arm ``(mu_bar, sigma_bar, score)`` with ``score = mu_bar + beta(k) * sigma_bar``."""
    ids = np.arange(len(grid.arms)) if candidates is None else np.asarray(list(candidates), dtype=int)
    if model is None:
        model = ExactGP(train, hyper, grid.test_points)
    mu_bar, sig_bar = arm_statistics(model, grid, ids, config.variance_mode, cache)
    return mu_bar, sig_bar, mu_bar + beta(k, config.beta) * sig_bar


def pick_best(values, arm_ids, grid: ArmGrid, position) -> int:
    """Arm id with the largest value; near-ties go to the shortest trip, then the lowest id."""
    values = np.asarray(values, dtype=float)
    ids = np.asarray(list(arm_ids), dtype=int)
    best = float(np.max(values))
    tied = values >= best - TIE_RTOL * abs(best)
    cand = ids[tied]
    d = np.linalg.norm(grid.positions[cand] - np.asarray(position, dtype=float), axis=1)
    order = np.lexsort((cand, d))
    return int(cand[order[0]])


def candidate_arms(grid: ArmGrid, current: Arm, window: int | None, levels=None) -> np.ndarray:
    """Arms reachable from ``current`` under a dynamic window of radius ``window``.

    Same level: within ``window`` lattice steps on both axes. Adjacent levels:
    arms whose nadir lies within the current footprint grown by ``window``
    lattice steps. ``None`` disables the window.
    """
    ids = np.arange(len(grid.arms))
    lv = grid.arm_levels
    if window is None:
        keep = np.ones(len(ids), dtype=bool)
    else:
        lat = np.array([a.lattice for a in grid.arms])
        same = (lv == current.level) & np.all(np.abs(lat - current.lattice) <= window, axis=1)
        half = (window + 0.5) * grid.levels[current.level].footprint_side
        near = np.all(np.abs(grid.positions[:, :2] - current.xy) <= half + 1e-9, axis=1)
        adjacent = (np.abs(lv - current.level) == 1) & near
        keep = same | adjacent
    if levels is not None:
        keep &= np.isin(lv, list(levels))
        keep[current.id] = keep[current.id] or current.level in levels
    out = ids[keep]
    return out if len(out) else np.array([current.id])


class MFGPUCB:
    """Multi-fidelity GP-UCB with current-variance or CPV spreads."""

    def __init__(self, config: PlannerConfig):
        self.config = config

    @property
    def name(self) -> str:
        c = self.config
        tag = ("D" if c.window is not None else "") + ("CPV" if c.variance_mode == "cpv" else "CV")
        return f"{tag}({'b++' if c.beta.form == 'increasing' else 'b--'})"

    def allowed_levels(self, grid):
        return None if self.config.fixed_level is None else (self.config.fixed_level,)

    def choose(self, state: EpisodeState):
        grid = state.grid
        levels = self.allowed_levels(grid)
        if state.k == 1:
            pool = None if levels is None else [a.id for a in grid.arms if a.level in levels]
            return grid.nearest_arm(state.position, pool), float("nan")
        cands = candidate_arms(grid, state.current, self.config.window, levels)
        _, _, score = arm_scores(state.train, grid, state.hyper, self.config, state.k,
                                 cands, state.model, state.cache)
        aid = pick_best(score, cands, grid, state.position)
        return grid.arms[aid], float(score[np.flatnonzero(cands == aid)[0]])


# -- metrics -----------------------------------------------------------------

def point_metric(field: ScalarField, x_alg, f_opt: float | None = None) -> float:
    if f_opt is None:
        f_opt = global_optimum(field)[1]
    if f_opt <= 0:
        raise ValueError("field optimum must be positive")
    return 100.0 * float(evaluate(field, np.asarray(x_alg, dtype=float))) / f_opt


def true_arm_sums(field: ScalarField, grid: ArmGrid) -> np.ndarray:
    truth = np.asarray(evaluate(field, grid.test_points))
    return np.array([truth[a.test_indices].sum() for a in grid.arms])


def arm_metric(field: ScalarField, grid: ArmGrid, chosen_arm, sums=None) -> float:
    sums = true_arm_sums(field, grid) if sums is None else sums
    aid = chosen_arm.id if isinstance(chosen_arm, Arm) else int(chosen_arm)
    best = float(np.max(sums))
    if best <= 0:
        raise ValueError("field optimum must be positive")
    return 100.0 * float(sums[aid]) / best


# -- episode -----------------------------------------------------------------

def default_start(grid: ArmGrid, rng: np.random.Generator) -> Arm:
    """Uniformly random arm at the lowest altitude."""
    low = grid.arms_at(0)
    return low[int(rng.integers(len(low)))]


def run_episode(field: ScalarField, grid: ArmGrid, hyper: Hyperparams, config: PlannerConfig,
                rng: np.random.Generator, strategy=None, start_arm: Arm | int | None = None,
                optimum=None, cache: ArmCache | None = None, step_hook=None) -> EpisodeTrace:
    """Run one budgeted episode and score the reported hotspot.

    ``rng`` drives measurement noise (and any strategy randomness). The
    start arm defaults to a random lowest-altitude arm drawn from ``rng``.
    ``optimum`` may carry a precomputed ``(x_opt, f_opt)``. ``step_hook`` is
    called as ``hook(k, state)`` after each model refresh (debug dumps).
    """
    strategy = strategy or MFGPUCB(config)
    if start_arm is None:
        start_arm = default_start(grid, rng)
    elif not isinstance(start_arm, Arm):
        start_arm = grid.arms[int(start_arm)]
    state = EpisodeState(grid, hyper, config, rng, start_arm, cache)
    ledger = BudgetLedger(config.budget)
    trace = EpisodeTrace(start_arm.id, config.budget, config.sensing_time)

    while True:
        t0 = time.perf_counter()
        state.refresh_model()
        if step_hook is not None:
            step_hook(state.k, state)
        arm, score = strategy.choose(state)
        gp_time = time.perf_counter() - t0
        trace.gp_times.append(gp_time)
        trace.wall_time += gp_time
        move = travel_time(state.position, arm.position)
        cost = move + config.sensing_time
        if not ledger.affordable(cost):
            break
        if cost <= 0:
            # a free repeat (T_S = 0, same arm) would never exhaust the budget
            break
        ledger.charge(cost)
        batch = take_image(field, arm, grid, rng)
        state.observe(batch, arm.level)
        state.history.append(arm.id)
        state.current = arm
        state.position = np.asarray(arm.position, dtype=float)
        state.last_batch = batch
        b = beta(state.k, config.beta) if hasattr(strategy, "config") else float("nan")
        trace.visited.append((arm.id, ledger.spent))
        trace.steps.append(StepRecord(state.k, arm.id, b, score, move, ledger.spent, gp_time))
        state.k += 1

    trace.images = len(trace.visited)
    trace.measurements = len(state.train)
    finish(trace, field, grid, state, optimum)
    return trace


def finish(trace: EpisodeTrace, field: ScalarField, grid: ArmGrid, state: EpisodeState, optimum=None):
    model = state.model
    mean = model.mean()
    li = int(np.argmax(mean))
    trace.x_alg = grid.test_points[li].copy()
    sums = np.array([mean[a.test_indices].sum() for a in grid.arms])
    trace.alg_arm = int(np.argmax(sums))
    f_opt = global_optimum(field)[1] if optimum is None else optimum[1]
    trace.point_metric = point_metric(field, trace.x_alg, f_opt)
    trace.arm_metric = arm_metric(field, grid, trace.alg_arm)
    return trace


def with_budget(config: PlannerConfig, budget: float) -> PlannerConfig:
    return replace(config, budget=budget)
