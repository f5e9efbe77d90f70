"""Comparison strategies sharing the planner's ``choose(state) -> (arm, score)`` interface.

All of them run inside :func:`hotspot.planner.run_episode`, so they are
charged against the same budget ledger and report the hotspot the same way
(argmax of the posterior mean at termination).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gp import cpv_from_cov, mutual_information_gain
from .planner import DEFAULT_BETAS, MFGPUCB, EpisodeState, PlannerConfig, arm_statistics, pick_best
from .sensing import Arm, ArmGrid

MIN_ALIGNMENT = 0.5  # cos 60 deg

BASELINE_KINDS = ("boustrophedon", "gradient_ascent", "variance_reduction", "mutual_information", "block_ucl")


@dataclass(frozen=True)
class BaselineConfig:
    kind: str
    fixed_level: int | None = None
    growth: float = 2.0
    gradient_tol: float = 1e-6

    def __post_init__(self):
        if self.kind not in BASELINE_KINDS:
            raise ValueError(f"unknown baseline kind {self.kind!r}; expected one of {BASELINE_KINDS}")
        if self.kind in ("boustrophedon", "gradient_ascent") and self.fixed_level is None:
            raise ValueError(f"{self.kind} needs a fixed_level")
        if self.growth < 1:
            raise ValueError("block growth must be >= 1")


def serpentine_order(grid: ArmGrid, level: int) -> list[int]:
    """Arm ids of one level in boustrophedon order: rows along x, alternating direction."""
    nx, ny = grid.lattice_shapes[level]
    order = []
    for iy in range(ny):
        xs = range(nx) if iy % 2 == 0 else range(nx - 1, -1, -1)
        order.extend(grid.arm_at(level, ix, iy).id for ix in xs)
    return order


def lattice_neighbors(grid: ArmGrid, arm: Arm) -> list[Arm]:
    """The (up to) eight same-level lattice neighbours of ``arm``."""
    nx, ny = grid.lattice_shapes[arm.level]
    ix, iy = arm.lattice
    out = []
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if (dx or dy) and 0 <= ix + dx < nx and 0 <= iy + dy < ny:
                out.append(grid.arm_at(arm.level, ix + dx, iy + dy))
    return out


def fit_plane(points, values):
    """Least-squares ``v = c + g . x``; returns ``(g, rank)``."""
    pts = np.asarray(points, dtype=float)
    A = np.column_stack([np.ones(len(pts)), pts - pts.mean(axis=0)])
    coef, _, rank, _ = np.linalg.lstsq(A, np.asarray(values, dtype=float), rcond=None)
    return coef[1:], int(rank)


class Boustrophedon:
    """Fixed-altitude lawnmower sweep that ignores the measurements.

    Starts at lattice cell (0, 0) and sweeps rows; once the level is covered
    the sweep is retraced in reverse, so a large budget ping-pongs.
    """

    def __init__(self, level: int):
        self.level = level
        self._order: list[int] | None = None
        self._pos = 0
        self._dir = 1

    @property
    def name(self) -> str:
        return f"boustrophedon@{self.level}"

    def choose(self, state: EpisodeState):
        if self._order is None:
            self._order = serpentine_order(state.grid, self.level)
            self._pos, self._dir = 0, 1
        elif len(self._order) > 1:
            nxt = self._pos + self._dir
            if not 0 <= nxt < len(self._order):
                self._dir = -self._dir
                nxt = self._pos + self._dir
            self._pos = nxt
        return state.grid.arms[self._order[self._pos]], float("nan")


class GradientAscent:
    """Fixed-altitude hill climbing on a plane fitted to the latest image.

    The step goes to the same-level neighbour best aligned with the fitted
    gradient. The climber stays put when the gradient is below ``tol``, when
    no neighbour lies within 60 degrees of it (a boundary in the uphill
    direction), or when that neighbour was already imaged with a lower mean
    than the current arm, which stops it oscillating across a peak. A rank-deficient fit
    (collinear pixels) picks a random neighbour from ``state.rng``.
    """

    def __init__(self, level: int, tol: float = 1e-6):
        self.level = level
        self.tol = tol
        self._seen: dict[int, float] = {}

    @property
    def name(self) -> str:
        return f"gradient_ascent@{self.level}"

    def choose(self, state: EpisodeState):
        grid = state.grid
        if state.k == 1 or state.last_batch is None:
            self._seen = {}
            pool = [a.id for a in grid.arms_at(self.level)]
            return grid.nearest_arm(state.position, pool), float("nan")
        batch = state.last_batch
        cur = state.current
        self._seen[cur.id] = float(np.mean(batch.values))
        nbrs = lattice_neighbors(grid, cur)
        if not nbrs:
            return cur, 0.0
        g, rank = fit_plane(batch.pixel_locations, batch.values)
        if rank < 3:
            return nbrs[int(state.rng.integers(len(nbrs)))], float("nan")
        norm = float(np.linalg.norm(g))
        if norm < self.tol:
            return cur, norm
        steps = np.array([n.xy - cur.xy for n in nbrs])
        align = steps @ g / (np.linalg.norm(steps, axis=1) * norm)
        j = int(np.argmax(align))  # first maximum = lowest id among exact ties
        best = nbrs[j]
        if align[j] < MIN_ALIGNMENT or self._seen.get(best.id, math.inf) < self._seen[cur.id]:
            return cur, norm
        return best, norm


class VarianceReduction:
    """Pure exploration: the arm with the largest CPV spread, over the whole 3-D grid."""

    name = "variance_reduction"

    def choose(self, state: EpisodeState):
        grid = state.grid
        if state.k == 1:
            return grid.nearest_arm(state.position), float("nan")
        ids = np.arange(len(grid.arms))
        _, sig_bar = arm_statistics(state.model, grid, ids, "cpv", state.cache)
        aid = pick_best(sig_bar, ids, grid, state.position)
        return grid.arms[aid], float(sig_bar[aid])


def information_gains(model, grid: ArmGrid, arm_ids, cache=None) -> np.ndarray:
    """``0.5 log det(I + P_I / s)`` per arm, from the posterior covariance block at its test points."""
    ids = [int(a) for a in arm_ids]
    if hasattr(model, "block_information"):
        return model.block_information(ids)
    out = np.empty(len(ids))
    for j, aid in enumerate(ids):
        arm = grid.arms[aid]
        pb = None if cache is None else cache.block(aid)
        out[j] = mutual_information_gain(model.cov(arm.test_indices, pb), grid.noise_of(arm))
    return out


class MutualInformation:
    """Greedy information gain of each arm's image, over the whole 3-D grid."""

    name = "mutual_information"

    def choose(self, state: EpisodeState):
        grid = state.grid
        if state.k == 1:
            return grid.nearest_arm(state.position), float("nan")
        ids = np.arange(len(grid.arms))
        gain = information_gains(state.model, grid, ids, state.cache)
        aid = pick_best(gain, ids, grid, state.position)
        return grid.arms[aid], float(gain[aid])


class BlockUCL:
    """UCL arm selection held fixed over geometrically growing blocks.

    Block ``b`` lasts ``ceil(growth**b)`` images, so with growth 2 the arm is
    re-selected after 1, 3, 7, 15, ... images. The index is the planner's
    score (CPV spread, increasing schedule) over every arm.
    """

    name = "block_ucl"

    def __init__(self, growth: float = 2.0, config: PlannerConfig | None = None):
        self.growth = growth
        self.config = config or PlannerConfig("cpv", None, DEFAULT_BETAS[("cpv", "increasing")])
        self._inner = MFGPUCB(self.config)
        self._block = 0
        self._left = 0
        self._arm: Arm | None = None

    def block_length(self, b: int) -> int:
        return max(1, math.ceil(self.growth ** b - 1e-12))

    def choose(self, state: EpisodeState):
        if state.k == 1:
            self._block, self._left, self._arm = 0, 0, None
        if self._left == 0:
            self._arm, score = self._inner.choose(state)
            self._left = self.block_length(self._block)
            self._block += 1
        else:
            score = float("nan")
        self._left -= 1
        return self._arm, score


def make_baseline(config: BaselineConfig):
    if config.kind == "boustrophedon":
        return Boustrophedon(config.fixed_level)
    if config.kind == "gradient_ascent":
        return GradientAscent(config.fixed_level, config.gradient_tol)
    if config.kind == "variance_reduction":
        return VarianceReduction()
    if config.kind == "mutual_information":
        return MutualInformation()
    return BlockUCL(config.growth)


def spread_scores(model, grid: ArmGrid, arm_ids, cache=None) -> np.ndarray:
    """CPV spread per arm computed block by block; a slow reference for tests."""
    out = []
    for aid in arm_ids:
        arm = grid.arms[int(aid)]
        pb = None if cache is None else cache.block(int(aid))
        var = cpv_from_cov(model.cov(arm.test_indices, pb), grid.noise_of(arm))
        out.append(math.sqrt(float(var.sum())) / len(arm.test_indices))
    return np.array(out)
